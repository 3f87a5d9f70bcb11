"""Tri-stream multimodal VAE for paired 2D images and 1D signals.

Per-modality convolutional encoders and decoders share a latent space
through product-of-experts fusion of diagonal Gaussians; pre-training
optimizes three evidence bounds (image-only, signal-only, joint) so the
frozen encoders can later be fine-tuned on either or both modalities.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DataError, FormatError, NumericError, ShapeError,
                     TriStreamError)
from .gaussian import DiagonalGaussian, kl_standard_normal, poe_fuse, reparameterize
from .layers import LayerSpec, conv_out_len, forward, gradient_check, tconv_out_len
from .losses import (LossBreakdown, ObjectiveConfig, bce_loss, beta_at,
                     recon_loglik_cxr, recon_loglik_ecg, stream_loss_cxr,
                     stream_loss_ecg, stream_loss_joint, total_loss)
from .metrics import (GaussianStats, accuracy, auroc, frechet_distance,
                      gaussian_stats, welch_t_test)
from .network import (ARCH_PRESETS, DESK_ARCH, FULL_ARCH, ArchConfig, Network,
                      init_params)
from .attribution import AttributionMap, integrated_gradients
from .datasets import PairedSample, load_dataset, pair_by_key, save_dataset
from .optim import OptimState, adam_step, init_optim
from .synth import SynthConfig, synth_generate
from .tensorio import read_checkpoint, read_tensor, write_checkpoint, write_tensor
from .train import (FoldResult, RunConfig, cross_validate, finetune,
                    grid_search_lambda, pretrain)

__all__ = [
    "__version__",
    "TriStreamError", "ShapeError", "NumericError", "FormatError", "ConfigError",
    "DataError",
    "DiagonalGaussian", "poe_fuse", "kl_standard_normal", "reparameterize",
    "LayerSpec", "conv_out_len", "tconv_out_len", "forward", "gradient_check",
    "LossBreakdown", "ObjectiveConfig", "beta_at", "bce_loss", "recon_loglik_cxr",
    "recon_loglik_ecg", "stream_loss_cxr", "stream_loss_ecg", "stream_loss_joint",
    "total_loss",
    "GaussianStats", "auroc", "accuracy", "gaussian_stats", "frechet_distance",
    "welch_t_test",
    "ArchConfig", "Network", "init_params", "ARCH_PRESETS", "DESK_ARCH", "FULL_ARCH",
    "AttributionMap", "integrated_gradients",
    "PairedSample", "save_dataset", "load_dataset", "pair_by_key",
    "OptimState", "init_optim", "adam_step",
    "SynthConfig", "synth_generate",
    "read_tensor", "write_tensor", "read_checkpoint", "write_checkpoint",
    "RunConfig", "FoldResult", "pretrain", "finetune", "cross_validate",
    "grid_search_lambda",
]
