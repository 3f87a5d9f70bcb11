"""The two-branch VAE network: paired image/signal encoders and decoders
joined through the product-of-experts latent, plus the classification head
used for fine-tuning.

Parameters live in a flat name -> array map (float32 on disk; cast to
float64 for gradient verification). All batched internals run
channels-first; the public per-sample operations accept the on-disk
layouts: images ``(H, W, C)`` in [0, 1] and signals ``(1, L)``.
"""

from dataclasses import dataclass

import numpy as np

from . import gaussian, layers
from .errors import ConfigError, DataError, NumericError, ShapeError

KERNEL = 3
STRIDE = 2
PAD = 1

MODALITY_MODES = ("cxr", "ecg", "joint")


def _conv_chain(extent: int, depth: int = 3):
    dims = []
    cur = extent
    for _ in range(depth):
        cur = layers.conv_out_len(cur, KERNEL, STRIDE, PAD)
        dims.append(cur)
    return dims


@dataclass(frozen=True)
class ArchConfig:
    image_h: int = 64
    image_w: int = 64
    image_c: int = 1
    signal_len: int = 4096
    channels: tuple = (16, 32, 64)
    latent_dim: int = 16
    head_hidden: int = 128
    head_dropout: float = 0.5

    def __post_init__(self):
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ConfigError("channels must be three positive ints")
        if self.latent_dim < 1 or self.head_hidden < 1:
            raise ConfigError("latent_dim and head_hidden must be positive")
        if not 0.0 <= self.head_dropout < 1.0:
            raise ConfigError("head_dropout must lie in [0, 1)")
        if self.image_c < 1:
            raise ConfigError("image_c must be positive")
        try:
            self.image_h_chain()
            self.image_w_chain()
            self.signal_chain()
        except ShapeError as exc:
            raise ConfigError(f"architecture does not survive three stride-2 "
                              f"convolutions: {exc}") from exc

    def image_h_chain(self):
        return _conv_chain(self.image_h)

    def image_w_chain(self):
        return _conv_chain(self.image_w)

    def signal_chain(self):
        return _conv_chain(self.signal_len)

    def image_flat(self) -> int:
        return self.channels[2] * self.image_h_chain()[-1] * self.image_w_chain()[-1]

    def signal_flat(self) -> int:
        return self.channels[2] * self.signal_chain()[-1]


DESK_ARCH = ArchConfig()
FULL_ARCH = ArchConfig(image_h=224, image_w=224, image_c=1, signal_len=60000,
                       latent_dim=64)
ARCH_PRESETS = {"desk": DESK_ARCH, "paper": FULL_ARCH}


def _tconv_output_padding(target: int) -> int:
    # restores `target` from conv_out_len(target) with the fixed k3/s2/p1 geometry
    smaller = layers.conv_out_len(target, KERNEL, STRIDE, PAD)
    op = target - ((smaller - 1) * STRIDE - 2 * PAD + KERNEL)
    if not 0 <= op < STRIDE:
        raise ConfigError(f"extent {target} is not invertible by a stride-{STRIDE} "
                          f"transposed convolution")
    return op


def encoder_conv_specs(arch: ArchConfig, modality: str):
    kind = "conv2d" if modality == "cxr" else "conv1d"
    cin = arch.image_c if modality == "cxr" else 1
    chain = (cin,) + tuple(arch.channels)
    return [
        layers.LayerSpec(kind, chain[i], chain[i + 1], kernel=KERNEL, stride=STRIDE,
                         padding=PAD, activation="relu")
        for i in range(3)
    ]


def decoder_tconv_specs(arch: ArchConfig, modality: str):
    if modality == "cxr":
        kind = "tconv2d"
        cout = arch.image_c
        # height/width share k3 s2 p1, so the per-layer output_padding must
        # agree across axes; mixed-parity extents are rejected below
        ops = [_tconv_output_padding(t) for t in
               [arch.image_h_chain()[1], arch.image_h_chain()[0], arch.image_h]]
        ops_w = [_tconv_output_padding(t) for t in
                 [arch.image_w_chain()[1], arch.image_w_chain()[0], arch.image_w]]
        if ops != ops_w:
            raise ConfigError("image height and width need different output_padding; "
                              "use extents with matching parity")
        last_act = "sigmoid"
    else:
        kind = "tconv1d"
        cout = 1
        chain = arch.signal_chain()
        ops = [_tconv_output_padding(t) for t in [chain[1], chain[0], arch.signal_len]]
        last_act = "none"
    c1, c2, c3 = arch.channels
    return [
        layers.LayerSpec(kind, c3, c2, kernel=KERNEL, stride=STRIDE, padding=PAD,
                         activation="relu", output_padding=ops[0]),
        layers.LayerSpec(kind, c2, c1, kernel=KERNEL, stride=STRIDE, padding=PAD,
                         activation="relu", output_padding=ops[1]),
        layers.LayerSpec(kind, c1, cout, kernel=KERNEL, stride=STRIDE, padding=PAD,
                         activation=last_act, output_padding=ops[2]),
    ]


def param_specs(arch: ArchConfig):
    """Canonical (name -> (shape, fan_in)) map covering every tensor."""
    out = {}

    def add(name, shape, fan_in):
        out[name] = (tuple(shape), fan_in)

    for modality in ("cxr", "ecg"):
        enc = f"{modality}_encoder"
        specs = encoder_conv_specs(arch, modality)
        for i, s in enumerate(specs):
            fan = s.in_channels * s.kernel ** (2 if s.kind == "conv2d" else 1)
            add(f"{enc}.conv{i + 1}.weight", s.weight_shape(), fan)
            add(f"{enc}.conv{i + 1}.bias", s.bias_shape(), fan)
        flat = arch.image_flat() if modality == "cxr" else arch.signal_flat()
        for head in ("fc_mu", "fc_logvar"):
            add(f"{enc}.{head}.weight", (arch.latent_dim, flat), flat)
            add(f"{enc}.{head}.bias", (arch.latent_dim,), flat)

        dec = f"{modality}_decoder"
        add(f"{dec}.fc.weight", (flat, arch.latent_dim), arch.latent_dim)
        add(f"{dec}.fc.bias", (flat,), arch.latent_dim)
        for i, s in enumerate(decoder_tconv_specs(arch, modality)):
            fan = s.in_channels * s.kernel ** (2 if s.kind == "tconv2d" else 1)
            add(f"{dec}.tconv{i + 1}.weight", s.weight_shape(), fan)
            add(f"{dec}.tconv{i + 1}.bias", s.bias_shape(), fan)

    add("head.fc1.weight", (arch.head_hidden, arch.latent_dim), arch.latent_dim)
    add("head.fc1.bias", (arch.head_hidden,), arch.latent_dim)
    add("head.fc2.weight", (1, arch.head_hidden), arch.head_hidden)
    add("head.fc2.bias", (1,), arch.head_hidden)
    return out


HEAD_NAMES = ("head.fc1.weight", "head.fc1.bias", "head.fc2.weight", "head.fc2.bias")


def init_params(arch: ArchConfig, seed: int):
    """Deterministic fan-in-scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in) in param_specs(arch).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            params[name] = layers.he_uniform(rng, shape, fan_in)
    return params


def init_head_params(arch: ArchConfig, seed: int):
    rng = np.random.default_rng(seed)
    full = param_specs(arch)
    out = {}
    for name in HEAD_NAMES:
        shape, fan_in = full[name]
        if name.endswith(".bias"):
            out[name] = np.zeros(shape, dtype=np.float32)
        else:
            out[name] = layers.he_uniform(rng, shape, fan_in)
    return out


def validate_params(arch: ArchConfig, params):
    spec = param_specs(arch)
    for name, (shape, _) in spec.items():
        if name not in params:
            raise ShapeError(f"missing parameter tensor {name!r}")
        if tuple(params[name].shape) != shape:
            raise ShapeError(
                f"parameter {name!r}: expected shape {shape}, got {tuple(params[name].shape)}"
            )
        if not np.all(np.isfinite(params[name])):
            raise NumericError(f"parameter {name!r} contains NaN or Inf")
    for name in params:
        if name not in spec:
            raise ShapeError(f"unexpected parameter tensor {name!r}")


def make_dropout_mask(rng: np.random.Generator, shape, rate: float, dtype=np.float32):
    """Inverted-dropout mask: entries are 0 or 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape, dtype=dtype)
    keep = 1.0 - rate
    return ((rng.random(shape) >= rate) / keep).astype(dtype)


def zero_grads(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


class Network:
    """Bundles an architecture with its parameter tensors.

    Forward passes never mutate parameters, so one instance can serve
    concurrent readers; training code mutates ``params`` between passes.
    """

    def __init__(self, arch: ArchConfig, params, validate: bool = True):
        if validate:
            validate_params(arch, params)
        self.arch = arch
        self.params = params
        self._enc_specs = {m: encoder_conv_specs(arch, m) for m in ("cxr", "ecg")}
        self._dec_specs = {m: decoder_tconv_specs(arch, m) for m in ("cxr", "ecg")}

    @property
    def dtype(self):
        return self.params["head.fc1.weight"].dtype

    @classmethod
    def initialized(cls, arch: ArchConfig, seed: int) -> "Network":
        return cls(arch, init_params(arch, seed), validate=False)

    def astype(self, dtype) -> "Network":
        return Network(self.arch, {k: v.astype(dtype) for k, v in self.params.items()},
                       validate=False)

    def with_head(self, head_params) -> "Network":
        """Same encoders/decoders with replacement head tensors."""
        spec = param_specs(self.arch)
        params = dict(self.params)
        for name in HEAD_NAMES:
            if name not in head_params:
                raise ShapeError(f"head checkpoint missing tensor {name!r}")
            if tuple(head_params[name].shape) != spec[name][0]:
                raise ShapeError(f"head tensor {name!r} has shape "
                                 f"{tuple(head_params[name].shape)}, expected {spec[name][0]}")
            params[name] = head_params[name]
        return Network(self.arch, params, validate=False)

    # ---- batched internals (channels-first) -------------------------------

    def enc_forward(self, modality, x):
        p = self.params
        pre = f"{modality}_encoder"
        acts = [x]
        h = x
        for i, spec in enumerate(self._enc_specs[modality]):
            h = layers.forward_batch(spec, p[f"{pre}.conv{i + 1}.weight"],
                                     p[f"{pre}.conv{i + 1}.bias"], h)
            acts.append(h)
        flat = h.reshape(h.shape[0], -1)
        mu = flat @ p[f"{pre}.fc_mu.weight"].T + p[f"{pre}.fc_mu.bias"]
        log_var = flat @ p[f"{pre}.fc_logvar.weight"].T + p[f"{pre}.fc_logvar.bias"]
        return mu, log_var, (acts, flat)

    def enc_backward(self, modality, cache, d_mu, d_log_var, grads):
        p = self.params
        pre = f"{modality}_encoder"
        acts, flat = cache
        grads[f"{pre}.fc_mu.weight"] += d_mu.T @ flat
        grads[f"{pre}.fc_mu.bias"] += d_mu.sum(axis=0)
        grads[f"{pre}.fc_logvar.weight"] += d_log_var.T @ flat
        grads[f"{pre}.fc_logvar.bias"] += d_log_var.sum(axis=0)
        d_flat = d_mu @ p[f"{pre}.fc_mu.weight"] + d_log_var @ p[f"{pre}.fc_logvar.weight"]
        dh = d_flat.reshape(acts[-1].shape)
        for i in reversed(range(3)):
            spec = self._enc_specs[modality][i]
            w_name = f"{pre}.conv{i + 1}.weight"
            gx, gw, gb = layers.backward_batch(spec, p[w_name], acts[i], acts[i + 1], dh)
            grads[w_name] += gw
            grads[f"{pre}.conv{i + 1}.bias"] += gb
            dh = gx
        return dh

    def _dec_shape3(self, modality):
        c3 = self.arch.channels[2]
        if modality == "cxr":
            return (c3, self.arch.image_h_chain()[-1], self.arch.image_w_chain()[-1])
        return (c3, self.arch.signal_chain()[-1])

    def dec_forward(self, modality, z):
        p = self.params
        pre = f"{modality}_decoder"
        flat_act = layers.relu(z @ p[f"{pre}.fc.weight"].T + p[f"{pre}.fc.bias"])
        h = flat_act.reshape((z.shape[0],) + self._dec_shape3(modality))
        acts = [h]
        for i, spec in enumerate(self._dec_specs[modality]):
            h = layers.forward_batch(spec, p[f"{pre}.tconv{i + 1}.weight"],
                                     p[f"{pre}.tconv{i + 1}.bias"], h)
            acts.append(h)
        return h, (z, flat_act, acts)

    def dec_backward(self, modality, cache, d_out, grads):
        p = self.params
        pre = f"{modality}_decoder"
        z, flat_act, acts = cache
        dh = d_out
        for i in reversed(range(3)):
            spec = self._dec_specs[modality][i]
            w_name = f"{pre}.tconv{i + 1}.weight"
            gx, gw, gb = layers.backward_batch(spec, p[w_name], acts[i], acts[i + 1], dh)
            grads[w_name] += gw
            grads[f"{pre}.tconv{i + 1}.bias"] += gb
            dh = gx
        d_flat = dh.reshape(z.shape[0], -1) * (flat_act > 0)
        grads[f"{pre}.fc.weight"] += d_flat.T @ z
        grads[f"{pre}.fc.bias"] += d_flat.sum(axis=0)
        return d_flat @ p[f"{pre}.fc.weight"]

    def head_forward(self, feats, dropout_mask=None):
        p = self.params
        h1 = layers.relu(feats @ p["head.fc1.weight"].T + p["head.fc1.bias"])
        hd = h1 if dropout_mask is None else h1 * dropout_mask
        logits = hd @ p["head.fc2.weight"].T + p["head.fc2.bias"]
        return logits[:, 0], (feats, h1, hd, dropout_mask)

    def head_backward(self, cache, d_logits, grads):
        p = self.params
        feats, h1, hd, mask = cache
        d2 = d_logits[:, None]
        grads["head.fc2.weight"] += d2.T @ hd
        grads["head.fc2.bias"] += d2.sum(axis=0)
        d_hd = d2 @ p["head.fc2.weight"]
        if mask is not None:
            d_hd = d_hd * mask
        d_h1 = d_hd * (h1 > 0)
        grads["head.fc1.weight"] += d_h1.T @ feats
        grads["head.fc1.bias"] += d_h1.sum(axis=0)
        return d_h1 @ p["head.fc1.weight"]

    # ---- batched channels-last entry points --------------------------------

    def images_to_cf(self, images):
        arr = np.asarray(images, dtype=self.dtype)
        return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))

    def images_from_cf(self, x):
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def encode_images(self, images_cf):
        mu, lv, _ = self.enc_forward("cxr", images_cf)
        return mu, lv

    def encode_signals(self, signals_cf):
        mu, lv, _ = self.enc_forward("ecg", signals_cf)
        return mu, lv

    # ---- per-sample contract surface ---------------------------------------

    def _check_image(self, image):
        arr = np.asarray(image)
        want = (self.arch.image_h, self.arch.image_w, self.arch.image_c)
        if arr.shape != want:
            raise ShapeError(f"image shape {arr.shape} != {want}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("image contains NaN or Inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("image pixels must lie in [0, 1]")
        return arr

    def _check_signal(self, signal):
        arr = np.asarray(signal)
        want = (1, self.arch.signal_len)
        if arr.shape != want:
            raise ShapeError(f"signal shape {arr.shape} != {want}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("signal contains NaN or Inf")
        return arr

    def encode_cxr(self, image) -> gaussian.DiagonalGaussian:
        arr = self._check_image(image)
        x = self.images_to_cf(arr[None])
        mu, lv, _ = self.enc_forward("cxr", x)
        return gaussian.DiagonalGaussian(mu[0], lv[0])

    def encode_ecg(self, signal) -> gaussian.DiagonalGaussian:
        arr = self._check_signal(signal)
        x = np.ascontiguousarray(arr[None].astype(self.dtype))
        mu, lv, _ = self.enc_forward("ecg", x)
        return gaussian.DiagonalGaussian(mu[0], lv[0])

    def decode_cxr(self, z):
        z = self._check_latent(z)
        out, _ = self.dec_forward("cxr", z[None])
        return self.images_from_cf(out)[0]

    def decode_ecg(self, z):
        z = self._check_latent(z)
        out, _ = self.dec_forward("ecg", z[None])
        return out[0]

    def _check_latent(self, z):
        z = np.asarray(z, dtype=self.dtype)
        if z.shape != (self.arch.latent_dim,):
            raise ShapeError(f"latent shape {z.shape} != ({self.arch.latent_dim},)")
        return z

    def classify(self, features, train_mode: bool = False, dropout_rng=None):
        """Head logit(s) for feature vector(s); eval mode is deterministic."""
        feats = np.asarray(features, dtype=self.dtype)
        single = feats.ndim == 1
        if single:
            feats = feats[None]
        if feats.shape[1] != self.arch.latent_dim:
            raise ShapeError(f"feature length {feats.shape[1]} != latent dim "
                             f"{self.arch.latent_dim}")
        mask = None
        if train_mode:
            if dropout_rng is None:
                raise ConfigError("train_mode classification needs dropout_rng")
            mask = make_dropout_mask(dropout_rng, (feats.shape[0], self.arch.head_hidden),
                                     self.arch.head_dropout, dtype=self.dtype)
        logits, _ = self.head_forward(feats, mask)
        return float(logits[0]) if single else logits

    def extract_features(self, samples, mode: str, batch_size: int = 128):
        """Fused or unimodal posterior means for a list of paired samples.

        ``joint`` fuses whichever experts a sample carries with the prior;
        ``cxr``/``ecg`` return that encoder's posterior mean and require
        the modality.
        """
        if mode not in MODALITY_MODES:
            raise ConfigError(f"unknown modality mode {mode!r}")
        n = len(samples)
        feats = np.zeros((n, self.arch.latent_dim), dtype=self.dtype)
        for lo in range(0, n, batch_size):
            chunk = samples[lo:lo + batch_size]
            feats[lo:lo + len(chunk)] = self._features_chunk(chunk, mode)
        return feats

    def _features_chunk(self, chunk, mode):
        need_img = mode in ("cxr", "joint")
        need_sig = mode in ("ecg", "joint")
        img_idx = [i for i, s in enumerate(chunk) if s.image is not None]
        sig_idx = [i for i, s in enumerate(chunk) if s.signal is not None]
        if mode == "cxr" and len(img_idx) != len(chunk):
            missing = [chunk[i].id for i in range(len(chunk)) if chunk[i].image is None]
            raise DataError(f"samples missing image modality: {missing[:5]}")
        if mode == "ecg" and len(sig_idx) != len(chunk):
            missing = [chunk[i].id for i in range(len(chunk)) if chunk[i].signal is None]
            raise DataError(f"samples missing signal modality: {missing[:5]}")

        mu_img = lv_img = mu_sig = lv_sig = None
        if need_img and img_idx:
            stack = np.stack([chunk[i].image for i in img_idx])
            mu_img, lv_img = self.encode_images(self.images_to_cf(stack))
        if need_sig and sig_idx:
            stack = np.stack([chunk[i].signal for i in sig_idx]).astype(self.dtype)
            mu_sig, lv_sig = self.encode_signals(np.ascontiguousarray(stack))

        if mode == "cxr":
            return mu_img
        if mode == "ecg":
            return mu_sig

        img_pos = {i: k for k, i in enumerate(img_idx)}
        sig_pos = {i: k for k, i in enumerate(sig_idx)}
        out = np.zeros((len(chunk), self.arch.latent_dim), dtype=self.dtype)
        for i, s in enumerate(chunk):
            mus, lvs = [], []
            if s.image is not None:
                mus.append(mu_img[img_pos[i]])
                lvs.append(lv_img[img_pos[i]])
            if s.signal is not None:
                mus.append(mu_sig[sig_pos[i]])
                lvs.append(lv_sig[sig_pos[i]])
            if not mus:
                raise DataError(f"sample {s.id!r} has no modality")
            mu, _, _ = gaussian.fuse_arrays(mus, lvs, include_prior=True)
            out[i] = mu
        return out
