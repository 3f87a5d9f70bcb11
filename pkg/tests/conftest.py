import numpy as np
import pytest

from tristream import losses, network, synth, train


def tiny_arch(**overrides):
    """Smallest structurally complete architecture for fast tests."""
    kwargs = dict(image_h=12, image_w=12, image_c=1, signal_len=16,
                  channels=(2, 3, 4), latent_dim=5, head_hidden=8,
                  head_dropout=0.5)
    kwargs.update(overrides)
    return network.ArchConfig(**kwargs)


def jittered_network(arch, seed=3, jitter=0.05, dtype=np.float64):
    """Initialized network nudged off exact relu kinks for FD checks."""
    net = network.Network.initialized(arch, seed).astype(dtype)
    rng = np.random.default_rng(10_000 + seed)
    for v in net.params.values():
        v += rng.uniform(-jitter, jitter, size=v.shape)
    return net


def tiny_samples(n=24, seed=5, image_hw=16, signal_len=64, **kw):
    cfg = synth.SynthConfig(n=n, image_h=image_hw, image_w=image_hw,
                            signal_len=signal_len, seed=seed, **kw)
    return synth.synth_generate(cfg)


@pytest.fixture(scope="session")
def small_arch():
    return network.ArchConfig(image_h=16, image_w=16, image_c=1, signal_len=64,
                              channels=(4, 6, 8), latent_dim=6, head_hidden=16)


@pytest.fixture(scope="session")
def small_samples():
    return tiny_samples(n=48, seed=5)


@pytest.fixture(scope="session")
def small_pretrained(small_arch, small_samples):
    """One short pre-training shared by the tests that need a trained net."""
    res = train.pretrain(small_samples, small_arch, losses.ObjectiveConfig(),
                          train.RunConfig(batch_size=16, epochs=4, seed=1))
    return network.Network(small_arch, res.final_params)
