import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tristream import gaussian, losses, network
from tristream.errors import ConfigError
from conftest import jittered_network, tiny_arch


class TestReconLoglikCxr:
    def test_uniform_half(self):
        x = np.full((2, 2), 0.5)
        assert losses.recon_loglik_cxr(x, x) == pytest.approx(4 * math.log(0.5), rel=1e-12)

    def test_single_pixel(self):
        assert losses.recon_loglik_cxr(np.array([1.0]), np.array([0.5])) == \
            pytest.approx(math.log(0.5), rel=1e-12)

    def test_perfect_reconstruction_limit(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        ll_far = losses.recon_loglik_cxr(x, np.clip(x, 0.2, 0.8))
        ll_near = losses.recon_loglik_cxr(x, np.clip(x, 1e-6, 1 - 1e-6))
        assert ll_near > ll_far
        assert -1e-4 < ll_near < 0.0

    def test_extreme_predictions_clamped(self):
        v = losses.recon_loglik_cxr(np.array([1.0]), np.array([0.0]))
        assert np.isfinite(v)
        assert v == pytest.approx(math.log(1e-7), rel=1e-6)


class TestReconLoglikEcg:
    def test_exact_match(self):
        assert losses.recon_loglik_ecg(np.array([0.7]), np.array([0.7])) == \
            pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-12)

    def test_unit_error(self):
        assert losses.recon_loglik_ecg(np.array([1.0]), np.array([0.0])) == \
            pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), rel=1e-12)

    @given(st.floats(0.01, 5), st.floats(1.01, 3))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_error(self, err, factor):
        x = np.array([0.0])
        assert losses.recon_loglik_ecg(x, np.array([err])) > \
            losses.recon_loglik_ecg(x, np.array([err * factor]))


class TestBeta:
    def test_schedule_endpoints_and_midpoint(self):
        cfg = losses.ObjectiveConfig(anneal_steps=100)
        assert losses.beta_at(0, cfg) == 0.0
        assert losses.beta_at(100, cfg) == 1.0
        assert losses.beta_at(50, cfg) == 0.5
        assert losses.beta_at(1000, cfg) == 1.0

    def test_monotone_and_bounded(self):
        cfg = losses.ObjectiveConfig(anneal_steps=7, max_beta=0.8)
        vals = [losses.beta_at(s, cfg) for s in range(30)]
        assert all(b <= a for a, b in zip(vals[1:], vals[1:]))
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert min(vals) == 0.0 and max(vals) == pytest.approx(0.8)

    def test_unresolved_schedule_rejected(self):
        with pytest.raises(ConfigError):
            losses.beta_at(1, losses.ObjectiveConfig())
        with pytest.raises(ConfigError):
            losses.beta_at(-1, losses.ObjectiveConfig(anneal_steps=5))


class TestBce:
    def test_zero_logit_label_one(self):
        assert losses.bce_loss(0.0, 1) == pytest.approx(math.log(2), rel=1e-12)

    def test_saturated_correct(self):
        assert losses.bce_loss(20.0, 1) < 1e-8

    def test_saturated_wrong(self):
        assert losses.bce_loss(20.0, 0) == pytest.approx(20.0, rel=1e-8)

    @given(st.floats(-30, 30), st.sampled_from([0, 1]))
    @settings(max_examples=100, deadline=None)
    def test_agrees_with_naive_formula(self, logit, label):
        p = 1.0 / (1.0 + math.exp(-logit))
        naive = -(label * math.log(p) + (1 - label) * math.log(1 - p))
        assert abs(losses.bce_loss(logit, label) - naive) < 1e-10


class TestStreamLosses:
    def setup_method(self):
        self.arch = tiny_arch()
        self.net = jittered_network(self.arch, seed=2)
        rng = np.random.default_rng(21)
        self.image = rng.random((12, 12, 1))
        self.signal = rng.standard_normal((1, 16)) * 0.5
        self.eps = rng.standard_normal(self.arch.latent_dim)

    def test_beta_zero_leaves_weighted_reconstruction(self):
        cfg = losses.ObjectiveConfig(lambda_cxr=0.7, anneal_steps=1)
        out = losses.stream_loss_cxr(self.net, self.image, 0.0, cfg, self.eps)
        assert out.elbo == pytest.approx(0.7 * out.recon_cxr, rel=1e-12)

    def test_lambda_zero_leaves_minus_kl(self):
        cfg = losses.ObjectiveConfig(lambda_cxr=0.0, anneal_steps=1)
        out = losses.stream_loss_cxr(self.net, self.image, 1.0, cfg, self.eps)
        assert out.elbo == pytest.approx(-out.kl, rel=1e-12)
        assert out.elbo <= 0.0

    def test_cxr_stream_matches_hand_composition(self):
        cfg = losses.ObjectiveConfig(lambda_cxr=1.3, anneal_steps=1)
        beta = 0.6
        out = losses.stream_loss_cxr(self.net, self.image, beta, cfg, self.eps)
        q = self.net.encode_cxr(self.image)
        z = gaussian.reparameterize(q, self.eps)
        xhat = self.net.decode_cxr(z.astype(np.float64))
        recon = losses.recon_loglik_cxr(self.image, xhat)
        kl = gaussian.kl_standard_normal(q)
        assert out.recon_cxr == pytest.approx(recon, rel=1e-9)
        assert out.kl == pytest.approx(kl, rel=1e-9)
        assert out.elbo == pytest.approx(1.3 * recon - beta * kl, rel=1e-9)

    def test_ecg_stream_matches_hand_composition(self):
        cfg = losses.ObjectiveConfig(lambda_ecg=0.9, anneal_steps=1)
        beta = 0.4
        out = losses.stream_loss_ecg(self.net, self.signal, beta, cfg, self.eps)
        q = self.net.encode_ecg(self.signal)
        z = gaussian.reparameterize(q, self.eps)
        ghat = self.net.decode_ecg(z.astype(np.float64))
        recon = losses.recon_loglik_ecg(self.signal, ghat)
        kl = gaussian.kl_standard_normal(q)
        assert out.elbo == pytest.approx(0.9 * recon - beta * kl, rel=1e-9)

    def test_joint_stream_matches_manual_composition(self):
        cfg = losses.ObjectiveConfig(lambda_cxr=1.1, lambda_ecg=0.8, anneal_steps=1)
        beta = 0.9
        out = losses.stream_loss_joint(self.net, self.image, self.signal, beta, cfg,
                                       self.eps)
        qx = self.net.encode_cxr(self.image)
        qg = self.net.encode_ecg(self.signal)
        fused = gaussian.poe_fuse([qx, qg], include_prior=True)
        z = gaussian.reparameterize(fused, self.eps)
        recon_x = losses.recon_loglik_cxr(self.image, self.net.decode_cxr(z))
        recon_g = losses.recon_loglik_ecg(self.signal, self.net.decode_ecg(z))
        kl = gaussian.kl_standard_normal(fused)
        assert out.elbo == pytest.approx(1.1 * recon_x + 0.8 * recon_g - beta * kl,
                                         rel=1e-9)

    def test_joint_symmetric_experts_keep_the_common_mean(self):
        qx = self.net.encode_cxr(self.image)
        # two identical experts: fused mean equals the shared mean scaled by
        # the prior pull; without the prior it is exactly the shared mean
        fused = gaussian.poe_fuse([qx, qx], include_prior=False)
        np.testing.assert_allclose(fused.mean, qx.mean, rtol=1e-12)

    def test_beta_bounds_stream_loss_by_weighted_recon(self):
        cfg = losses.ObjectiveConfig(lambda_cxr=1.0, anneal_steps=1)
        for beta in (0.0, 0.3, 1.0):
            out = losses.stream_loss_cxr(self.net, self.image, beta, cfg, self.eps)
            assert out.elbo <= cfg.lambda_cxr * out.recon_cxr + 1e-12


class TestTotalLoss:
    def test_stub_streams_sum(self):
        bd = losses.LossBreakdown.from_streams(elbo_cxr=-1.0, elbo_ecg=-2.0,
                                               elbo_joint=-3.0)
        assert bd.total == -6.0

    def test_additivity_is_exact_for_real_evaluations(self):
        arch = tiny_arch()
        net = jittered_network(arch, seed=4)
        rng = np.random.default_rng(31)
        image = rng.random((12, 12, 1))
        signal = rng.standard_normal((1, 16))
        eps = {k: rng.standard_normal(arch.latent_dim) for k in ("cxr", "ecg", "joint")}
        bd = losses.total_loss(net, image, signal, 0.5,
                               losses.ObjectiveConfig(anneal_steps=1), eps)
        assert bd.total == bd.elbo_cxr + bd.elbo_ecg + bd.elbo_joint

    def test_joint_only_mode_has_no_unimodal_contributions(self):
        arch = tiny_arch()
        net = jittered_network(arch, seed=4)
        rng = np.random.default_rng(32)
        image = rng.random((12, 12, 1))
        signal = rng.standard_normal((1, 16))
        eps = {"joint": rng.standard_normal(arch.latent_dim)}
        bd = losses.total_loss(net, image, signal, 1.0,
                               losses.ObjectiveConfig(anneal_steps=1), eps,
                               mode="joint-only")
        assert bd.elbo_cxr == 0.0 and bd.elbo_ecg == 0.0
        assert bd.recon_cxr == 0.0 and bd.kl_ecg == 0.0
        assert bd.total == bd.elbo_joint

    def test_gradients_match_finite_differences(self):
        # spot check on a few tensors; the acceptance suite sweeps all of them
        arch = tiny_arch()
        net = jittered_network(arch, seed=3)
        rng = np.random.default_rng(33)
        imgs = rng.random((2, 1, 12, 12))
        sigs = rng.standard_normal((2, 1, 16)) * 0.5
        cfg = losses.ObjectiveConfig(lambda_cxr=0.8, lambda_ecg=1.2, anneal_steps=1)
        eps = {k: rng.standard_normal((2, arch.latent_dim))
               for k in ("cxr", "ecg", "joint")}

        bd, grads = losses.total_loss_and_grads(net, imgs, sigs, 0.7, cfg, eps)

        def objective():
            b, _ = losses.total_loss_and_grads(net, imgs, sigs, 0.7, cfg, eps,
                                               want_grads=False)
            return -b.total

        h = 1e-5
        for name in ("cxr_encoder.fc_logvar.weight", "ecg_decoder.tconv2.weight",
                     "cxr_decoder.fc.bias", "ecg_encoder.conv1.weight"):
            p = net.params[name]
            flat = p.reshape(-1)
            gf = grads[name].reshape(-1)
            idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = objective()
                flat[i] = orig - h
                fm = objective()
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                assert abs(gf[i] - fd) / max(abs(gf[i]), abs(fd), 1e-8) < 1e-4, name

    def test_elbo_joint_lower_bounds_importance_sampled_evidence(self):
        # smallest legal geometry stands in for an arbitrarily tiny toy
        arch = tiny_arch(image_h=8, image_w=8, signal_len=32, channels=(2, 2, 2),
                         latent_dim=2)
        net = jittered_network(arch, seed=6, dtype=np.float64)
        rng = np.random.default_rng(41)
        images = rng.random((2, 1, 8, 8))
        signals = rng.standard_normal((2, 1, 32)) * 0.3
        cfg = losses.ObjectiveConfig(anneal_steps=1)

        # mean single-sample bound over many noise draws
        reps = 400
        elbos = np.zeros(2)
        for r in range(reps):
            eps = {"joint": rng.standard_normal((2, arch.latent_dim))}
            for i in range(2):
                bd, _ = losses.total_loss_and_grads(
                    net, images[i:i + 1], signals[i:i + 1], 1.0, cfg,
                    {"joint": eps["joint"][i:i + 1]}, mode="joint-only",
                    want_grads=False)
                elbos[i] += bd.elbo_joint / reps

        # importance sampling from the prior: log p(x) ~ logsumexp(ll) - log K
        k = 10**5
        log_evidence = np.zeros(2)
        for i in range(2):
            acc = []
            for lo in range(0, k, 8192):
                z = rng.standard_normal((min(8192, k - lo), arch.latent_dim))
                xhat, _ = net.dec_forward("cxr", z)
                ghat, _ = net.dec_forward("ecg", z)
                ll = (losses.bernoulli_ll(np.repeat(images[i:i + 1], len(z), axis=0), xhat)
                      + losses.gaussian_ll(np.repeat(signals[i:i + 1], len(z), axis=0), ghat))
                acc.append(ll)
            ll = np.concatenate(acc)
            m = ll.max()
            log_evidence[i] = m + np.log(np.mean(np.exp(ll - m)))

        assert np.all(elbos <= log_evidence + 0.05)
