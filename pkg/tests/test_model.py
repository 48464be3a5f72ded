from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import clamped_setup, central_diff, rel_error, silent_setup, tiny_config, torch_model_grads
from spikecaps.errors import DimensionError, StateError
from spikecaps.model import (
    ArchConfig,
    ModelConfig,
    backward,
    check_params,
    digit_current,
    forward,
    from_capsules,
    init_params,
    mse_loss,
    param_shapes,
    predict,
    to_capsules,
)


def _spiky_params(cfg, rng):
    p = init_params(cfg, rng)
    p["digit.weight"] *= 4
    return p


class TestShapes:
    def test_chain_28(self):
        cfg = ModelConfig()
        assert cfg.arch.layer_shapes() == {
            "input": (1, 28, 28),
            "conv1": (256, 20, 20),
            "primary": (256, 6, 6),
            "primary_capsules": (1152, 8),
            "digit_capsules": (10, 16),
            "output": (10,),
        }

    def test_forward_chain_28(self, rng):
        cfg = ModelConfig()
        p = init_params(cfg, rng)
        out, rec = forward(rng.normal(size=(1, 28, 28)), p, cfg)
        assert rec.s1.shape == (5, 1, 256, 20, 20)
        assert rec.s2.shape == (5, 1, 256, 6, 6)
        assert rec.u.shape == (5, 1, 1152, 8)
        assert rec.s3.shape == (5, 1, 10, 16)
        assert out.shape == (10,)

    def test_forward_chain_40(self, rng):
        cfg = ModelConfig(arch=ArchConfig(input_shape=(1, 40, 40)))
        p = init_params(cfg, rng)
        assert p["digit.weight"].shape == (4608, 10, 8, 16)
        _, rec = forward(rng.normal(size=(1, 40, 40)), p, cfg)
        assert rec.s1.shape[2:] == (256, 32, 32)
        assert rec.s2.shape[2:] == (256, 12, 12)
        assert rec.u.shape[2:] == (4608, 8)
        assert rec.s3.shape[2:] == (10, 16)

    def test_param_shapes_by_head(self):
        assert "fc.weight" in param_shapes(ArchConfig(head="fc"))
        assert "fc.weight" not in param_shapes(ArchConfig(head="norm"))
        assert param_shapes(ArchConfig())["fc.weight"] == (160, 10)

    def test_wrong_input_shape(self, rng):
        cfg = tiny_config()
        with pytest.raises(DimensionError, match="input shape"):
            forward(np.zeros((1, 12, 12)), init_params(cfg, rng), cfg)

    def test_check_params(self, rng):
        cfg = tiny_config()
        p = init_params(cfg, rng)
        del p["digit.bias"]
        with pytest.raises(DimensionError, match="digit.bias"):
            check_params(p, cfg)

    def test_kernel_too_large_for_input(self):
        with pytest.raises(DimensionError):
            ArchConfig(input_shape=(1, 8, 8))


class TestInit:
    def test_bounds_and_zero_biases(self):
        cfg = ModelConfig(arch=ArchConfig(conv1_channels=32, primary_caps=8))
        p = init_params(cfg, np.random.default_rng(0))
        assert np.abs(p["digit.weight"]).max() <= np.sqrt(3 / 128)
        assert np.abs(p["digit.bias"]).max() <= np.sqrt(3 / 128)
        assert np.abs(p["conv1.weight"]).max() <= 1 / 9
        assert np.abs(p["fc.weight"]).max() <= 1 / np.sqrt(160)
        for name in ("conv1.bias", "primary.bias", "fc.bias"):
            np.testing.assert_array_equal(p[name], 0.0)

    def test_seeded(self):
        cfg = tiny_config()
        a = init_params(cfg, np.random.default_rng([3, 0]))
        b = init_params(cfg, np.random.default_rng([3, 0]))
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


class TestCapsules:
    @given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4))
    def test_round_trip(self, caps, dim, h, w):
        s = np.random.default_rng(0).normal(size=(2, caps * dim, h, w))
        u = to_capsules(s, caps, dim)
        assert u.shape == (2, caps * h * w, dim)
        np.testing.assert_array_equal(from_capsules(u, caps, dim, h, w), s)

    def test_channel_grouping(self):
        s = np.zeros((4, 2, 1))  # 2 capsule types of 2 units, 2x1 grid
        s[2, 1, 0] = 1.0  # type 1, unit 0, row 1
        u = to_capsules(s, 2, 2)
        # capsule index = type*h*w + row*w + col = 1*2 + 1 = 3
        assert u[3, 0] == 1.0 and u.sum() == 1.0

    def test_digit_current_matches_loops(self, rng):
        u = (rng.uniform(size=(2, 5, 3)) < 0.5).astype(float)
        c = rng.uniform(size=(2, 5, 4))
        w = rng.normal(size=(5, 4, 3, 6))
        b = rng.normal(size=(4, 6))
        out = digit_current(u, c, w, b)
        for n in range(2):
            for j in range(4):
                exp = b[j] + sum(c[n, i, j] * (u[n, i] @ w[i, j]) for i in range(5))
                np.testing.assert_allclose(out[n, j], exp, rtol=1e-12)


class TestForward:
    def test_zero_input_is_silent(self, rng):
        for head in ("fc", "norm"):
            cfg = tiny_config(head)
            p = init_params(cfg, rng)
            p["digit.bias"][:] = 0.0
            out, rec = forward(np.zeros((2, 1, 10, 10)), p, cfg)
            assert rec.s1.sum() == rec.s2.sum() == rec.s3.sum() == 0
            np.testing.assert_array_equal(out, 0.0)
            np.testing.assert_array_equal(rec.final_coupling, 1 / 3)

    def test_norm_head_is_plain_l2_norm(self, rng):
        cfg = tiny_config("norm")
        p = _spiky_params(cfg, rng)
        out, rec = forward(rng.normal(size=(3, 1, 10, 10)) * 2, p, cfg)
        np.testing.assert_allclose(out, np.linalg.norm(rec.v3_pre.mean(axis=0), axis=-1), rtol=1e-14)
        # no squash bound: lengths are free to exceed 1
        assert out.max() > 1.0

    def test_coupling_is_not_normalised(self, rng):
        cfg = tiny_config("fc")
        p = _spiky_params(cfg, rng)
        _, rec = forward(rng.normal(size=(3, 1, 10, 10)) * 2, p, cfg)
        assert rec.s3.sum() > 0
        assert not np.allclose(rec.final_coupling.sum(axis=-1), 1.0)
        # the first step always uses the uniform coupling
        np.testing.assert_array_equal(rec.coupling[0], 1 / 3)

    def test_deterministic(self, rng):
        cfg = tiny_config("fc")
        p = _spiky_params(cfg, rng)
        x = rng.normal(size=(4, 1, 10, 10))
        a, ra = forward(x, p, cfg)
        b, rb = forward(x, p, cfg)
        np.testing.assert_array_equal(a, b)
        ga = backward(ra, np.ones_like(a), p, cfg)
        gb = backward(rb, np.ones_like(b), p, cfg)
        for k in ga:
            np.testing.assert_array_equal(ga[k], gb[k])

    def test_batch_matches_single(self, rng):
        cfg = tiny_config("norm")
        p = _spiky_params(cfg, rng)
        x = rng.normal(size=(3, 1, 10, 10)) * 2
        batched, _ = forward(x, p, cfg)
        for n in range(3):
            np.testing.assert_allclose(batched[n], forward(x[n], p, cfg)[0], rtol=1e-12)

    def test_predict_matches_forward(self, rng):
        cfg = tiny_config("fc")
        p = _spiky_params(cfg, rng)
        x = rng.normal(size=(7, 1, 10, 10))
        np.testing.assert_allclose(predict(x, p, cfg, batch_size=3), forward(x, p, cfg)[0], rtol=1e-12)


class TestBackward:
    @pytest.mark.parametrize("head", ["fc", "norm"])
    @pytest.mark.parametrize("mode", ["stdp", "hebb"])
    def test_matches_torch_autograd(self, rng, head, mode):
        cfg = tiny_config(head, mode)
        p = _spiky_params(cfg, rng)
        x = rng.normal(size=(4, 1, 10, 10)) * 2
        y = rng.integers(0, 3, 4)
        out, rec = forward(x, p, cfg)
        loss, g = mse_loss(out, y)
        grads = backward(rec, g, p, cfg)
        t_loss, t_out, t_grads = torch_model_grads(x, y, p, cfg)
        assert rec.s1.mean() > 0.05 and rec.s2.mean() > 0.02 and rec.s3.mean() > 0.05
        assert loss == pytest.approx(t_loss, rel=1e-12)
        np.testing.assert_allclose(out, t_out, rtol=1e-12, atol=1e-14)
        assert set(grads) == set(t_grads)
        for k in grads:
            assert rel_error(grads[k], t_grads[k]) < 1e-10, k

    def test_single_sample(self, rng):
        cfg = tiny_config("fc")
        p = _spiky_params(cfg, rng)
        x = rng.normal(size=(1, 10, 10)) * 2
        out, rec = forward(x, p, cfg)
        _, g = mse_loss(out, 1)
        grads = backward(rec, g, p, cfg)
        _, _, t_grads = torch_model_grads(x[None], np.array([1]), p, cfg)
        for k in grads:
            assert rel_error(grads[k], t_grads[k]) < 1e-10, k

    def test_without_row_cache(self, rng, monkeypatch):
        import spikecaps.model as m

        cfg = tiny_config("fc")
        p = _spiky_params(cfg, rng)
        x = rng.normal(size=(2, 1, 10, 10)) * 2
        out, rec = forward(x, p, cfg)
        ref = backward(rec, np.ones_like(out), p, cfg)
        monkeypatch.setattr(m, "ROW_CACHE_BYTES", 0)
        out2, rec2 = forward(x, p, cfg)
        assert rec2.primary_rows is None
        got = backward(rec2, np.ones_like(out2), p, cfg)
        for k in ref:
            np.testing.assert_array_equal(got[k], ref[k])

    def test_record_mismatch(self, rng):
        cfg = tiny_config("fc")
        p = init_params(cfg, rng)
        out, rec = forward(np.zeros((1, 10, 10)), p, cfg)
        with pytest.raises(StateError):
            backward(rec, out, p, tiny_config("norm"))
        with pytest.raises(StateError):
            backward(rec, np.zeros(4), p, cfg)


class TestSubthresholdGradients:
    def _check(self, cfg, x, p, names):
        y = np.array([3, 7])
        out, rec = forward(x, p, cfg)
        _, g = mse_loss(out, y)
        grads = backward(rec, g, p, cfg)
        f = lambda: mse_loss(forward(x, p, cfg, keep_record=False)[0], y)[0]
        errs = {}
        for name in names:
            idx = np.random.default_rng(0).choice(p[name].size, size=min(300, p[name].size), replace=False)
            fd = central_diff(f, p[name], indices=idx).reshape(-1)[idx]
            errs[name] = rel_error(grads[name].reshape(-1)[idx], fd)
        return rec, grads, errs

    def test_silent_network(self, rng):
        cfg, x, p = silent_setup(rng)
        rec, grads, errs = self._check(cfg, x, p, ["conv1.weight", "digit.weight", "digit.bias"])
        assert rec.s1.sum() == rec.s2.sum() == rec.s3.sum() == 0
        assert all(e < 1e-4 for e in errs.values()), errs
        assert np.linalg.norm(grads["digit.bias"]) > 1e-3

    def test_clamped_primary(self, rng):
        cfg, x, p = clamped_setup(rng)
        rec, grads, errs = self._check(cfg, x, p, ["conv1.weight", "digit.weight", "digit.bias"])
        assert rec.s3.sum() == 0 and 0 < rec.s2.mean() < 1
        assert all(e < 1e-4 for e in errs.values()), errs
        assert np.linalg.norm(grads["digit.weight"]) > 1e-3
