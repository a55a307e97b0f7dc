import warnings

import numpy as np
import pytest

from lasa_lan import engine as E
from lasa_lan.engine import Tensor
from lasa_lan.gradcheck import gradcheck
from lasa_lan.losses import (
    FeatureExtractor,
    LossWeights,
    MsSsimConfig,
    contrastive_loss,
    effective_scales,
    identity_features,
    l1_loss,
    mix_loss,
    ms_ssim,
    ms_ssim_loss,
)

from oracles import mean_abs_loop, ssim_loop


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(21)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


class TestL1:
    def test_zero(self, rng):
        x = rng.uniform(size=(1, 3, 8, 8))
        assert l1_loss(t64(x), t64(x)).item() == 0

    def test_constant_offset(self, rng):
        x = rng.uniform(size=(1, 3, 8, 8))
        assert l1_loss(t64(x + 0.5), t64(x)).item() == pytest.approx(0.5, abs=1e-12)

    def test_loop_oracle(self, rng):
        a, b = rng.uniform(size=(2, 1, 3, 7, 9))
        assert l1_loss(t64(a), t64(b)).item() == pytest.approx(mean_abs_loop(a, b), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(E.ShapeError):
            l1_loss(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((1, 3, 4, 5))))


class TestMsSsim:
    def test_identity(self, rng):
        x = rng.uniform(size=(1, 3, 64, 64))
        assert ms_ssim(t64(x), t64(x)).item() == pytest.approx(1.0, abs=1e-9)
        assert ms_ssim_loss(t64(x), t64(x)).item() == pytest.approx(0.0, abs=1e-9)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(2, 1, 3, 48, 48))
        assert ms_ssim(t64(a), t64(b)).item() == pytest.approx(ms_ssim(t64(b), t64(a)).item(), abs=1e-12)

    def test_single_scale_matches_loop_oracle(self, rng):
        a = rng.uniform(size=(1, 1, 32, 32))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        cfg = MsSsimConfig(scales=1, weights=(1.0,))
        expected = ssim_loop(a[0, 0], b[0, 0])
        assert ms_ssim(t64(a), t64(b), cfg).item() == pytest.approx(expected, abs=1e-8)

    def test_scale_reduction(self):
        cfg = MsSsimConfig()
        assert effective_scales(176, 176, cfg) == 5
        assert effective_scales(175, 200, cfg) == 4
        assert effective_scales(16, 16, cfg) == 1
        with pytest.warns(UserWarning, match="scales"):
            warnings.simplefilter("always")
            ms_ssim(t64(np.ones((1, 1, 32, 32))), t64(np.ones((1, 1, 32, 32))))

    def test_range_for_nonnegative_images(self, rng):
        a, b = rng.uniform(size=(2, 1, 3, 64, 64))
        v = ms_ssim(t64(a), t64(b)).item()
        assert 0 < v < 1

    def test_channel_mismatch(self):
        with pytest.raises(E.ShapeError):
            ms_ssim(t64(np.zeros((1, 3, 16, 16))), t64(np.zeros((1, 1, 16, 16))))

    def test_gradient(self, rng):
        a, b = rng.uniform(0.1, 0.9, size=(2, 1, 2, 24, 24))
        gt = t64(b)
        res = gradcheck(lambda p: ms_ssim_loss(p, gt, MsSsimConfig()), [a], "ms_ssim", max_elems=60)
        assert res.passed, res


class TestContrastive:
    def test_perfect_prediction(self, rng):
        gt, inp = rng.uniform(size=(2, 1, 3, 16, 16))
        fx = FeatureExtractor()
        assert contrastive_loss(t64(gt), t64(gt), t64(inp), fx).item() == 0

    def test_pred_equals_input_positive(self, rng):
        gt, inp = rng.uniform(size=(2, 1, 3, 16, 16))
        v = contrastive_loss(t64(inp), t64(gt), t64(inp), FeatureExtractor()).item()
        assert v > 0

    def test_midpoint_ratio_one(self, rng):
        gt, inp = rng.uniform(size=(2, 1, 3, 8, 8))
        pred = (gt + inp) / 2
        v = contrastive_loss(t64(pred), t64(gt), t64(inp), identity_features, [1.0]).item()
        assert v == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_anchor(self, rng):
        gt = rng.uniform(size=(1, 3, 8, 8))
        with pytest.raises(ValueError, match="degenerate"):
            contrastive_loss(t64(gt * 0.5), t64(gt), t64(gt), identity_features, [1.0])

    def test_extractor_deterministic_and_frozen(self, rng):
        x = t64(rng.uniform(size=(1, 3, 16, 16)))
        a, b = FeatureExtractor(seed=3), FeatureExtractor(seed=3)
        for ta, tb in zip(a(x), b(x)):
            np.testing.assert_array_equal(ta.data, tb.data)
        assert [t.shape[1] for t in a(x)] == [8, 16, 32, 64]
        # gradient reaches the input, while extractor weights are constants
        xin = Tensor(x.data, requires_grad=True, dtype=np.float64)
        E.backward(E.sum_axis(a(xin)[-1]))
        assert xin.grad is not None
        assert not any(w.requires_grad for w, _ in a._consts(np.float64))

    def test_gradient(self, rng):
        gt, inp = rng.uniform(size=(2, 1, 3, 16, 16))
        p0 = rng.uniform(size=(1, 3, 16, 16))
        fx = FeatureExtractor()
        res = gradcheck(lambda p: contrastive_loss(p, t64(gt), t64(inp), fx), [p0], "cl", max_elems=60)
        assert res.passed, res


class TestMix:
    def test_zero_at_gt(self, rng):
        gt, inp = rng.uniform(size=(2, 1, 3, 32, 32))
        assert mix_loss(t64(gt), t64(gt), t64(inp)).item() == pytest.approx(0.0, abs=1e-9)

    def test_l1_only(self, rng):
        p, gt, inp = rng.uniform(size=(3, 1, 3, 16, 16))
        lw = LossWeights(0.7, 0.0, 0.0)
        assert mix_loss(t64(p), t64(gt), t64(inp), lw).item() == 0.7 * l1_loss(t64(p), t64(gt)).item()

    def test_nonnegative(self, rng):
        for _ in range(5):
            p, gt, inp = rng.uniform(size=(3, 1, 3, 16, 16))
            assert mix_loss(t64(p), t64(gt), t64(inp)).item() >= 0

    def test_flip_invariance(self, rng):
        p, gt, inp = rng.uniform(size=(3, 1, 3, 32, 32))
        flip = lambda a: t64(a[..., ::-1].copy())
        lw = LossWeights(1.0, 0.2, 0.0)
        a = mix_loss(t64(p), t64(gt), t64(inp), lw).item()
        b = mix_loss(flip(p), flip(gt), flip(inp), lw).item()
        assert a == pytest.approx(b, abs=1e-10)
        # strided random features are not mirror-symmetric; identity features are
        a = contrastive_loss(t64(p), t64(gt), t64(inp), identity_features, [1.0]).item()
        b = contrastive_loss(flip(p), flip(gt), flip(inp), identity_features, [1.0]).item()
        assert a == pytest.approx(b, abs=1e-10)

    def test_gradient_wrt_prediction(self, rng):
        gt, inp = rng.uniform(0.2, 1, size=(2, 1, 3, 16, 16))
        p0 = rng.uniform(size=(1, 3, 16, 16))
        fx = FeatureExtractor()
        res = gradcheck(lambda p: mix_loss(p, t64(gt), t64(inp), LossWeights(), fx=fx), [p0], "mix",
                        max_elems=120)
        assert res.passed, res

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            LossWeights(0, 0, 0)
        with pytest.raises(ValueError):
            LossWeights(layer_weights=(0.5, 0.6))
