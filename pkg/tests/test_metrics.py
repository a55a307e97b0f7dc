import math

import numpy as np
import pytest

from lasa_lan.metrics import MetricReport, psnr, read_report, ssim

from oracles import ssim_loop


@pytest.fixture
def rng():
    return np.random.default_rng(5)


class TestPsnr:
    def test_identical_is_inf(self, rng):
        x = rng.uniform(size=(3, 8, 8))
        assert psnr(x, x) == math.inf

    def test_mse_hundredth_is_twenty_db(self, rng):
        x = rng.uniform(0, 0.9, size=(3, 16, 16))
        assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)
        # content-independent
        assert psnr(np.full((2, 4), 0.5), np.full((2, 4), 0.4)) == pytest.approx(20.0, abs=1e-9)

    def test_max_val(self):
        a, b = np.zeros((4, 4)), np.full((4, 4), 25.5)
        assert psnr(a, b, max_val=255) == pytest.approx(20.0, abs=1e-9)

    def test_decreases_with_noise(self, rng):
        x = rng.uniform(size=(3, 32, 32))
        n = rng.normal(size=x.shape)
        vals = [psnr(x + s * n, x) for s in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]

    def test_flip_invariant(self, rng):
        a, b = rng.uniform(size=(2, 3, 12, 12))
        assert psnr(a[..., ::-1], b[..., ::-1]) == psnr(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSsim:
    def test_identity(self, rng):
        x = rng.uniform(size=(3, 24, 24))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(2, 3, 24, 24))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_matches_loop_oracle(self, rng):
        a = rng.uniform(size=(20, 22))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-8)

    def test_channels_averaged(self, rng):
        a = rng.uniform(size=(3, 16, 16))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        per = [ssim_loop(a[c], b[c]) for c in range(3)]
        assert ssim(a, b) == pytest.approx(np.mean(per), abs=1e-8)

    def test_bounded_by_one(self, rng):
        for _ in range(5):
            a, b = rng.uniform(size=(2, 3, 16, 16))
            assert ssim(a, b) < 1

    def test_flip_invariant(self, rng):
        a, b = rng.uniform(size=(2, 3, 16, 16))
        assert ssim(a[..., ::-1], b[..., ::-1]) == pytest.approx(ssim(a, b), abs=1e-10)

    def test_too_small(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((3, 10, 30)), np.zeros((3, 10, 30)))


class TestReport:
    def test_csv_and_mean_row(self, rng, tmp_path):
        rep = MetricReport()
        gt = rng.uniform(size=(3, 16, 16))
        rep.add("same.png", gt, gt)
        for i in range(3):
            rep.add(f"{i}.png", np.clip(gt + rng.normal(0, 0.05, gt.shape), 0, 1), gt)
        path = tmp_path / "r.csv"
        rep.write_csv(path)
        text = path.read_text().splitlines()
        assert text[1].split(",")[1] == "inf"
        rows = read_report(path)
        assert [r["path"] for r in rows][-1] == "mean"
        assert rows[0]["ssim"] == pytest.approx(1.0, abs=1e-9)
        mean_ssim = np.mean([r["ssim"] for r in rows[:-1]])
        assert rows[-1]["ssim"] == pytest.approx(mean_ssim, abs=1e-9)

    def test_finite_mean(self, rng, tmp_path):
        rep = MetricReport()
        gt = rng.uniform(size=(3, 16, 16))
        vals = []
        for i in range(3):
            pred = np.clip(gt + rng.normal(0, 0.05, gt.shape), 0, 1)
            rep.add(str(i), pred, gt)
            vals.append(psnr(pred, gt))
        rep.write_csv(tmp_path / "r.csv")
        assert read_report(tmp_path / "r.csv")[-1]["psnr_db"] == pytest.approx(np.mean(vals), abs=1e-9)

    def test_clamps_prediction(self, rng):
        gt = rng.uniform(size=(3, 16, 16))
        rep = MetricReport()
        rep.add("x", gt + 2.0 * (gt > 0.5), gt)
        assert rep.psnr_db[0] == psnr(np.clip(gt + 2.0 * (gt > 0.5), 0, 1), gt)
