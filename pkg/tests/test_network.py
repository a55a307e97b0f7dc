import numpy as np
import pytest

from lasa_lan import engine as E
from lasa_lan import network as N
from lasa_lan.engine import Tensor
from lasa_lan.gradcheck import check_module
from lasa_lan.layers import Conv2d
from lasa_lan.losses import LossWeights, mix_loss


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def tiny(**kw):
    kw.setdefault("base_width", 4)
    with E.precision("verify"):
        return N.build_lan(N.LanConfig(**kw))


class TestBuild:
    def test_rgb_param_count_window(self):
        count = N.param_count(N.build_lan(N.LanConfig()))
        assert 1.27e6 <= count <= 1.71e6
        assert abs(count / 1.49e6 - 1) <= 0.15

    def test_bayer_param_count_window(self):
        count = N.param_count(N.build_lan(N.LanConfig(in_channels=4, upscale=2)))
        assert abs(count / 1.48e6 - 1) <= 0.15

    def test_single_conv_count(self):
        assert Conv2d(3, 8, 3).param_count() == 3 * 8 * 9 + 8 == 224

    def test_count_is_registry_sum(self):
        m = tiny()
        assert N.param_count(m) == sum(p.size for _, p in m.named_parameters())

    def test_names_unique(self):
        names = [k for k, _ in tiny().named_parameters()]
        assert len(names) == len(set(names))
        assert "labs.3.attn.qkv.weight" in names

    def test_seed_determinism(self):
        a, b = tiny(seed=5), tiny(seed=5)
        for (ka, pa), (kb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert ka == kb
            assert pa.data.tobytes() == pb.data.tobytes()
        c = tiny(seed=6)
        assert a.shallow.weight.data.tobytes() != c.shallow.weight.data.tobytes()

    def test_invalid_config_names_field(self):
        with pytest.raises(N.ConfigError, match="upscale"):
            N.build_lan(N.LanConfig(upscale=3))
        cfg = N.LanConfig(base_width=4)
        labs = list(cfg.labs)
        labs[1] = N.LabConfig(8, 8, "down2")
        with pytest.raises(N.ConfigError, match=r"labs\[2\]"):
            N.build_lan(N.LanConfig(base_width=4, labs=tuple(labs)))
        with pytest.raises(N.ConfigError, match=r"labs\[0\].kernel"):
            N.build_lan(N.LanConfig(base_width=4, labs=(N.LabConfig(4, 8, "down2", kernel=2),) + cfg.labs[1:]))


class TestBlock:
    def test_zero_body_is_pure_residual(self, rng):
        with E.precision("verify"):
            block = N.LinearArrayBlock(N.LabConfig(4, 8, "down2"), rng)
        for name, p in block.named_parameters():
            if not name.startswith("proj"):
                p.data = np.zeros_like(p.data)
        x = t64(rng.normal(size=(1, 4, 8, 8)))
        np.testing.assert_allclose(block(x).data, block.proj(x).data, atol=1e-15)

    def test_identity_residual(self, rng):
        with E.precision("verify"):
            block = N.LinearArrayBlock(N.LabConfig(4, 4, "none"), rng)
        assert block.proj is None
        for _, p in block.named_parameters():
            p.data = np.zeros_like(p.data)
        x = t64(rng.normal(size=(1, 4, 8, 8)))
        np.testing.assert_array_equal(block(x).data, x.data)

    @pytest.mark.parametrize("resample,expect", [("down2", 4), ("none", 8), ("up2", 16)])
    def test_resample_extents(self, rng, resample, expect):
        block = N.LinearArrayBlock(N.LabConfig(3, 5, resample), rng)
        assert block(Tensor(rng.normal(size=(1, 3, 8, 8)))).shape == (1, 5, expect, expect)

    def test_no_lasa_arm_has_no_lasa_params(self):
        m = tiny(attention="none")
        assert not any(".attn." in k for k, _ in m.named_parameters())


class TestForward:
    def test_rgb_shape(self, rng):
        m = N.build_lan(N.LanConfig(base_width=4))
        assert m(Tensor(rng.uniform(size=(1, 3, 64, 64)))).shape == (1, 3, 64, 64)

    def test_bayer_shape(self, rng):
        m = N.build_lan(N.LanConfig(base_width=4, in_channels=4, upscale=2))
        assert m(Tensor(rng.uniform(size=(1, 4, 64, 64)))).shape == (1, 3, 128, 128)

    def test_divisibility(self, rng):
        with pytest.raises(E.ShapeError, match="divisible by 8"):
            tiny()(t64(rng.uniform(size=(1, 3, 12, 16))))

    def test_deterministic(self, rng):
        m = tiny()
        x = t64(rng.uniform(size=(1, 3, 16, 16)))
        assert m(x).data.tobytes() == m(x).data.tobytes()

    def test_global_residual_is_live(self, rng):
        m = tiny()
        for k, p in m.named_parameters():
            if k.startswith("labs."):
                p.data = np.zeros_like(p.data)
        x = t64(rng.uniform(size=(1, 3, 16, 16)))
        np.testing.assert_allclose(m(x).data, m.restore(m.shallow(x)).data, atol=1e-14)

    def test_default_init_finite_on_unit_inputs(self, rng):
        m = N.build_lan(N.LanConfig(base_width=8))
        y = m(Tensor(rng.uniform(size=(1, 3, 32, 32))))
        assert np.isfinite(y.data).all()

    def test_skip_shapes_match(self, rng):
        m = tiny()
        x = t64(rng.uniform(size=(1, 3, 32, 32)))
        s0 = m.shallow(x)
        enc = [s0]
        for i in range(3):
            enc.append(m.labs[i](enc[-1]))
        d = m.labs[3](enc[3])
        for i, skip in zip((4, 5, 6), (enc[2], enc[1], enc[0])):
            d = m.labs[i](d)
            assert d.shape == skip.shape

    @pytest.mark.parametrize("kw", [
        dict(sc=False, grl=False, lrl=False, attention="none"),
        dict(sc=True, grl=False, lrl=False, attention="none"),
        dict(sc=True, grl=True, lrl=False, attention="none"),
        dict(sc=True, grl=True, lrl=True, attention="none"),
        dict(sc=True, grl=True, lrl=False, attention="lasa"),
        dict(sc=True, grl=True, lrl=True, attention="cbam"),
        dict(sc=True, grl=True, lrl=True, attention="simam"),
    ])
    def test_ablation_arms_forward_backward(self, rng, kw):
        with E.precision("train"):
            m = N.build_lan(N.LanConfig(base_width=4, **kw))
            x = Tensor(rng.uniform(size=(1, 3, 16, 16)))
            loss = E.mean_axis(E.abs_(m(x) - x))
            E.backward(loss)
        assert all(p.grad is not None for p in m.parameters())


@pytest.mark.slow
def test_full_model_gradient_check(rng):
    m = tiny()
    x = t64(rng.uniform(0, 0.3, size=(1, 3, 16, 16)))
    gt = t64(rng.uniform(0.2, 1.0, size=(1, 3, 16, 16)))
    lw = LossWeights(1.0, 0.2, 0.1)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = check_module(m, lambda: mix_loss(m(x), gt, x, lw), per_tensor=2)
    assert res.passed, res


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        m = N.build_lan(N.LanConfig(base_width=4, seed=9))
        path = tmp_path / "m.lan"
        N.save(m, path)
        m2 = N.load(path)
        assert m2.cfg == m.cfg
        for (k, a), (_, b) in zip(m.named_parameters(), m2.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), k
        x = Tensor(rng.uniform(size=(1, 3, 16, 16)))
        assert m(x).data.tobytes() == m2(x).data.tobytes()
        N.save(m2, tmp_path / "again.lan")
        assert path.read_bytes() == (tmp_path / "again.lan").read_bytes()

    def test_layout(self, tmp_path):
        buf = N.serialize(N.build_lan(N.LanConfig(base_width=4)))
        assert buf[:8] == b"LANMODEL"
        assert int.from_bytes(buf[8:12], "little") == N.FORMAT_VERSION

    def test_distinct_errors(self):
        buf = N.serialize(N.build_lan(N.LanConfig(base_width=4)))
        with pytest.raises(N.BadMagicError):
            N.deserialize(b"XXXXXXXX" + buf[8:])
        bad_version = buf[:8] + (99).to_bytes(4, "little") + buf[12:]
        with pytest.raises(N.VersionMismatchError):
            N.deserialize(bad_version)
        with pytest.raises(N.TruncatedFileError):
            N.deserialize(buf[: len(buf) // 2])
        flipped = bytearray(buf)
        flipped[-100] ^= 0xFF
        with pytest.raises(N.ChecksumError):
            N.deserialize(bytes(flipped))
