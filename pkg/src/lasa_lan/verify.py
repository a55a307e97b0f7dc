"""Acceptance report: one line per check with the measured value, the bound and PASS/FAIL.

``run(level)`` executes every criterion.  The ``fast`` level skips only the
2000-step overfit run; ``full`` includes it.
"""

from __future__ import annotations

import io
import math
import sys
import tempfile
import time
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from . import attention as A
from . import config as C
from . import data as D
from . import engine as E
from . import losses as L
from . import metrics as M
from . import network as N
from . import reference as R
from .engine import Tensor
from .gradcheck import check_module, check_primitives
from .optim import AdamState, adam_step


@dataclass
class Check:
    criterion: int
    name: str
    measured: str
    bound: str
    passed: bool | None  # None means skipped at this level

    @property
    def status(self) -> str:
        return "SKIP" if self.passed is None else ("PASS" if self.passed else "FAIL")

    def line(self) -> str:
        return f"[{self.status}] {self.criterion:>2} {self.name}: measured {self.measured}; bound {self.bound}"


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def _sci(v: float) -> str:
    return f"{v:.3g}"


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def gradients(level: str = "fast") -> list[Check]:
    out = []
    results = check_primitives()
    worst = max(results, key=lambda r: r.max_rel)
    failed = [r.name for r in results if not r.passed]
    out.append(Check(1, f"primitive gradients ({len(results)} ops)",
                     f"max rel {_sci(worst.max_rel)} ({worst.name})" + (f", failing {failed}" if failed else ""),
                     "rel < 1e-4 at h=1e-5", not failed))
    rng = np.random.default_rng(3)
    with E.precision("verify"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = N.build_lan(N.LanConfig(base_width=4))
        x = _t(rng.uniform(0, 0.3, size=(1, 3, 16, 16)))
        gt = _t(rng.uniform(0.2, 1.0, size=(1, 3, 16, 16)))
        res = check_module(model, lambda: L.mix_loss(model(x), gt, x, L.LossWeights()),
                           per_tensor=10 if level == "full" else 3)
    out.append(Check(1, "LAN + mix_loss parameter gradients (C0=4, 16x16)",
                     f"max rel {_sci(res.max_rel)} over {res.n_checked} probes, {res.n_reduced} kink-reduced",
                     "rel < 1e-4 at h=1e-5", res.passed))
    return out


def attention_oracle() -> list[Check]:
    rng = np.random.default_rng(0)
    worst = 0.0
    cases = 0
    for c in range(1, 5):
        with E.precision("verify"):
            p = A.LasaParams(c, rng=np.random.default_rng(c))
        for h in range(1, 9):
            for w in range(1, 9):
                enc = A.directional_encode(_t(rng.normal(size=(c, h, w))))
                res = A.lasa_weights(enc, p)
                qkv = enc.tokens.data[0] @ p.qkv.weight.data.T + p.qkv.bias.data
                ref, rows = R.attention_loop(qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:])
                worst = max(worst, np.abs(res.context.data[0] - ref).max(),
                            np.abs(res.attention.data[0] - rows).max())
                cases += 1
    return [Check(2, f"attention core vs loop oracle ({cases} shapes, C<=4, H,W<=8)", _sci(worst),
                  "<= 1e-10 abs", worst <= 1e-10)]


def complexity() -> list[Check]:
    out = []
    rng = np.random.default_rng(1)
    with E.precision("verify"):
        p = A.LasaParams(4, rng=rng)
    for n in (16, 32, 64):
        f = _t(rng.normal(size=(4, n, n)))
        with E.count_flops() as lin:
            A.lasa_forward(f, p)
        with E.count_flops() as full:
            A.naive_global_attention(f, p)
        ratio = full["attention_core"] / lin["attention_core"]
        expected = (n * n) ** 2 / (2 * n) ** 2
        out.append(Check(3, f"attention-core FLOP ratio naive/LASA at {n}x{n}", f"{ratio:.1f}",
                         f"{expected:.0f} +-10%", abs(ratio / expected - 1) <= 0.10))
    return out


def weight_structure() -> list[Check]:
    rng = np.random.default_rng(2)
    with E.precision("verify"):
        p = A.LasaParams(4, rng=rng)
    w = A.lasa_weights(A.directional_encode(_t(rng.normal(size=(4, 9, 7)) * 3)), p)
    a = w.a3d.data[0]
    outer = w.ay.data[0][:, :, None] * w.ax.data[0][:, None, :]
    exact = np.array_equal(a, outer)
    inside = bool(((a > 0) & (a < 1)).all())
    return [Check(4, "a3d equals outer product of directional factors", "exact" if exact else
                  f"max diff {_sci(np.abs(a - outer).max())}", "bit-exact", exact),
            Check(4, "a3d range", f"[{a.min():.4f}, {a.max():.4f}]", "open interval (0,1)", inside)]


def equivariance() -> list[Check]:
    rng = np.random.default_rng(4)
    with E.precision("verify"):
        p = A.LasaParams(4, rng=rng)
    f = rng.normal(size=(4, 6, 5))
    out = []
    for axis, name in ((2, "horizontal"), (1, "vertical")):
        d = np.abs(A.lasa_forward(_t(np.flip(f, axis)), p).data - np.flip(A.lasa_forward(_t(f), p).data, axis)).max()
        out.append(Check(5, f"lasa_forward {name} flip equivariance", _sci(d), "<= 1e-10", d <= 1e-10))
    sq = rng.normal(size=(4, 6, 6))
    d = max(np.abs(A.lasa_forward(_t(np.rot90(sq, k, axes=(1, 2))), p).data
                   - np.rot90(A.lasa_forward(_t(sq), p).data, k, axes=(1, 2))).max() for k in (1, 2, 3))
    out.append(Check(5, "lasa_forward 90-degree rotation equivariance (square)", _sci(d), "<= 1e-10", d <= 1e-10))
    return out


def param_counts() -> list[Check]:
    out = []
    for name, cfg, target in (("RGB", N.LanConfig(), 1.49e6), ("Bayer", N.LanConfig(in_channels=4, upscale=2), 1.48e6)):
        n = N.param_count(N.build_lan(cfg))
        out.append(Check(6, f"default {name} parameter count", f"{n:,} ({n / target - 1:+.1%})",
                         f"{target / 1e6:.2f} M +-15%", abs(n / target - 1) <= 0.15))
    return out


def loss_identities() -> list[Check]:
    rng = np.random.default_rng(5)
    gt, inp = rng.uniform(size=(2, 1, 3, 64, 64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mix = L.mix_loss(_t(gt), _t(gt), _t(inp)).item()
        ms = L.ms_ssim(_t(gt), _t(gt)).item()
        a, b = rng.uniform(size=(2, 1, 3, 7, 9))
        l1 = abs(L.l1_loss(_t(a), _t(b)).item() - R.mean_abs_loop(a, b))
        cl = L.contrastive_loss(_t(inp), _t(gt), _t(inp), L.FeatureExtractor()).item()
    return [Check(7, "mix_loss(gt, gt, input)", _sci(mix), "0 +- 1e-9", abs(mix) <= 1e-9),
            Check(7, "ms_ssim(x, x)", f"{ms:.12f}", "1 +- 1e-9", abs(ms - 1) <= 1e-9),
            Check(7, "l1 vs loop oracle", _sci(l1), "<= 1e-12", l1 <= 1e-12),
            Check(7, "contrastive loss at pred = input", _sci(cl), "> 0", cl > 0)]


def metric_identities() -> list[Check]:
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 0.9, size=(3, 32, 32))
    same = M.psnr(x, x)
    twenty = M.psnr(x + 0.1, x)
    y = np.clip(x + rng.normal(0, 0.1, size=x.shape), 0, 1)
    sym = abs(M.ssim(x, y) - M.ssim(y, x))
    a, b = x[0, :20, :22], y[0, :20, :22]
    orc = abs(M.ssim(a, b) - R.ssim_loop(a, b))
    return [Check(8, "psnr(x, x)", "inf" if math.isinf(same) else _sci(same), "+inf sentinel", math.isinf(same)),
            Check(8, "psnr at MSE 0.01", f"{twenty:.12f}", "20 dB exactly (1e-9)", abs(twenty - 20) <= 1e-9),
            Check(8, "ssim symmetry", _sci(sym), "<= 1e-12", sym <= 1e-12),
            Check(8, "ssim vs loop oracle", _sci(orc), "<= 1e-8", orc <= 1e-8)]


def overfit(steps: int = 2000, target: float = 35.0, lw: L.LossWeights | None = None,
            log: TextIO | None = None) -> tuple[float, int, float]:
    """Fit the C0=8 network to one 64x64 synthetic pair at lr 1e-4.

    Returns (best PSNR, step at which it was first reached, seconds).
    """
    gt = D.make_clean_image(64, 64, seed=0)
    pair = D.synth_lowlight(gt, seed=0)
    model = N.build_lan(N.LanConfig(base_width=8))
    params = dict(model.named_parameters())
    state = AdamState(lr=1e-4)
    fx = L.FeatureExtractor()
    lw = lw or L.LossWeights()
    x, g = Tensor(pair.input_img[None]), Tensor(gt[None])
    best, best_step = -math.inf, 0
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for step in range(1, steps + 1):
            y = model(x)
            value = M.psnr(np.clip(y.data[0], 0, 1), gt)
            if value > best:
                best, best_step = value, step - 1  # PSNR of the weights after step-1 updates
            if best >= target:
                break
            E.backward(L.mix_loss(y, g, x, lw, fx=fx))
            adam_step(params, {k: p.grad for k, p in params.items()}, state)
            if log is not None and step % 100 == 0:
                log.write(f"overfit step={step} psnr={value:.2f}\n")
                log.flush()
        else:
            value = M.psnr(np.clip(model(x).data[0], 0, 1), gt)
            if value > best:
                best, best_step = value, steps
    return best, best_step, time.perf_counter() - t0


def training_sanity(level: str = "fast") -> list[Check]:
    name = "overfit C0=8 on one 64x64 synthetic pair, 2000 Adam steps at lr 1e-4"
    if level != "full":
        return [Check(9, name, "not run", "PSNR >= 35 dB (full level only)", None)]
    best, step, secs = overfit()
    return [Check(9, name, f"best {best:.2f} dB at step {step} ({secs / 60:.1f} min)", "PSNR >= 35 dB, <= 15 min",
                  best >= 35.0 and secs <= 900)]


DESIGN_ARMS = {
    "Base": dict(sc=False, grl=False, lrl=False, attention="none"),
    "Base+SC": dict(sc=True, grl=False, lrl=False, attention="none"),
    "Base+SC+GRL": dict(sc=True, grl=True, lrl=False, attention="none"),
    "Base+SC+GRL+LRL": dict(sc=True, grl=True, lrl=True, attention="none"),
    "Base+SC+GRL+LASA": dict(sc=True, grl=True, lrl=False, attention="lasa"),
    "Base+SC+GRL+LRL+LASA": dict(sc=True, grl=True, lrl=True, attention="lasa"),
}
ATTENTION_ARMS = {"LAN/none": "none", "LAN/CBAM": "cbam", "LAN/SimAM": "simam", "LAN/LASA": "lasa"}


def ablation_rows() -> list[tuple[str, int, bool]]:
    """(arm, parameter delta vs the full default LAN, forward+backward ok)."""
    full = N.param_count(N.build_lan(N.LanConfig()))
    rows = []
    arms = [(k, v) for k, v in DESIGN_ARMS.items()] + [(k, dict(attention=v)) for k, v in ATTENTION_ARMS.items()]
    rng = np.random.default_rng(7)
    x = rng.uniform(size=(1, 3, 16, 16))
    for name, kw in arms:
        n = N.param_count(N.build_lan(N.LanConfig(**kw)))
        probe = N.build_lan(N.LanConfig(base_width=4, **kw))
        try:
            xt = Tensor(x)
            E.backward(E.mean_axis(E.abs_(probe(xt) - xt)))
            ok = all(p.grad is not None and np.isfinite(p.grad).all() for p in probe.parameters())
        except (E.NonFiniteError, E.ShapeError):
            ok = False
        rows.append((name, n - full, ok))
    return rows


def ablations() -> list[Check]:
    return [Check(10, f"ablation arm {name}", f"params {delta:+,} vs full LAN, forward+backward {'ok' if ok else 'failed'}",
                  "builds and differentiates", ok) for name, delta, ok in ablation_rows()]


def schedule() -> list[Check]:
    with tempfile.TemporaryDirectory() as tmp:
        cfg = C.build("tiny", overrides={"train.out_dir": tmp, "train.epochs": 4, "data.synth_count": 1})
        from .train import parse_log, train  # local import keeps verify importable without a run dir

        buf = io.StringIO()
        train(cfg, buf)
        rows = parse_log(buf.getvalue().splitlines())
    lrs = [r["lr"] for r in rows]
    want = [1e-4, 1e-4, 1e-5, 1e-5]
    counts = Counter(D.draw_transform((11, i)) for i in range(8000))
    worst = max(abs(counts[t] / 8000 - 1 / 8) for t in range(8))
    return [Check(11, "learning rate per step over 4 epochs", " ".join(f"{v:.0e}" for v in lrs),
                  "1e-04 1e-04 1e-05 1e-05", np.allclose(lrs, want, rtol=0, atol=1e-12)),
            Check(11, "dihedral draw frequencies over 8000 seeds",
                  f"{len(counts)} transforms seen, max |f - 1/8| = {worst:.4f}", "8 transforms, +-0.02",
                  len(counts) == 8 and worst <= 0.02)]


def serialization() -> list[Check]:
    out = []
    rng = np.random.default_rng(9)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        m = N.build_lan(N.LanConfig(base_width=4, seed=3))
        N.save(m, tmp / "a.lan")
        m2 = N.load(tmp / "a.lan")
        N.save(m2, tmp / "b.lan")
        same = all(a.data.tobytes() == b.data.tobytes()
                   for (_, a), (_, b) in zip(m.named_parameters(), m2.named_parameters()))
        same &= (tmp / "a.lan").read_bytes() == (tmp / "b.lan").read_bytes()
        out.append(Check(12, "model save/load round trip", "bit-exact" if same else "differs", "bit-exact", same))
        img = rng.uniform(size=(3, 16, 16))
        D.save_image(img, tmp / "x.png")
        err = float(np.abs(D.load_image(tmp / "x.png") - img).max())
        out.append(Check(12, "8-bit PNG round trip", _sci(err), "<= 1/510", err <= 1 / 510 + 1e-7))
    frame = D.RawFrame(np.zeros((2, 2)), 512, 16383, 100)
    packed = np.full((4, 1, 1), 2099.0)
    hi = float(D.preprocess_raw(packed, frame)[0, 0, 0])
    lo = float(D.preprocess_raw(packed, D.RawFrame(np.zeros((2, 2)), 512, 16383, 1))[0, 0, 0])
    out.append(Check(12, "RAW preprocess (black 512, white 16383, count 2099)",
                     f"ratio 100 -> {hi:.6f}, ratio 1 -> {lo:.6f}", "1.0 and 0.10000 +- 1e-5",
                     hi == 1.0 and abs(lo - 0.1) <= 1e-5))
    return out


CRITERIA: dict[int, Callable[[str], list[Check]]] = {
    1: gradients,
    2: lambda level: attention_oracle(),
    3: lambda level: complexity(),
    4: lambda level: weight_structure(),
    5: lambda level: equivariance(),
    6: lambda level: param_counts(),
    7: lambda level: loss_identities(),
    8: lambda level: metric_identities(),
    9: training_sanity,
    10: lambda level: ablations(),
    11: lambda level: schedule(),
    12: lambda level: serialization(),
}


def run(level: str = "fast", only=None, out: TextIO | None = None) -> list[Check]:
    out = sys.stdout if out is None else out
    if level not in ("fast", "full"):
        raise ValueError(f"level must be 'fast' or 'full', got {level!r}")
    checks = []
    for number, fn in CRITERIA.items():
        if only and number not in only:
            continue
        t0 = time.perf_counter()
        for c in fn(level):
            checks.append(c)
            out.write(c.line() + "\n")
            out.flush()
        out.write(f"       criterion {number} took {time.perf_counter() - t0:.1f} s\n")
    counts = Counter(c.status for c in checks)
    out.write(f"summary: {counts['PASS']} PASS, {counts['FAIL']} FAIL, {counts['SKIP']} SKIP\n")
    return checks


def all_passed(checks) -> bool:
    return not any(c.passed is False for c in checks)
