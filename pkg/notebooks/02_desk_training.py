# %% [markdown]
# # Training a small LAN on generated data
#
# A desk-scale run: procedural clean images, a gamma-and-gain darkening with
# a little noise, and a few hundred Adam steps with the mixed loss.

# %%
import io
import tempfile
from pathlib import Path

import numpy as np

from lasa_lan import config as C
from lasa_lan import data as D
from lasa_lan import metrics as M
from lasa_lan import network as N
from lasa_lan import train as T

work = Path(tempfile.mkdtemp())

# %% [markdown]
# ## Data
#
# `synth_lowlight` maps a clean image `g` to `gain * g**gamma + noise`.

# %%
gt = D.make_clean_image(64, 64, seed=3)
pair = D.synth_lowlight(gt, gamma=2.0, gain=0.25, noise_sigma=0.01, seed=3)
print("mean gt", gt.mean().round(3), "mean input", pair.input_img.mean().round(3))
print("input PSNR", round(M.psnr(pair.input_img, gt), 2), "dB")

# %% [markdown]
# ## Configuration
#
# The `tiny` preset keeps widths and patches small.  Overrides use the same
# dotted keys as config files.

# %%
cfg = C.build("tiny", overrides={
    "model.base_width": 8,
    "data.synth_count": 2,
    "train.epochs": 100,
    "train.patch_size": 64,
    "train.out_dir": str(work / "run"),
})
print(cfg.dumps())

# %% [markdown]
# ## Training
#
# One log record per step.  The learning rate drops tenfold halfway.

# %%
log = io.StringIO()
result = T.train(cfg, log)
rows = T.parse_log(log.getvalue().splitlines())
for r in rows[::20] + rows[-1:]:
    print(f"step {r['step']:4d}  l1 {r['l1']:.4f}  total {r['total']:.4f}  lr {r['lr']:.0e}")

# %% [markdown]
# ## Evaluation
#
# Reload the final checkpoint and score the first training pair.

# %%
model = N.load(result.final_checkpoint)
pairs = T.load_dataset(cfg)
pred = N.enhance(model, pairs[0].input_img[None])[0]
print("input PSNR", round(M.psnr(pairs[0].input_img, pairs[0].gt_img), 2),
      "model PSNR", round(M.psnr(pred, pairs[0].gt_img), 2),
      "SSIM", round(M.ssim(pred, pairs[0].gt_img), 4))
