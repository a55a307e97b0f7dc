# %% [markdown]
# # From a Bayer mosaic to an RGB output
#
# A RAW frame is packed into four half-resolution planes, black-level
# corrected, scaled by the exposure ratio and fed to a LAN whose restore
# block upsamples by 2.

# %%
import tempfile
from pathlib import Path

import numpy as np

from lasa_lan import data as D
from lasa_lan import network as N

work = Path(tempfile.mkdtemp())

# %%
frame = D.make_raw_frame(32, 32, seed=1)
print(frame.pattern, frame.black_level, frame.white_level, frame.exposure_ratio, frame.mosaic.shape)

# %% [markdown]
# ## Container round trip
#
# The `.raw` container stores the mosaic plus the metadata needed to
# normalise it.

# %%
D.write_raw(frame, work / "f.raw")
again = D.read_raw(work / "f.raw")
print("mosaic equal:", np.array_equal(again.mosaic, frame.mosaic))

# %% [markdown]
# ## Packing and normalisation
#
# Each 2x2 site becomes a plane.  Values become
# `min(ratio * (v - black) / (white - black), 1)`.

# %%
packed = D.pack_bayer(frame)
print("packed", packed.shape)
print("unpack inverts pack:", np.array_equal(D.unpack_bayer(packed, frame.pattern), frame.mosaic))
x = D.raw_to_input(frame)
print("network input", x.shape, x.min().round(4), x.max().round(4))

# %% [markdown]
# ## Inference with a Bayer model
#
# An untrained four-channel model shows the shape contract: the 16x16 packed
# input yields a 32x32 RGB image.

# %%
model = N.build_lan(N.LanConfig(base_width=4, in_channels=4, upscale=2))
y = N.enhance(model, x[None])[0]
print("output", y.shape, "in [0, 1]:", bool((y >= 0).all() and (y <= 1).all()))
print("parameters at default width:", f"{N.param_count(N.build_lan(N.LanConfig(in_channels=4, upscale=2))):,}")
