# %% [markdown]
# # Linear array self-attention
#
# LASA pools a C x H x W feature map into W column tokens and H row tokens,
# runs self-attention over those H + W tokens, and rebuilds a 3-D weight
# volume as the outer product of a column factor and a row factor.

# %%
import numpy as np

from lasa_lan import attention as A
from lasa_lan import engine as E

E.set_precision("verify")
rng = np.random.default_rng(0)
p = A.LasaParams(4, rng=rng)
f = E.Tensor(rng.normal(size=(1, 4, 6, 5)))

# %% [markdown]
# ## Directional encodings
#
# Column means have shape (N, C, W), row means (N, C, H).  The token matrix
# stacks them column-first.

# %%
enc = A.directional_encode(f)
print(enc.fx.shape, enc.fy.shape, enc.tokens.shape)

# %% [markdown]
# ## Weight volume
#
# Every entry of `a3d` is a product of two sigmoids, so it sits strictly
# inside (0, 1), and each channel slice has rank one.

# %%
w = A.lasa_weights(enc, p)
a = w.a3d.data[0]
print("range", a.min(), a.max())
print("rank per channel", [np.linalg.matrix_rank(a[c]) for c in range(a.shape[0])])
print("attention rows sum to", w.attention.data[0].sum(axis=-1)[:3])

# %% [markdown]
# ## Cost against full spatial attention
#
# Full attention over H*W positions builds an (HW)^2 matrix.  LASA builds an
# (H+W)^2 one, so the core cost ratio is (HW)^2 / (H+W)^2.

# %%
for n in (8, 16, 32):
    g = E.Tensor(rng.normal(size=(1, 4, n, n)))
    with E.count_flops() as lin:
        A.lasa_forward(g, p)
    with E.count_flops() as full:
        A.naive_global_attention(g, p)
    ratio = full["attention_core"] / lin["attention_core"]
    print(f"{n}x{n}: measured {ratio:.1f}, predicted {(n * n) ** 2 / (2 * n) ** 2:.1f}")

# %% [markdown]
# ## Flip equivariance
#
# Means along an axis do not care about the order along the other axis, so
# flipping the input flips the output.

# %%
x = rng.normal(size=(1, 4, 6, 5))
out = A.lasa_forward(E.Tensor(x), p).data
flipped = A.lasa_forward(E.Tensor(x[..., ::-1].copy()), p).data
print("max |difference|", np.abs(flipped - out[..., ::-1]).max())
