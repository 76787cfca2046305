"""Groups acting on images, and the weight tying that makes a convolution equivariant.

Run: python demos/01_groups_and_kernels.py
"""

import numpy as np

from latentsym import EquivConv, act_on_image, expand_kernel, make_group
from latentsym.layers import kernel_constraint_residual, transform_features

rng = np.random.default_rng(0)

# Cyclic and dihedral groups, elements written rot^r ref^s
c4 = make_group("cyclic", 4)
d4 = make_group("dihedral", 4)
print(c4.name, "order", c4.order, "|", d4.name, "order", d4.order)
print("D4 Cayley table (indices):")
print(d4.cayley)

# Quarter turns permute pixels exactly
image = np.arange(25.0).reshape(1, 1, 5, 5)
print("\nimage:\n", image[0, 0])
print("rotated by", c4[1], ":\n", act_on_image(c4[1], image)[0, 0])

# A lifting convolution stores one filter per field; the bank holds its |G| transforms
lift = EquivConv(d4, "trivial", 1, 1, 3, rng)
bank = expand_kernel(lift)
print("\nlifting bank shape (out, in, kh, kw):", bank.shape)
print("residual of K(gy) = rho_out(g) K(y) rho_in(g)^-1 over D4:",
      max(kernel_constraint_residual(lift, g) for g in d4))

# Equivariance: transforming the input transforms the output fields
group_conv = EquivConv(d4, "regular", 1, 2, 3, rng, padding=1)
lift = EquivConv(d4, "trivial", 1, 1, 3, rng, padding=1)
x = rng.integers(-8, 9, size=(1, 1, 9, 9)) / 8.0
for conv in (lift, group_conv):
    conv.weight.data[...] = rng.integers(-8, 9, size=conv.weight.shape) / 8.0

def net(a):
    return group_conv(lift(a)).data

out = net(x)
worst = 0.0
for g in d4:
    lhs = net(transform_features(d4, g, x, "trivial"))
    rhs = transform_features(d4, g, out, "regular")
    worst = max(worst, float(np.max(np.abs(lhs - rhs))))
print("two-layer D4 network, max |f(gx) - g f(x)| =", worst)

# C8 needs eighth turns, which are not pixel permutations: those use bilinear resampling
c8 = make_group("cyclic", 8)
layer = EquivConv(c8, "trivial", 1, 1, 5, rng)
print("\nC8 layer mode:", layer.mode, "| filter taps per channel:", len(layer.taps))
print("grid-exact half turn residual:", kernel_constraint_residual(layer, c8[4]))
