# %% [markdown]
# # Tape autodiff and gradient checks
#
# Every layer in the network records a backward rule on a tape. Here we build
# a tiny convolution by hand, differentiate it, and compare against central
# finite differences.

# %%
import numpy as np

from hypersal import ops
from hypersal.ops import Conv3dKernel
from hypersal.tensor import Tape, Tensor, backward

rng = np.random.default_rng(0)
x = Tensor(rng.uniform(size=(1, 4, 4, 10)), requires_grad=True)
k = Conv3dKernel(Tensor(rng.normal(size=(2, 1, 3, 3, 4)), requires_grad=True), Tensor(np.zeros(2), requires_grad=True))

# %% [markdown]
# Anything computed inside `with Tape()` is recorded. `backward` walks the
# recorded nodes in reverse and fills `.grad` on every leaf that asked for it.

# %%
with Tape() as tape:
    out = ops.relu(ops.conv3d(x, k))
    loss = out.sum()
backward(loss, tape)
print("conv output", out.shape, "loss", round(loss.item(), 4))
print("input grad shape", x.grad.shape)

# %% [markdown]
# Finite differences on a handful of input elements.

# %%
def f():
    return ops.relu(ops.conv3d(Tensor(x.data), Conv3dKernel(Tensor(k.weights.data), Tensor(k.bias.data)))).sum().item()


step = 1e-5
for idx in [(0, 0, 0, 0), (0, 1, 2, 5), (0, 3, 3, 9)]:
    x.data[idx] += step
    hi = f()
    x.data[idx] -= 2 * step
    lo = f()
    x.data[idx] += step
    fd = (hi - lo) / (2 * step)
    print(idx, "autodiff", round(float(x.grad[idx]), 8), "finite diff", round(fd, 8))

# %% [markdown]
# The class-weighted loss: one infected sample predicted at even odds costs
# 6.26 times ln 2.

# %%
loss = ops.weighted_cross_entropy(Tensor(np.array([[0.5, 0.5]])), [1], [1.0, 6.26])
print("weighted loss", round(loss.item(), 4))
