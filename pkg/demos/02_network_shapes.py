# %% [markdown]
# # The 3-D CNN and its shape chain
#
# Two conv/pool stages with 3x3x16 kernels, then two dense layers. Shapes are
# `[channels, height, width, bands]`.

# %%
from hypersal.model import count_params, infer_shapes, init_params

for name, shape in infer_shapes((1, 64, 64, 240)):
    print(f"{name:8s} {list(shape)}")
print("parameters:", count_params(init_params((1, 64, 64, 240), 0)))

# %% [markdown]
# The desk-scale input used in the tests and demos is much smaller, and the
# flattened feature vector shrinks to 64.

# %%
for name, shape in infer_shapes((1, 16, 16, 64)):
    print(f"{name:8s} {list(shape)}")

# %% [markdown]
# Too few bands fails at the layer that runs out of room.

# %%
try:
    infer_shapes((1, 16, 16, 34))
except ValueError as exc:
    print("error:", exc)
