# %% [markdown]
# # Synthetic hyperspectral cubes with a planted band
#
# Healthy cubes follow a smooth vegetation-like spectrum. Infected cubes add
# a narrow bump at one band inside a rectangular lesion, so we know exactly
# which wavelength and which pixels a classifier ought to use.

# %%
import tempfile
from pathlib import Path

import numpy as np

from hypersal.data import SynthSpec, generate_synthetic, read_labels, write_dataset
from hypersal.saliency import wavelength_of

spec = SynthSpec(num_cubes=10, seed=1)
cubes = generate_synthetic(spec)
print("planted band", spec.planted_band, f"({wavelength_of(spec.planted_band, spec.calibration, 64):.1f} nm)")
print("labels", [c.label for c in cubes])

# %% [markdown]
# Mean spectrum inside a lesion against a healthy cube.

# %%
sick = next(c for c in cubes if c.label == 1)
well = next(c for c in cubes if c.label == 0)
lesion = sick.cube.data[sick.mask].mean(axis=0)
healthy = well.cube.data.reshape(-1, 64).mean(axis=0)
b = spec.planted_band - 1
for band in range(b - 4, b + 5):
    print(f"band {band + 1:2d}  lesion {lesion[band]:.3f}  healthy {healthy[band]:.3f}")

# %% [markdown]
# On disk: HSC1 cubes, PGM lesion masks and a labels CSV.

# %%
out = Path(tempfile.mkdtemp())
write_dataset(cubes, out)
print(sorted(p.name for p in out.iterdir()))
entry = read_labels(out)[0]
print(entry.cube_id, entry.load().data.shape, "mask pixels", int(np.count_nonzero(entry.mask())))
