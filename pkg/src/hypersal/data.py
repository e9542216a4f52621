"""Hyperspectral cubes: the HSC1 file format, normalization, patch tiling,
dataset splits, and a synthetic generator with a planted spectral signal.

Cubes are stored band-interleaved-by-pixel: element ``(y, x, b)`` lives at
flat index ``(y * width + x) * bands + b``, which is plain C order for an
``(H, W, B)`` array.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ops import HEALTHY, INFECTED
from .pgm import read_pgm, write_pgm
from .tensor import Tensor

CUBE_MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIII dd")
DEFAULT_CALIBRATION = (383.0, 1032.0)

LABEL_NAMES = {HEALTHY: "healthy", INFECTED: "infected"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}
LABELS_HEADER = ["cube_id", "path", "label", "lesion_length_mm"]

# Reference counts of the original soybean stem dataset. Not reproducible here;
# kept for the class-weight cross-check.
REFERENCE_SPLIT_COUNTS = {"train": 1090, "val": 194, "test": 539}
REFERENCE_TRAIN_HEALTHY = 940
REFERENCE_TRAIN_INFECTED = 150


class CubeFormatError(ValueError):
    pass


class BadMagicError(CubeFormatError):
    pass


class TruncatedCubeError(CubeFormatError):
    pass


class NonFiniteCubeError(CubeFormatError):
    pass


@dataclass
class HyperCube:
    data: np.ndarray  # float32, shape (H, W, B)
    calibration: tuple[float, float] = DEFAULT_CALIBRATION

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be (H, W, B), got shape {self.data.shape}")
        self.calibration = (float(self.calibration[0]), float(self.calibration[1]))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


def write_cube(cube: HyperCube, path) -> None:
    header = _HEADER.pack(CUBE_MAGIC, cube.height, cube.width, cube.bands, *cube.calibration)
    with open(path, "wb") as f:
        f.write(header)
        f.write(cube.data.astype("<f4").tobytes())


def read_cube(path) -> HyperCube:
    raw = Path(path).read_bytes()
    if raw[:4] != CUBE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {CUBE_MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedCubeError(
            f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}"
        )
    _, h, w, b, lo, hi = _HEADER.unpack_from(raw)
    expected = h * w * b * 4
    actual = len(raw) - _HEADER.size
    if actual < expected:
        raise TruncatedCubeError(
            f"{path}: {h}x{w}x{b} cube needs {expected} data bytes, found {actual}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=h * w * b, offset=_HEADER.size)
    if not np.all(np.isfinite(data)):
        raise NonFiniteCubeError(f"{path}: cube contains non-finite values")
    return HyperCube(data.reshape(h, w, b).astype(np.float32), (lo, hi))


def normalize(cube: HyperCube) -> HyperCube:
    """Per-cube min-max scaling to [0, 1]."""
    d = cube.data.astype(np.float64)
    lo, hi = d.min(), d.max()
    if hi == lo:
        raise ValueError("cannot normalize a constant cube")
    return HyperCube((d - lo) / (hi - lo), cube.calibration)


def extract_patches(
    cube: HyperCube, patch_hw: tuple[int, int] = (64, 64), stride: tuple[int, int] | None = None
) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Tile the cube spatially, keeping every band. Partial border tiles are dropped.

    Returns ``[((y, x), patch), ...]`` with patches of shape ``(ph, pw, B)``.
    """
    ph, pw = patch_hw
    sy, sx = stride if stride is not None else patch_hw
    if cube.height < ph or cube.width < pw:
        raise ValueError(
            f"cube {cube.height}x{cube.width} is smaller than one {ph}x{pw} patch"
        )
    out = []
    for y in range(0, cube.height - ph + 1, sy):
        for x in range(0, cube.width - pw + 1, sx):
            out.append(((y, x), cube.data[y : y + ph, x : x + pw, :]))
    return out


@dataclass
class LabeledPatch:
    patch: Tensor  # [1, ph, pw, B], values in [0, 1]
    label: int
    source_id: str
    origin: tuple[int, int] = (0, 0)


def patches_from_cube(
    cube: HyperCube,
    label: int,
    source_id: str,
    patch_hw: tuple[int, int],
    stride: tuple[int, int] | None = None,
) -> list[LabeledPatch]:
    """Normalize the cube, tile it, and label every tile with the cube's class."""
    norm = normalize(cube)
    return [
        LabeledPatch(Tensor(p[None].astype(np.float64)), label, source_id, origin)
        for origin, p in extract_patches(norm, patch_hw, stride)
    ]


def class_weights_from_counts(n_healthy: int, n_infected: int) -> list[float]:
    if n_healthy < 1 or n_infected < 1:
        raise ValueError(f"both class counts must be >= 1, got ({n_healthy}, {n_infected})")
    return [1.0, n_healthy / n_infected]


def _apportion(n: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder rounding, so counts always sum to n
    raw = [f * n for f in fractions]
    counts = [math.floor(r + 1e-9) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (counts[i] - raw[i], i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(
    patches: Sequence[LabeledPatch], fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0
) -> tuple[list[LabeledPatch], list[LabeledPatch], list[LabeledPatch]]:
    """Split by source cube, stratified by cube label.

    Whole cubes go to one split. Healthy and infected cubes are shuffled and
    apportioned separately so each split keeps the class mix.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    labels: dict[str, int] = {}
    for p in patches:
        labels.setdefault(p.source_id, p.label)
    rng = np.random.default_rng(seed)
    assign: dict[str, int] = {}
    totals = [0, 0, 0]
    for cls in sorted(set(labels.values())):
        ids = sorted(k for k, v in labels.items() if v == cls)
        ids = [ids[i] for i in rng.permutation(len(ids))]
        counts = _apportion(len(ids), fractions)
        start = 0
        for split, c in enumerate(counts):
            for cid in ids[start : start + c]:
                assign[cid] = split
            start += c
            totals[split] += c
    for name, f, t in zip(("train", "val", "test"), fractions, totals):
        if f > 0 and t == 0:
            raise ValueError(f"{name} split would be empty with {len(labels)} cubes")
    out: tuple[list, list, list] = ([], [], [])
    for p in patches:
        out[assign[p.source_id]].append(p)
    return out


# Synthetic data


@dataclass
class SynthSpec:
    num_cubes: int = 120
    cube_shape: tuple[int, int, int] = (16, 16, 64)
    planted_band: int | None = None  # 1-based; default maps band 130 of 240 onto B
    lesion_fraction: float = 0.4
    signal_amplitude: float = 0.3
    noise_stddev: float = 0.02
    class_balance: float = 0.4
    seed: int = 0
    calibration: tuple[float, float] = DEFAULT_CALIBRATION

    def __post_init__(self):
        self.cube_shape = tuple(int(s) for s in self.cube_shape)
        if self.planted_band is None:
            self.planted_band = default_planted_band(self.cube_shape[2])

    def validate(self) -> None:
        h, w, b = self.cube_shape
        if self.num_cubes < 1:
            raise ValueError("num_cubes must be >= 1")
        if min(h, w, b) < 1:
            raise ValueError(f"cube_shape must be positive, got {self.cube_shape}")
        if not 1 <= self.planted_band <= b:
            raise ValueError(f"planted_band {self.planted_band} outside 1..{b}")
        if not 0 < self.lesion_fraction <= 1:
            raise ValueError("lesion_fraction must lie in (0, 1]")
        if not 0 <= self.class_balance <= 1:
            raise ValueError("class_balance must lie in [0, 1]")
        if self.noise_stddev < 0 or self.signal_amplitude < 0:
            raise ValueError("noise_stddev and signal_amplitude must be non-negative")
        headroom = 1.0 - BASELINE_MAX - 3 * self.noise_stddev
        if self.signal_amplitude > headroom:
            raise ValueError(
                f"infeasible spec: signal_amplitude {self.signal_amplitude} exceeds the "
                f"{headroom:.3f} headroom above the baseline, values would saturate at 1"
            )


@dataclass
class SynthCube:
    cube_id: str
    cube: HyperCube
    label: int
    mask: np.ndarray = field(repr=False)  # bool (H, W), True inside the lesion


BASELINE_MAX = 0.55
BUMP_HALF_WIDTH = 4.0  # bands, half width at half maximum


def default_planted_band(bands: int) -> int:
    return int(round(bands * 130 / 240))


def _baseline(rng: np.random.Generator, h: int, w: int, b: int) -> np.ndarray:
    # vegetation-like spectrum: low visible plateau, a red-edge rise, NIR plateau
    bands = np.arange(b, dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    shade = 0.85 + 0.15 * np.sin(2 * np.pi * yy + phase[0]) * np.cos(2 * np.pi * xx + phase[1])
    low = rng.uniform(0.08, 0.15, size=(h, w))
    rise = rng.uniform(0.2, 0.3, size=(h, w))
    edge = 0.5 * b + rng.normal(0.0, 0.02 * b, size=(h, w))
    curve = 1.0 / (1.0 + np.exp(-(bands - edge[..., None]) / (0.04 * b)))
    spec = shade[..., None] * (low[..., None] + rise[..., None] * curve)
    return np.minimum(spec, BASELINE_MAX)


def _lesion_mask(rng: np.random.Generator, h: int, w: int, fraction: float) -> np.ndarray:
    lh = max(1, min(h, int(round(h * math.sqrt(fraction)))))
    lw = max(1, min(w, int(round(fraction * h * w / lh))))
    y0 = int(rng.integers(0, h - lh + 1))
    x0 = int(rng.integers(0, w - lw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[y0 : y0 + lh, x0 : x0 + lw] = True
    return mask


def generate_synthetic(spec: SynthSpec) -> list[SynthCube]:
    """Healthy and infected cubes; infected ones carry a Gaussian spectral bump
    at ``planted_band`` inside a rectangular lesion."""
    spec.validate()
    h, w, b = spec.cube_shape
    rng = np.random.default_rng(spec.seed)
    n_inf = int(round(spec.num_cubes * spec.class_balance))
    labels = np.array([INFECTED] * n_inf + [HEALTHY] * (spec.num_cubes - n_inf))
    labels = labels[rng.permutation(spec.num_cubes)]
    sigma = BUMP_HALF_WIDTH / math.sqrt(2 * math.log(2))
    bump = spec.signal_amplitude * np.exp(
        -0.5 * ((np.arange(1, b + 1) - spec.planted_band) / sigma) ** 2
    )
    width = len(str(spec.num_cubes - 1))
    out = []
    for i, label in enumerate(labels):
        data = _baseline(rng, h, w, b) + rng.normal(0.0, spec.noise_stddev, size=(h, w, b))
        mask = np.zeros((h, w), dtype=bool)
        if label == INFECTED:
            mask = _lesion_mask(rng, h, w, spec.lesion_fraction)
            data[mask] += bump
        data = np.clip(data, 0.0, 1.0)
        out.append(
            SynthCube(f"cube_{i:0{width}d}", HyperCube(data, spec.calibration), int(label), mask)
        )
    return out


# Dataset directories: cubes/*.hsc, masks/*.pgm, labels.csv


def write_dataset(cubes: Sequence[SynthCube], out_dir) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "cubes").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for c in cubes:
        rel = f"cubes/{c.cube_id}.hsc"
        write_cube(c.cube, out_dir / rel)
        write_pgm(out_dir / "masks" / f"{c.cube_id}.pgm", c.mask.astype(np.uint8) * 255)
        rows.append([c.cube_id, rel, LABEL_NAMES[c.label], ""])
    labels_path = out_dir / "labels.csv"
    with open(labels_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LABELS_HEADER)
        writer.writerows(rows)
    return labels_path


@dataclass
class DatasetEntry:
    cube_id: str
    path: Path
    label: int
    lesion_length_mm: float | None = None

    def load(self) -> HyperCube:
        return read_cube(self.path)

    def mask(self) -> np.ndarray | None:
        p = self.path.parent.parent / "masks" / f"{self.cube_id}.pgm"
        return read_pgm(p) == 255 if p.exists() else None


def read_labels(data_dir) -> list[DatasetEntry]:
    data_dir = Path(data_dir)
    path = data_dir / "labels.csv"
    if not path.exists():
        raise FileNotFoundError(f"no labels.csv in {data_dir}")
    entries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or reader.fieldnames[:3] != LABELS_HEADER[:3]:
            raise ValueError(f"{path}: header must start with {','.join(LABELS_HEADER[:3])}")
        for row in reader:
            label = row["label"].strip().lower()
            if label not in LABEL_CODES:
                raise ValueError(f"{path}: unknown label {row['label']!r} for {row['cube_id']}")
            length = (row.get("lesion_length_mm") or "").strip()
            entries.append(
                DatasetEntry(
                    row["cube_id"],
                    data_dir / row["path"],
                    LABEL_CODES[label],
                    float(length) if length else None,
                )
            )
    return entries
