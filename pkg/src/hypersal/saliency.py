"""Input-gradient saliency and per-pixel most sensitive wavelength analysis.

The saliency of a patch is the gradient of the predicted class's pre-softmax
logit with respect to every input element. Per pixel, the band with the
largest gradient magnitude is that pixel's most sensitive band; pooling
those over a test set gives a histogram of wavelength importance.

Band indices are 1-based everywhere in this module's interface.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .data import DEFAULT_CALIBRATION
from .model import ModelParams, forward, params_from_arrays
from .ops import HEALTHY, INFECTED
from .parallel import fan_out
from .pgm import scale_to_bytes, write_pgm
from .tensor import Tape, Tensor, backward

HISTOGRAM_HEADER = [
    "band",
    "wavelength_nm",
    "fraction",
    "fraction_predicted_healthy",
    "fraction_predicted_infected",
]


@dataclass
class SaliencyResult:
    grad: Tensor  # [1, H, W, B]
    magnitude: np.ndarray  # [H, W, B], |grad|
    predicted_class: int
    class_score: float


@dataclass
class BandSensitivityMap:
    cstar: np.ndarray  # (H, W) ints in 1..B
    bands: int
    predicted_class: int | None = None
    # False where every band has zero magnitude; such pixels have no most
    # sensitive band and are left out of histograms
    valid: np.ndarray | None = None


@dataclass
class WavelengthHistogram:
    counts: np.ndarray  # length B, pixel counts per band
    calibration: tuple[float, float] = DEFAULT_CALIBRATION
    class_counts: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def bands(self) -> int:
        return self.counts.size

    @property
    def fraction(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def class_fraction(self, cls: int) -> np.ndarray | None:
        c = self.class_counts.get(cls)
        if c is None or c.sum() == 0:
            return None
        return c / c.sum()

    def mode(self) -> int:
        return int(np.argmax(self.counts)) + 1

    def top(self, k: int = 5) -> list[tuple[int, float]]:
        order = np.argsort(-self.counts, kind="stable")[:k]
        frac = self.fraction
        return [(int(i) + 1, float(frac[i])) for i in order]


def _frozen(params: ModelParams) -> ModelParams:
    # same values, no parameter gradients: concurrent saliency runs share params
    frozen = params_from_arrays(params.input_shape, {k: t.data for k, t in params.named_tensors()})
    for t in frozen.tensors():
        t.requires_grad = False
    return frozen


def saliency_map(model: ModelParams | Callable[[Tensor], Tensor], patch: Tensor) -> SaliencyResult:
    """Gradient of the predicted class logit with respect to ``patch``.

    ``model`` is either trained :class:`ModelParams` (run in eval mode) or any
    callable mapping the input tensor to a logits tensor of shape ``[k]``.
    """
    x = Tensor(np.array(patch.data, dtype=np.float64), requires_grad=True)
    if isinstance(model, ModelParams):
        net = _frozen(model)
        run = lambda t: forward(net, t, "eval")[0]  # noqa: E731
    else:
        run = model
    with Tape() as tape:
        logits = run(x)
        probs = ops.softmax(logits)
        c = int(np.argmax(probs.data))
        score = logits[c]
    if score.tape_node is None:
        # the score does not depend on the input at all
        grad = np.zeros(x.shape)
    else:
        backward(score, tape)
        grad = x.grad if x.grad is not None else np.zeros(x.shape)
    mag = np.abs(grad).reshape(grad.shape[-3:])
    return SaliencyResult(Tensor(grad), mag, c, float(score.item()))


def saliency_maps(model: ModelParams, patches: Sequence[Tensor], threads=None) -> list[SaliencyResult]:
    """Saliency for many patches, one tape per patch, fanned out over threads."""
    if isinstance(model, ModelParams):
        model = _frozen(model)
    return fan_out(lambda p: saliency_map(model, p), patches, threads)


def cstar_map(result: SaliencyResult) -> BandSensitivityMap:
    """Per pixel, the 1-based band of largest magnitude; lowest band wins ties."""
    mag = result.magnitude
    return BandSensitivityMap(
        np.argmax(mag, axis=-1) + 1, mag.shape[-1], result.predicted_class, mag.max(axis=-1) > 0
    )


def wavelength_histogram(
    maps: Sequence[BandSensitivityMap], calibration: tuple[float, float] = DEFAULT_CALIBRATION
) -> WavelengthHistogram:
    if not maps:
        raise ValueError("need at least one band sensitivity map")
    bands = maps[0].bands
    if any(m.bands != bands for m in maps):
        raise ValueError("maps disagree on the number of bands")
    counts = np.zeros(bands, dtype=np.int64)
    by_class = {HEALTHY: np.zeros(bands, dtype=np.int64), INFECTED: np.zeros(bands, dtype=np.int64)}
    for m in maps:
        cs = m.cstar if m.valid is None else m.cstar[m.valid]
        c = np.bincount(cs.reshape(-1) - 1, minlength=bands)
        counts += c
        if m.predicted_class in by_class:
            by_class[m.predicted_class] += c
    if counts.sum() == 0:
        raise ValueError("no pixel has a non-zero saliency gradient")
    return WavelengthHistogram(counts, calibration, by_class)


def wavelength_of(band: int, calibration: tuple[float, float] = DEFAULT_CALIBRATION, bands: int = 240) -> float:
    """Linear band-to-wavelength mapping in nm; band 1 and band ``bands`` hit the endpoints."""
    if not 1 <= band <= bands:
        raise ValueError(f"band {band} outside 1..{bands}")
    lo, hi = calibration
    if bands == 1:
        return float(lo)
    return lo + (band - 1) * (hi - lo) / (bands - 1)


def band_slice_magnitude(results: Sequence[SaliencyResult], band: int) -> list[np.ndarray]:
    planes = []
    for r in results:
        b = r.magnitude.shape[-1]
        if not 1 <= band <= b:
            raise ValueError(f"band {band} outside 1..{b}")
        planes.append(r.magnitude[:, :, band - 1].copy())
    return planes


def composite(result: SaliencyResult) -> np.ndarray:
    """Band-max magnitude per pixel."""
    return result.magnitude.max(axis=-1)


def export_pgm(plane: np.ndarray, path) -> None:
    write_pgm(path, scale_to_bytes(plane))


def write_histogram_csv(hist: WavelengthHistogram, path) -> None:
    frac = hist.fraction
    healthy = hist.class_fraction(HEALTHY)
    infected = hist.class_fraction(INFECTED)
    opt = lambda a, i: "" if a is None else repr(float(a[i]))  # noqa: E731
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTOGRAM_HEADER)
        for i in range(hist.bands):
            band = i + 1
            w.writerow(
                [
                    band,
                    f"{wavelength_of(band, hist.calibration, hist.bands):.4f}",
                    repr(float(frac[i])),
                    opt(healthy, i),
                    opt(infected, i),
                ]
            )


def lesion_contrast(planes: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """Mean magnitude inside the masks divided by the mean outside them."""
    inside = np.concatenate([p[m] for p, m in zip(planes, masks)])
    outside = np.concatenate([p[~m] for p, m in zip(planes, masks)])
    if inside.size == 0 or outside.size == 0:
        raise ValueError("masks must have pixels both inside and outside")
    out_mean = outside.mean()
    return float("inf") if out_mean == 0 else float(inside.mean() / out_mean)
