"""Command-line entry point: ``hypersal {gen-synth,train,eval,saliency}``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import data as hdata
from .config import ConfigError, RunConfig, load_config
from .model import CheckpointError, init_params, load_checkpoint, save_checkpoint
from .ops import HEALTHY, INFECTED
from .saliency import (
    band_slice_magnitude,
    composite,
    cstar_map,
    export_pgm,
    lesion_contrast,
    saliency_maps,
    wavelength_histogram,
    wavelength_of,
    write_histogram_csv,
)
from .train import evaluate, train, write_history, write_report

SPLIT_FILE = "split.csv"


class CliError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.with_seed(args.seed)
    return cfg


def _patch_name(p: hdata.LabeledPatch) -> str:
    return f"{p.source_id}_y{p.origin[0]}_x{p.origin[1]}"


def _load_patches(data_dir, patch_hw, stride=None, only: set[str] | None = None):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise CliError(f"data directory not found: {data_dir}")
    entries = hdata.read_labels(data_dir)
    patches, calibration, masks = [], None, {}
    for e in entries:
        if only is not None and e.cube_id not in only:
            continue
        if not e.path.exists():
            raise CliError(f"cube file not found: {e.path}")
        cube = e.load()
        calibration = calibration or cube.calibration
        patches += hdata.patches_from_cube(cube, e.label, e.cube_id, patch_hw, stride)
        m = e.mask()
        if m is not None:
            masks[e.cube_id] = m
    return patches, calibration or hdata.DEFAULT_CALIBRATION, masks


def _split_ids(checkpoint: Path, split: str) -> set[str] | None:
    if split == "all":
        return None
    path = checkpoint.parent / SPLIT_FILE
    if not path.exists():
        raise CliError(f"--split {split} needs {path}, written by 'hypersal train'")
    with open(path, newline="") as f:
        return {r["cube_id"] for r in csv.DictReader(f) if r["split"] == split}


def cmd_gen_synth(args) -> int:
    cfg = _config(args)
    cubes = hdata.generate_synthetic(cfg.data.synth)
    hdata.write_dataset(cubes, args.out)
    n_inf = sum(c.label == INFECTED for c in cubes)
    print(f"wrote {len(cubes)} cubes to {args.out}: healthy {len(cubes) - n_inf}, infected {n_inf}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    patches, _, _ = _load_patches(args.data, cfg.data.patch_size, cfg.data.stride)
    if not patches:
        raise CliError(f"no patches found in {args.data}")
    input_shape = tuple(patches[0].patch.shape)
    if cfg.input_shape is not None and tuple(cfg.input_shape) != input_shape:
        raise CliError(f"model.input_shape {list(cfg.input_shape)} does not match data {list(input_shape)}")
    tr, va, te = hdata.split_dataset(patches, cfg.data.split, cfg.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.hsm"
    if ckpt.exists():
        print(f"warning: overwriting existing run in {out} (resume is not supported)", file=sys.stderr)

    params = init_params(input_shape, cfg.seed)
    params, history = train(params, tr, va, cfg.train)
    save_checkpoint(params, ckpt)
    write_history(history, out / "history.csv")
    with open(out / SPLIT_FILE, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["cube_id", "split"])
        rows = {}
        for name, part in zip(("train", "val", "test"), (tr, va, te)):
            for p in part:
                rows[p.source_id] = name
        w.writerows(sorted(rows.items()))

    last = history[-1]
    msg = f"trained {len(history)} epochs on {len(tr)} patches; final train loss {last.train_loss:.4f}"
    if last.val_accuracy is not None:
        msg += f", val loss {last.val_loss:.4f}, val accuracy {last.val_accuracy:.4f}"
    print(msg)
    return 0


def _load_for_eval(args):
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise CliError(f"checkpoint not found: {checkpoint}")
    params = load_checkpoint(checkpoint)
    _, ph, pw, _ = params.input_shape
    only = _split_ids(checkpoint, args.split)
    patches, calibration, masks = _load_patches(args.data, (ph, pw), only=only)
    if not patches:
        raise CliError(f"no test patches found in {args.data}")
    if tuple(patches[0].patch.shape) != tuple(params.input_shape):
        raise CliError(
            f"data patches {list(patches[0].patch.shape)} do not match checkpoint input "
            f"{list(params.input_shape)}"
        )
    return params, patches, calibration, masks


def cmd_eval(args) -> int:
    params, patches, _, _ = _load_for_eval(args)
    report = evaluate(params, patches)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "eval.csv")
    print("accuracy,precision,recall,f1")
    print(report.summary())
    return 0


def _parse_bands(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise CliError(f"--bands must be comma-separated integers, got {text!r}") from None


def cmd_saliency(args) -> int:
    params, patches, calibration, masks = _load_for_eval(args)
    n_bands = params.input_shape[3]
    cfg = load_config(args.config).saliency if args.config else None
    bands = _parse_bands(args.bands) if args.bands else list(cfg.bands if cfg else [])
    top = args.top if args.top is not None else (cfg.top_k if cfg else 5)
    for b in bands:
        if not 1 <= b <= n_bands:
            raise CliError(f"band {b} outside 1..{n_bands}")

    results = saliency_maps(params, [p.patch for p in patches])
    hist = wavelength_histogram([cstar_map(r) for r in results], calibration)

    out = Path(args.out)
    (out / "composite").mkdir(parents=True, exist_ok=True)
    if bands:
        (out / "bands").mkdir(parents=True, exist_ok=True)
    write_histogram_csv(hist, out / "histogram.csv")
    for p, r in zip(patches, results):
        name = _patch_name(p)
        export_pgm(composite(r), out / "composite" / f"{name}.pgm")
        for b in bands:
            export_pgm(r.magnitude[:, :, b - 1], out / "bands" / f"{name}_band{b}.pgm")

    print(f"most sensitive bands over {len(patches)} patches:")
    for band, frac in hist.top(top):
        print(f"band {band} ({wavelength_of(band, calibration, n_bands):.1f} nm): {100 * frac:.1f}%")

    lesion = [(p, r) for p, r in zip(patches, results) if p.label == INFECTED and p.source_id in masks]
    if lesion:
        _, ph, pw, _ = params.input_shape
        crop = [masks[p.source_id][p.origin[0] : p.origin[0] + ph, p.origin[1] : p.origin[1] + pw] for p, _ in lesion]
        if all(m.any() and not m.all() for m in crop):
            planes = band_slice_magnitude([r for _, r in lesion], hist.mode())
            print(f"lesion/background saliency ratio at band {hist.mode()}: {lesion_contrast(planes, crop):.2f}")
    n_pred = np.bincount([r.predicted_class for r in results], minlength=2)
    print(f"predicted healthy {n_pred[HEALTHY]}, infected {n_pred[INFECTED]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypersal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset with a planted band")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train the 3-D CNN on a dataset directory")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (
        ("eval", cmd_eval, "classification metrics for a checkpoint"),
        ("saliency", cmd_saliency, "saliency maps and wavelength histogram"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument(
            "--split",
            choices=("all", "train", "val", "test"),
            default="all",
            help="restrict to cubes of one split recorded next to the checkpoint",
        )
        if name == "saliency":
            p.add_argument("--config", help="read saliency.bands and saliency.top_k from a run config")
            p.add_argument("--bands", help="comma-separated 1-based bands to export, e.g. 130,131")
            p.add_argument("--top", type=int)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError, hdata.CubeFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
