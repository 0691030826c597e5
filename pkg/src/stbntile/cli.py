"""Command-line entry point for optimizing, evaluating, and inspecting tiles.

Subcommands: optimize, evaluate, spectrum, info. Flags can also be supplied
through a flat JSON config file (--config); explicit flags win over file
values, and every run echoes its complete effective configuration both to
stdout and as comment lines at the top of the CSV it writes.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidParameterError, StbnError, TileFormatError
from .kernels import (
    DEFAULT_ALPHA,
    DEFAULT_FRAME_RATE,
    DEFAULT_SIGMA,
    DEFAULT_TRUNCATION,
    compose,
    make_spatial_gaussian,
    make_taa_kernel,
    make_temporal_percept,
)
from .percept import apply_taa, dft_power, error_sequence, filter_sequence, lowfreq_energy_ratio, prelmse
from .pfm import read_sequence, write_pfm, write_sequence
from .sequences import ErrorSequence
from .swgd import OptimizerConfig, optimize
from .synth import get_scene, reference_sequence, render_with_tile
from .tile import SampleTile, init_random, meta_sidecar_path, read_tile, write_tile

_KERNEL_KINDS = ("gaussian", "taa", "percept", "percept+taa")


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = str(text).lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"tile dims must look like 128x128x30, got {text!r}")
    try:
        x, y, t = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"tile dims must be integers, got {text!r}") from None
    if min(x, y, t) <= 0:
        raise ConfigError(f"tile dims must be positive, got {text!r}")
    return x, y, t


def _parse_image(text: str) -> tuple[int, int]:
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"image size must look like 64x64, got {text!r}")
    try:
        w, h = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"image size must be integers, got {text!r}") from None
    if min(w, h) <= 0:
        raise ConfigError(f"image size must be positive, got {text!r}")
    return w, h


class _Sub:
    """One subcommand: records documented defaults and builds its parser."""

    def __init__(self, subparsers, name: str, help_text: str):
        self.parser = subparsers.add_parser(name, help=help_text)
        self.parser.set_defaults(_sub=name)
        self.defaults: dict = {}
        self.parser.add_argument("--config", metavar="JSON",
                                 help="flat JSON config file; flags override its values")

    def opt(self, flag: str, default, help_text: str, **kw):
        key = flag.lstrip("-").replace("-", "_")
        self.defaults[key] = default
        self.parser.add_argument(flag, default=argparse.SUPPRESS,
                                 help=f"{help_text} (default: {default})", **kw)
        return self


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    cfg = dict(defaults)
    given = {k: v for k, v in vars(args).items() if k not in ("_sub", "config")}
    path = getattr(args, "config", None)
    if path is not None:
        try:
            raw = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        try:
            loaded = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in loaded.items():
            norm = str(key).replace("-", "_")
            if norm not in defaults:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            cfg[norm] = value
    cfg.update(given)
    return cfg


def _echo_config(sub: str, cfg: dict) -> None:
    print(f"effective-config {json.dumps({'command': sub, **{k: cfg[k] for k in sorted(cfg)}})}")


def _config_comments(sub: str, cfg: dict) -> list[str]:
    lines = [f"# command={sub}"]
    lines += [f"# {k}={json.dumps(cfg[k])}" for k in sorted(cfg)]
    return lines


def _write_csv(path: str | Path, comments: list[str], header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _set_threads(n: int) -> None:
    # Wall-time knob only: results never depend on the worker count.
    if n <= 0:
        raise ConfigError(f"threads must be positive, got {n}")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except Exception:
        pass


def _eval_kernels(cfg: dict):
    ks = make_spatial_gaussian(cfg["sigma"], cfg["truncation"])
    kt = make_temporal_percept(cfg["frame_rate"], cfg.get("kernel_table") or "builtin")
    return ks, kt


def _optimize_kernel(cfg: dict):
    ks = make_spatial_gaussian(cfg["sigma"], cfg["truncation"])
    kind = cfg["kernel"]
    if kind not in _KERNEL_KINDS:
        raise ConfigError(f"kernel must be one of {', '.join(_KERNEL_KINDS)}, got {kind!r}")
    kt = None
    ka = None
    if kind in ("percept", "percept+taa"):
        kt = make_temporal_percept(cfg["frame_rate"], cfg.get("kernel_table") or "builtin")
    if kind in ("taa", "percept+taa"):
        length = cfg["taa_length"]
        ka = make_taa_kernel(cfg["alpha"], None if length in (None, 0) else int(length))
    return compose(ks=ks, kt=kt, ka=ka)


def _load_tile(path: str) -> SampleTile:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"tile file not found: {path}")
    return read_tile(p)


def _save_png(image: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    a = np.asarray(image, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    Image.fromarray((scaled * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)


def _cmd_optimize(cfg: dict) -> int:
    dims = _parse_dims(cfg["tile"])
    _set_threads(int(cfg["threads"]))
    kernel = _optimize_kernel(cfg)
    tile = init_random(dims, int(cfg["spp"]), int(cfg["dim"]), int(cfg["seed"]))
    opt_cfg = OptimizerConfig(
        iterations=int(cfg["iters"]),
        batch_size=int(cfg["batch"]),
        learning_rate=float(cfg["lr"]),
        seed=int(cfg["seed"]),
        lipschitz_scale=float(cfg["lipschitz_scale"]),
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = optimize(tile, kernel, opt_cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    out = Path(cfg["output"])
    write_tile(result.tile, out)
    comments = _config_comments("optimize", cfg)
    _write_csv(cfg["log"], comments,
               ["iteration", "objective", "empty_subset_count", "wall_ms"],
               [(e.iteration, repr(e.objective), e.empty_subsets, f"{e.wall_ms:.3f}")
                for e in result.log])
    kx, ky, kt_extent = kernel.extent
    meta = {
        "version": __version__,
        "tile": {"x": dims[0], "y": dims[1], "t": dims[2],
                 "spp": tile.spp, "dim": tile.dim, "seed": tile.seed},
        "kernel": {"kind": cfg["kernel"], "extent": [kx, ky, kt_extent]},
        "objective": {
            "first": result.log[0].objective if result.log else None,
            "last": result.log[-1].objective if result.log else None,
        },
        "config": {k: cfg[k] for k in sorted(cfg)},
    }
    meta_sidecar_path(out).write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out} ({dims[0]}x{dims[1]}x{dims[2]} spp={tile.spp} d={tile.dim}), "
          f"log {cfg['log']}, {len(result.log)} iterations")
    return 0


def _displayed_sequences(cfg: dict, tile: SampleTile, scene, want_baseline: bool = True):
    image = _parse_image(cfg["image"]) if cfg["image"] else tile.dims[:2]
    frames = int(cfg["frames"])
    ref = reference_sequence(scene, image, frames)
    displayed = render_with_tile(scene, tile, image, frames)
    baseline = None
    if want_baseline:
        baseline_tile = init_random(tile.dims, tile.spp, tile.dim, int(cfg["baseline_seed"]))
        baseline = render_with_tile(scene, baseline_tile, image, frames)
    if cfg["taa"]:
        ka = make_taa_kernel(cfg["alpha"], None if cfg["taa_length"] in (None, 0) else int(cfg["taa_length"]))
        displayed = apply_taa(displayed, ka)
        if baseline is not None:
            baseline = apply_taa(baseline, ka)
    return image, frames, ref, displayed, baseline


def _cmd_evaluate(cfg: dict) -> int:
    tile = _load_tile(cfg["tile"])
    scene = get_scene(cfg["scene"])
    image, frames, ref, displayed, baseline = _displayed_sequences(cfg, tile, scene)
    frame = int(cfg["frame"])
    if not 0 <= frame < frames:
        raise InvalidParameterError(f"frame {frame} out of range; valid range is 0..{frames - 1}")

    ks, kt = _eval_kernels(cfg)
    err_tile = error_sequence(displayed, ref, ks, kt)
    err_base = error_sequence(baseline, ref, ks, kt)
    fref = filter_sequence(ref, ks, kt)

    rows = []
    for i in range(frames):
        pt = prelmse(err_tile, fref, i)
        pb = prelmse(err_base, fref, i)
        ratio = pt / pb if pb > 0 else float("nan")
        rows.append((i, repr(pt), repr(pb), repr(ratio)))
    _write_csv(cfg["metrics"], _config_comments("evaluate", cfg),
               ["frame", "prelmse", "prelmse_baseline", "ratio"], rows)

    if cfg["export_dir"]:
        d = Path(cfg["export_dir"])
        write_sequence(displayed.values, d, "displayed")
        write_sequence(ref.values, d, "reference")
        write_sequence(err_tile.values, d, "error")
        _save_png(displayed.values[frame], d / f"displayed_{frame:04d}.png")
        _save_png(err_tile.values[frame], d / f"error_{frame:04d}.png")

    pt = prelmse(err_tile, fref, frame)
    pb = prelmse(err_base, fref, frame)
    summary = {
        "scene": cfg["scene"], "frame": frame,
        "prelmse": pt, "prelmse_baseline": pb,
        "ratio": pt / pb if pb > 0 else float("nan"),
    }
    print(json.dumps(summary))
    return 0


def _cmd_spectrum(cfg: dict) -> int:
    if cfg["errors"]:
        values = read_sequence(cfg["errors"], cfg["prefix"])
        err = ErrorSequence(values=values)
    elif cfg["tile"] and cfg["scene"]:
        tile = _load_tile(cfg["tile"])
        scene = get_scene(cfg["scene"])
        _, _, ref, displayed, _ = _displayed_sequences(cfg, tile, scene, want_baseline=False)
        err = ErrorSequence(values=displayed.values - ref.values)
    else:
        raise ConfigError("spectrum needs either --errors DIR or both --tile and --scene")

    frames, h, w = err.values.shape
    frame = int(cfg["frame"])
    if not 0 <= frame < frames:
        raise InvalidParameterError(f"frame {frame} out of range; valid range is 0..{frames - 1}")
    row = h // 2 if cfg["row"] is None else int(cfg["row"])
    if not 0 <= row < h:
        raise InvalidParameterError(f"row {row} out of range; valid range is 0..{h - 1}")

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    xy = dft_power(err.values[frame])
    xt = dft_power(err.values[:, row, :])
    write_pfm(xy.power, out_dir / "xy_power.pfm")
    write_pfm(xt.power, out_dir / "xt_power.pfm")
    if cfg["png"]:
        _save_png(np.log1p(xy.power), out_dir / "xy_power.png")
        _save_png(np.log1p(xt.power), out_dir / "xt_power.png")

    radii = cfg["radius"] if cfg["radius"] else [0.25]
    rows = []
    for name, spec in (("xy", xy), ("xt", xt)):
        for r in radii:
            rows.append((name, repr(float(r)), repr(lowfreq_energy_ratio(spec, float(r)))))
    _write_csv(out_dir / "band_energy.csv", _config_comments("spectrum", cfg),
               ["slice", "radius_fraction", "energy_ratio"], rows)
    print(json.dumps({
        "xy_power": str(out_dir / "xy_power.pfm"),
        "xt_power": str(out_dir / "xt_power.pfm"),
        "band_energy": str(out_dir / "band_energy.csv"),
    }))
    return 0


def _cmd_info(cfg: dict) -> int:
    tile = _load_tile(cfg["tile"])
    x, y, t = tile.dims
    print(json.dumps({
        "x": x, "y": y, "t": t,
        "spp": tile.spp, "dim": tile.dim, "seed": tile.seed,
        "samples": int(tile.samples.size // tile.dim),
    }))
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="stbntile",
        description="Optimize and evaluate spatio-temporal blue-noise sample tiles.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="_sub", required=True)
    defaults: dict[str, dict] = {}

    s = _Sub(subparsers, "optimize", "optimize a sample tile under a perceptual kernel")
    s.opt("--tile", "128x128x30", "tile dimensions XxYxT")
    s.opt("--spp", 1, "samples per pixel per frame", type=int)
    s.opt("--dim", 2, "sample dimensionality", type=int)
    s.opt("--seed", 0, "master seed for init and optimization", type=int)
    s.opt("--iters", 10000, "gradient descent iterations", type=int)
    s.opt("--batch", 4000, "filtered subsets per iteration", type=int)
    s.opt("--lr", 1e-2, "Adam learning rate", type=float)
    s.opt("--kernel", "percept+taa", f"filter model: {'|'.join(_KERNEL_KINDS)}")
    s.opt("--sigma", DEFAULT_SIGMA, "spatial Gaussian sigma in pixels", type=float)
    s.opt("--truncation", DEFAULT_TRUNCATION, "spatial truncation threshold (fraction of peak)", type=float)
    s.opt("--alpha", DEFAULT_ALPHA, "TAA exponential blend factor", type=float)
    s.opt("--taa-length", 0, "TAA history taps; 0 picks the 1e-3 tail cutoff", type=int)
    s.opt("--frame-rate", DEFAULT_FRAME_RATE, "display frame rate in Hz", type=float)
    s.opt("--kernel-table", "", "temporal response table file; empty uses the builtin model")
    s.opt("--lipschitz-scale", 1.0, "scene Lipschitz factor applied to logged objectives", type=float)
    s.opt("--threads", 1, "worker threads (wall time only, never results)", type=int)
    s.opt("--output", "tile.stbn", "output tile path")
    s.opt("--log", "convergence.csv", "convergence log CSV path")
    defaults["optimize"] = s.defaults

    s = _Sub(subparsers, "evaluate", "render a scene with a tile and report pRelMSE vs. baseline")
    s.opt("--tile", "tile.stbn", "input tile file")
    s.opt("--scene", "ramp", "test scene name")
    s.opt("--image", "", "image size WxH; empty matches the tile's spatial dims")
    s.opt("--frames", 24, "frames to render", type=int)
    s.opt("--frame", 16, "frame reported in the summary line", type=int)
    s.opt("--taa", False, "apply temporal antialiasing before the metric", action="store_true")
    s.opt("--alpha", DEFAULT_ALPHA, "TAA exponential blend factor", type=float)
    s.opt("--taa-length", 0, "TAA history taps; 0 picks the 1e-3 tail cutoff", type=int)
    s.opt("--sigma", DEFAULT_SIGMA, "metric spatial Gaussian sigma", type=float)
    s.opt("--truncation", DEFAULT_TRUNCATION, "spatial truncation threshold", type=float)
    s.opt("--frame-rate", DEFAULT_FRAME_RATE, "display frame rate in Hz", type=float)
    s.opt("--kernel-table", "", "temporal response table file; empty uses the builtin model")
    s.opt("--baseline-seed", 1000, "seed for the white-noise baseline tile", type=int)
    s.opt("--metrics", "metrics.csv", "per-frame metrics CSV path")
    s.opt("--export-dir", "", "directory for PFM/PNG exports; empty skips exports")
    defaults["evaluate"] = s.defaults

    s = _Sub(subparsers, "spectrum", "power spectra and band energy of an error sequence")
    s.opt("--errors", "", "directory of PFM error frames; empty derives errors from --tile/--scene")
    s.opt("--prefix", "error", "PFM filename prefix inside --errors")
    s.opt("--tile", "", "input tile file (with --scene)")
    s.opt("--scene", "", "test scene name (with --tile)")
    s.opt("--image", "", "image size WxH; empty matches the tile's spatial dims")
    s.opt("--frames", 24, "frames to render", type=int)
    s.opt("--frame", 16, "frame for the XY slice", type=int)
    s.opt("--row", None, "image row for the XT slice; default is the middle row", type=int)
    s.opt("--taa", False, "apply temporal antialiasing before differencing", action="store_true")
    s.opt("--alpha", DEFAULT_ALPHA, "TAA exponential blend factor", type=float)
    s.opt("--taa-length", 0, "TAA history taps; 0 picks the 1e-3 tail cutoff", type=int)
    s.opt("--baseline-seed", 1000, "seed for the white-noise baseline tile", type=int)
    s.opt("--radius", None, "band radius fraction; repeatable", action="append", type=float)
    s.opt("--png", False, "also export log-power PNGs", action="store_true")
    s.opt("--out-dir", "spectrum", "output directory")
    defaults["spectrum"] = s.defaults

    s = _Sub(subparsers, "info", "print tile header fields as JSON")
    s.opt("--tile", "tile.stbn", "input tile file")
    defaults["info"] = s.defaults

    return parser, defaults


_COMMANDS = {
    "optimize": _cmd_optimize,
    "evaluate": _cmd_evaluate,
    "spectrum": _cmd_spectrum,
    "info": _cmd_info,
}


def main(argv: list[str] | None = None) -> int:
    parser, defaults = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help; keep both.
        return int(exc.code or 0)
    sub = args._sub
    try:
        cfg = _merge_config(args, defaults[sub])
        _echo_config(sub, cfg)
        return _COMMANDS[sub](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except TileFormatError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 4
    except StbnError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
