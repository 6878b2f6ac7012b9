"""Command line front end for the recovery pipelines and numerical studies.

Subcommands cover the five data tasks (denoise, inpaint, hsi, pointcloud,
transcriptomics), the quadrature error study (varlab), and the
finite-difference audit (gradcheck).  Every pipeline run writes its outputs,
a metrics report, rendered figures, and a manifest echoing the resolved
configuration, side by side in the output directory.  Runs are
bit-reproducible for a fixed argv and seed; the manifest timestamp is the
only exception.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import figures, gradcheck, varlab
from .dataio import (
    POINTCLOUD_COLUMNS,
    TRANSCRIPTOMICS_COLUMNS,
    ObservationTable,
    partial_table_to_grid,
    read_image,
    read_observation_table,
    read_pointcloud_table,
    read_transcriptomics_table,
    write_image,
    write_metrics,
    write_observation_table,
)
from .metrics import mse_rsquare, psnr, ssim
from .regularizers import REGULARIZER_KINDS
from .tasks import (
    default_config,
    denoise_image,
    hsi_mixed_denoise,
    inpaint_image,
    paper_config,
    reconstruct_transcriptomics,
    recover_pointcloud,
)

__all__ = ["main", "RunManifest", "UsageError", "DataError"]

ARCHITECTURES = ("sine-mlp", "tf-net", "pe-mlp")


class UsageError(Exception):
    """Malformed invocation: bad flag, bad flag value, missing argument."""


class DataError(Exception):
    """Unusable input: missing file, malformed table, inconsistent shapes."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- manifest -----------------------------------------------------------------

def _render(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunManifest:
    """What produced a set of outputs: command, config, seed, paths."""

    command: str
    config_path: str
    seed: object
    inputs: tuple
    outputs: tuple
    config_echo: dict

    def lines(self):
        yield f"command={self.command}"
        yield f"config={self.config_path}"
        yield f"seed={_render(self.seed)}"
        for i, path in enumerate(self.inputs):
            yield f"input.{i}={path}"
        for i, path in enumerate(self.outputs):
            yield f"output.{i}={path}"
        for key, value in self.config_echo.items():
            yield f"config.{key}={_render(value)}"

    def write(self, path):
        # The timestamp is informational and excluded from reproducibility.
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")
            fh.write(f"written_at={time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        return str(path)


def _config_echo(cfg):
    echo = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in ("regularizer", "adam"):
            for g in fields(value):
                echo[f"{f.name}.{g.name}"] = getattr(value, g.name)
        else:
            echo[f.name] = value
    return echo


# -- configuration layering ----------------------------------------------------

def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text):
    return tuple(int(part) for part in text.split(","))


_CONFIG_KEYS = {
    "lambda": ("lam", float),
    "lam": ("lam", float),
    "gamma": ("gamma", float),
    "architecture": ("architecture", str),
    "width": ("width", int),
    "depth": ("depth", int),
    "omega0": ("omega0", float),
    "bias": ("bias", _parse_bool),
    "ranks": ("ranks", _parse_int_tuple),
    "max_rank": ("max_rank", int),
    "factor": ("factor", int),
    "iterations": ("iterations", int),
    "seed": ("seed", int),
    "early_stop": ("early_stop", _parse_bool),
    "plateau_window": ("plateau_window", int),
    "plateau_tol": ("plateau_tol", float),
    "learning_rate": ("learning_rate", float),
    "preset": ("preset", str),
    "regularizer": ("regularizer", str),
    "dims": ("dims", _parse_int_tuple),
    "kappa": ("kappa", float),
    "theta": ("theta", float),
    "epsilon": ("epsilon", float),
    "a_min": ("a_min", float),
    "scale_order": ("scale_order", int),
}

_REG_FIELDS = ("dims", "kappa", "theta", "epsilon", "a_min", "scale_order")


def _read_config_file(path):
    """Flat key=value text; '#' comments and blank lines are skipped."""
    options = {}
    try:
        with open(path) as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}")
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise DataError(f"{path}:{lineno}: expected key=value")
        if key not in _CONFIG_KEYS:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        name, convert = _CONFIG_KEYS[key]
        try:
            options[name] = convert(value.strip())
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}")
    return options


def _build_config(task, options):
    """Resolve a TaskConfig from task defaults, a preset, and overrides."""
    options = dict(options)
    preset = options.pop("preset", "desk")
    if preset not in ("desk", "paper"):
        raise DataError(f"preset must be desk or paper, got {preset!r}")
    reg_over = {k: options.pop(k) for k in _REG_FIELDS if k in options}
    kind = options.pop("regularizer", None)
    if kind is not None:
        reg_over["kind"] = kind
    learning_rate = options.pop("learning_rate", None)
    maker = paper_config if preset == "paper" else default_config
    cfg = maker(task)
    if reg_over:
        cfg = replace(cfg, regularizer=replace(cfg.regularizer, **reg_over))
    if learning_rate is not None:
        cfg = replace(cfg, adam=replace(cfg.adam, learning_rate=learning_rate))
    return replace(cfg, **options) if options else cfg


# -- argument parsing -----------------------------------------------------------

def _add_run_flags(sub):
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--lambda", dest="lam", type=float, default=None,
                     help="trade-off parameter")
    sub.add_argument("--lambdas", default=None,
                     help="comma list of trade-off values to sweep")
    sub.add_argument("--seed", type=int, default=None, help="RNG seed")
    sub.add_argument("--seeds", default=None, help="comma list of seeds to sweep")
    sub.add_argument("--jobs", type=int, default=1,
                     help="parallel workers across independent runs")
    sub.add_argument("--iterations", type=int, default=None)
    sub.add_argument("--width", type=int, default=None)
    sub.add_argument("--depth", type=int, default=None)
    sub.add_argument("--omega0", type=float, default=None)
    sub.add_argument("--architecture", choices=ARCHITECTURES, default=None)
    sub.add_argument("--regularizer", choices=REGULARIZER_KINDS, default=None)
    sub.add_argument("--preset", choices=("desk", "paper"), default=None)


def _build_parser():
    parser = _Parser(prog="neurtv",
                     description="Coordinate-network recovery with "
                                 "derivative-based total-variation penalties.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("denoise", help="remove noise from a full image")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", required=True,
                   help="noisy image (PGM or PNG)")
    p.add_argument("--ref", default=None, help="clean reference for metrics")
    p.add_argument("--factor", type=int, default=None,
                   help="penalty sampling density relative to the image grid")

    p = sub.add_parser("inpaint", help="fill in missing pixels")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", required=True,
                   help="observed-entry CSV table, or an image (needs --mask)")
    p.add_argument("--mask", default=None,
                   help="observation mask image (nonzero = observed)")
    p.add_argument("--shape", default=None,
                   help="grid extents for CSV input, e.g. 32,32 or 32,32,3")
    p.add_argument("--ref", default=None, help="complete reference for metrics")

    p = sub.add_parser("hsi", help="split a cube into smooth + sparse parts")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", nargs="+", required=True,
                   help="band images in stacking order (PGM or PNG)")
    p.add_argument("--ref", nargs="+", default=None,
                   help="clean band images for metrics")
    p.add_argument("--gamma", type=float, default=None,
                   help="sparsity weight of the shrinkage step")
    p.add_argument("--factor", type=int, default=None)

    p = sub.add_parser("pointcloud", help="regress a point-cloud attribute")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", required=True,
                   help="observed rows, CSV with header x,y,z,C,v")
    p.add_argument("--query", required=True,
                   help="prediction rows, CSV with header x,y,z,C[,v]")

    p = sub.add_parser("transcriptomics", help="reconstruct expression values")
    _add_run_flags(p)
    p.add_argument("--in", dest="input", required=True,
                   help="observed rows, CSV with header x,y,g,v")
    p.add_argument("--query", required=True,
                   help="prediction rows, CSV with header x,y,g[,v]")

    p = sub.add_parser("varlab", help="quadrature truncation-error studies")
    p.add_argument("--study", choices=("truncation", "shift"), required=True)
    p.add_argument("--fn", choices=varlab.function_names(), required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--nmin", type=int, default=16,
                   help="smallest partition count (truncation study)")
    p.add_argument("--nmax", type=int, default=4096,
                   help="largest partition count (truncation study)")
    p.add_argument("--n", default="8,16,32",
                   help="comma list of partition counts (shift study)")
    p.add_argument("--delta", default="1e-3,1e-2",
                   help="comma list of breakpoint shifts (shift study)")
    p.add_argument("--j", type=int, default=None,
                   help="index of the shifted breakpoint (default n/2)")

    p = sub.add_parser("gradcheck", help="finite-difference derivative audit")
    p.add_argument("--out", default=None,
                   help="optional directory for the text report")
    return parser


def _parse_number_list(text, flag, convert):
    values = []
    for part in text.split(","):
        try:
            values.append(convert(part.strip()))
        except ValueError:
            raise UsageError(f"{flag} expects comma-separated numbers, got {part.strip()!r}")
    if not values:
        raise UsageError(f"{flag} must list at least one value")
    return values


def _require(condition, message):
    if not condition:
        raise UsageError(message)


def _validate_args(args):
    def flag(name):
        return getattr(args, name, None)

    if flag("lam") is not None:
        _require(args.lam >= 0, f"--lambda must be nonnegative, got {args.lam:g}")
    if flag("gamma") is not None:
        _require(args.gamma > 0, f"--gamma must be positive, got {args.gamma:g}")
    if flag("factor") is not None:
        _require(args.factor >= 1, f"--factor must be at least 1, got {args.factor}")
    if flag("iterations") is not None:
        _require(args.iterations >= 1, "--iterations must be at least 1")
    if flag("width") is not None:
        _require(args.width >= 1, "--width must be at least 1")
    if flag("depth") is not None:
        _require(args.depth >= 1, "--depth must be at least 1")
    if flag("omega0") is not None:
        _require(args.omega0 > 0, "--omega0 must be positive")
    if flag("jobs") is not None:
        _require(args.jobs >= 1, "--jobs must be at least 1")
    if flag("seeds") is not None:
        args.seeds = _parse_number_list(args.seeds, "--seeds", int)
    if flag("lambdas") is not None:
        args.lambdas = _parse_number_list(args.lambdas, "--lambdas", float)
        _require(min(args.lambdas) >= 0, "--lambdas values must be nonnegative")
    if flag("seeds") is not None and flag("seed") is not None:
        raise UsageError("--seed and --seeds are mutually exclusive")
    if flag("lambdas") is not None and flag("lam") is not None:
        raise UsageError("--lambda and --lambdas are mutually exclusive")
    if flag("shape") is not None:
        shape = _parse_number_list(args.shape, "--shape", int)
        _require(min(shape) >= 1, "--shape extents must be positive")
        args.shape = tuple(shape)
    if args.command == "varlab":
        _require(args.nmin >= 2, "--nmin must be at least 2")
        _require(args.nmax >= args.nmin, "--nmax must be at least --nmin")
        args.n = _parse_number_list(args.n, "--n", int)
        _require(min(args.n) >= 2, "--n values must be at least 2")
        args.delta = _parse_number_list(args.delta, "--delta", float)
        _require(min(args.delta) >= 0, "--delta values must be nonnegative")
        if args.j is not None:
            _require(args.j >= 1, "--j must be at least 1")


def _worker_cap():
    raw = os.environ.get("NEURTV_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"NEURTV_THREADS must be an integer, got {raw!r}")
    _require(cap >= 1, "NEURTV_THREADS must be at least 1")
    return cap


# -- shared run plumbing ---------------------------------------------------------

_FLAG_OPTIONS = ("lam", "gamma", "architecture", "width", "depth", "omega0",
                 "factor", "iterations", "preset", "regularizer")


def _flag_options(args):
    options = {}
    for name in _FLAG_OPTIONS:
        value = getattr(args, name, None)
        if value is not None:
            options[name] = value
    return options


def _run_label(seed, lam, seeds, lams):
    parts = []
    if len(seeds) > 1:
        parts.append(f"seed{seed}")
    if len(lams) > 1:
        parts.append(f"lam{lam:g}")
    return "-".join(parts)


def _execute_all(payloads, jobs, cap):
    jobs = min(jobs, len(payloads))
    if cap is not None:
        jobs = min(jobs, cap)
    if jobs <= 1:
        return [_execute_run(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_execute_run, payloads))


def _execute_run(payload):
    outdir = Path(payload["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    outputs, scores = _RUNNERS[payload["task"]](payload, outdir)
    manifest = RunManifest(
        command=payload["task"],
        config_path=payload["config_path"],
        seed=payload["cfg"].seed,
        inputs=tuple(payload["input_paths"]),
        outputs=tuple(outputs),
        config_echo=_config_echo(payload["cfg"]),
    )
    manifest.write(outdir / "manifest.txt")
    return scores


def _write_sweep_table(path, rows, runs):
    keys = sorted(set().union(*(row.keys() for row in rows))) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "seed", "lambda"] + keys)
        for (label, seed, lam), row in zip(runs, rows):
            rendered = [f"{row[k]:.12g}" if k in row else "" for k in keys]
            writer.writerow([label, seed, f"{lam:.12g}"] + rendered)


def _cmd_task(args, cap):
    task = args.command
    file_options = _read_config_file(args.config) if args.config else {}
    input_paths, arrays = _load_task_inputs(task, args)
    base = dict(file_options)
    base.update(_flag_options(args))
    seeds = args.seeds or ([args.seed] if args.seed is not None
                           else [int(base.get("seed", 0))])
    lams = args.lambdas or [base.get("lam")]
    payloads = []
    run_keys = []
    for seed in seeds:
        for lam in lams:
            options = dict(base)
            options["seed"] = seed
            if lam is not None:
                options["lam"] = lam
            cfg = _build_config(task, options)
            label = _run_label(seed, lam, seeds, lams)
            outdir = Path(args.out) / label if label else Path(args.out)
            payloads.append(dict(
                task=task, cfg=cfg, outdir=str(outdir),
                config_path=args.config or "", input_paths=input_paths,
                **arrays,
            ))
            run_keys.append((label, seed, cfg.lam))
    results = _execute_all(payloads, args.jobs, cap)
    for payload, scores in zip(payloads, results):
        shown = ", ".join(f"{key}={scores[key]:.6g}"
                          for key in ("psnr", "r_square", "final_loss")
                          if key in scores)
        print(f"wrote {payload['outdir']}" + (f" ({shown})" if shown else ""))
    if len(payloads) > 1:
        top = Path(args.out)
        top.mkdir(parents=True, exist_ok=True)
        _write_sweep_table(top / "sweep.csv", results, run_keys)
        echo = _config_echo(payloads[0]["cfg"])
        echo["sweep.seeds"] = tuple(seeds)
        echo["sweep.lambdas"] = tuple(key[2] for key in run_keys[:len(lams)])
        RunManifest(task, args.config or "", tuple(seeds), tuple(input_paths),
                    ("sweep.csv",), echo).write(top / "manifest.txt")
        print(f"wrote {top / 'sweep.csv'}")
    return 0


# -- input loading ----------------------------------------------------------------

def _read_image_checked(path):
    try:
        return read_image(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    except ValueError as exc:
        raise DataError(str(exc))


def _read_table_checked(reader, path, *extra):
    try:
        return reader(path, *extra)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    except ValueError as exc:
        raise DataError(str(exc))


def _csv_column_count(path):
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    if not header:
        raise DataError(f"{path}: empty file")
    return len(header)


def _read_query(path, columns):
    """Query rows: either coordinates only, or coordinates plus reference values."""
    n_coords = len(columns) - 1
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    header = tuple(h.strip() for h in header) if header else ()
    if header == columns:
        table = _read_table_checked(read_observation_table, path, n_coords)
        return table.coords, table.values
    if header != columns[:-1]:
        raise DataError(
            f"{path}: header must be {','.join(columns)} or "
            f"{','.join(columns[:-1])}"
        )
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_coords:
                raise DataError(f"{path}:{lineno}: expected {n_coords} columns")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field")
    if not rows:
        raise DataError(f"{path}: no query rows")
    return np.asarray(rows, dtype=np.float64), None


def _load_task_inputs(task, args):
    if task == "denoise":
        image = _read_image_checked(args.input)
        paths = [args.input]
        reference = None
        if args.ref:
            reference = _read_image_checked(args.ref)
            if reference.shape != image.shape:
                raise DataError("reference image shape does not match the input")
            paths.append(args.ref)
        return paths, dict(image=image, reference=reference)

    if task == "inpaint":
        paths = [args.input]
        if args.input.lower().endswith(".csv"):
            n_dims = _csv_column_count(args.input) - 1
            if n_dims not in (2, 3):
                raise DataError(f"{args.input}: inpainting tables need 2 or 3 "
                                f"coordinate columns, found {n_dims}")
            table = _read_table_checked(read_observation_table, args.input, n_dims)
            try:
                image, mask = partial_table_to_grid(table, args.shape)
            except ValueError as exc:
                raise DataError(str(exc))
        else:
            if not args.mask:
                raise UsageError("--mask is required when --in is an image")
            image = _read_image_checked(args.input)
            mask = _read_image_checked(args.mask) > 0.5
            paths.append(args.mask)
            if mask.shape == image.shape[:2] and image.ndim == 3:
                mask = np.broadcast_to(mask[:, :, None], image.shape).copy()
            if mask.shape != image.shape:
                raise DataError("mask shape does not match the input image")
            image = image * mask
        reference = None
        if args.ref:
            reference = _read_image_checked(args.ref)
            if reference.shape != image.shape:
                raise DataError("reference image shape does not match the input")
            paths.append(args.ref)
        return paths, dict(image=image, mask=mask, reference=reference)

    if task == "hsi":
        bands = [_read_image_checked(p) for p in args.input]
        for path, band in zip(args.input, bands):
            if band.ndim != 2:
                raise DataError(f"{path}: cube bands must be single-channel")
            if band.shape != bands[0].shape:
                raise DataError(f"{path}: band shape {band.shape} differs from "
                                f"{bands[0].shape}")
        cube = np.stack(bands, axis=2)
        paths = list(args.input)
        reference = None
        if args.ref:
            if len(args.ref) != len(args.input):
                raise DataError("--ref must list one image per input band")
            ref_bands = [_read_image_checked(p) for p in args.ref]
            for path, band in zip(args.ref, ref_bands):
                if band.shape != bands[0].shape:
                    raise DataError(f"{path}: reference band shape mismatch")
            reference = np.stack(ref_bands, axis=2)
            paths += list(args.ref)
        return paths, dict(cube=cube, reference=reference)

    columns = POINTCLOUD_COLUMNS if task == "pointcloud" else TRANSCRIPTOMICS_COLUMNS
    reader = read_pointcloud_table if task == "pointcloud" else read_transcriptomics_table
    table = _read_table_checked(reader, args.input)
    query_coords, query_ref = _read_query(args.query, columns)
    return [args.input, args.query], dict(
        table=table, query_coords=query_coords, query_ref=query_ref,
    )


# -- per-task runners --------------------------------------------------------------

def _panel(array):
    return array if array.ndim == 2 else array.mean(axis=2)


def _write_array_images(outdir, stem, array, force_bands=False):
    array = np.asarray(array, dtype=np.float64)
    if not force_bands and (array.ndim == 2 or array.shape[2] in (1, 3)):
        write_image(outdir / f"{stem}.png", array)
        return [f"{stem}.png"]
    names = []
    for k in range(array.shape[2]):
        name = f"{stem}_band{k:02d}.png"
        write_image(outdir / name, array[:, :, k])
        names.append(name)
    return names


def _write_trace_outputs(outdir, fits):
    with open(outdir / "loss_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fit", "iteration", "loss"])
        for k, fit in enumerate(fits):
            for i, value in enumerate(fit.loss_trace, start=1):
                writer.writerow([k, i, f"{value:.17g}"])
    if len(fits) == 1:
        traces = {"loss": fits[0].loss_trace}
    else:
        traces = {f"fit{k}": fit.loss_trace for k, fit in enumerate(fits)}
    figures.save_loss_trace(outdir / "loss_trace.png", traces)
    return ["loss_trace.csv", "loss_trace.png"]


def _fit_scores(fits):
    return {
        "final_loss": float(fits[-1].loss_trace[-1]),
        "iterations": float(sum(fit.iterations_run for fit in fits)),
    }


def _image_scores(reference, estimate, prefix=""):
    # ssim needs room for its 11x11 window; skip it on smaller images.
    with_ssim = min(reference.shape[:2]) >= 11
    scores = {}
    if reference.ndim == 2:
        scores[f"{prefix}psnr"] = psnr(reference, estimate)
        if with_ssim:
            scores[f"{prefix}ssim"] = ssim(reference, estimate)
        return scores
    per_psnr, per_ssim = [], []
    for c in range(reference.shape[2]):
        p = psnr(reference[:, :, c], estimate[:, :, c])
        scores[f"{prefix}channel{c}.psnr"] = p
        per_psnr.append(p)
        if with_ssim:
            s = ssim(reference[:, :, c], estimate[:, :, c])
            scores[f"{prefix}channel{c}.ssim"] = s
            per_ssim.append(s)
    scores[f"{prefix}psnr"] = float(np.mean(per_psnr))
    if with_ssim:
        scores[f"{prefix}ssim"] = float(np.mean(per_ssim))
    return scores


def _run_denoise(payload, outdir):
    cfg, image = payload["cfg"], payload["image"]
    reference = payload["reference"]
    result = denoise_image(image, cfg)
    outputs = _write_array_images(outdir, "recovered", result.output)
    panels = {"input": _panel(image), "recovered": _panel(result.output)}
    if reference is not None:
        panels["reference"] = _panel(reference)
    figures.save_image_panels(outdir / "panels.png", panels)
    outputs.append("panels.png")
    outputs += _write_trace_outputs(outdir, result.fits)
    scores = _fit_scores(result.fits)
    if reference is not None:
        scores.update(_image_scores(reference, result.output))
        scores.update(_image_scores(reference, image, prefix="input."))
    write_metrics(scores, outdir / "metrics.txt", outdir / "metrics.json")
    outputs += ["metrics.txt", "metrics.json"]
    return outputs, scores


def _run_inpaint(payload, outdir):
    cfg, image, mask = payload["cfg"], payload["image"], payload["mask"]
    reference = payload["reference"]
    result = inpaint_image(image, mask, cfg)
    outputs = _write_array_images(outdir, "recovered", result.output)
    panels = {"observed": _panel(image * mask), "recovered": _panel(result.output)}
    if reference is not None:
        panels["reference"] = _panel(reference)
    figures.save_image_panels(outdir / "panels.png", panels)
    outputs.append("panels.png")
    outputs += _write_trace_outputs(outdir, result.fits)
    scores = _fit_scores(result.fits)
    scores["observed_fraction"] = float(np.mean(mask))
    if reference is not None:
        scores.update(_image_scores(reference, result.output))
    write_metrics(scores, outdir / "metrics.txt", outdir / "metrics.json")
    outputs += ["metrics.txt", "metrics.json"]
    return outputs, scores


def _run_hsi(payload, outdir):
    cfg, cube = payload["cfg"], payload["cube"]
    reference = payload["reference"]
    result = hsi_mixed_denoise(cube, cfg)
    outputs = _write_array_images(outdir, "recovered", result.output, force_bands=True)
    outputs += _write_array_images(outdir, "sparse", np.abs(result.sparse),
                                   force_bands=True)
    middle = cube.shape[2] // 2
    panels = {
        "observed": cube[:, :, middle],
        "recovered": result.output[:, :, middle],
        "sparse magnitude": np.abs(result.sparse[:, :, middle]),
    }
    figures.save_image_panels(outdir / "panels.png", panels)
    outputs.append("panels.png")
    outputs += _write_trace_outputs(outdir, result.fits)
    scores = _fit_scores(result.fits)
    scores["sparse_fraction"] = float(np.mean(result.sparse != 0.0))
    if reference is not None:
        scores.update(_image_scores(reference, result.output))
    write_metrics(scores, outdir / "metrics.txt", outdir / "metrics.json")
    outputs += ["metrics.txt", "metrics.json"]
    return outputs, scores


def _run_scattered(payload, outdir):
    task, cfg = payload["task"], payload["cfg"]
    table, query_coords = payload["table"], payload["query_coords"]
    query_ref = payload["query_ref"]
    if task == "pointcloud":
        result = recover_pointcloud(table, query_coords, cfg)
        columns = POINTCLOUD_COLUMNS
    else:
        result = reconstruct_transcriptomics(table, query_coords, cfg)
        columns = TRANSCRIPTOMICS_COLUMNS
    predictions = ObservationTable(query_coords, result.output)
    write_observation_table(predictions, outdir / "predictions.csv", columns)
    outputs = ["predictions.csv"]
    figures.save_scatter_panels(outdir / "observations.png",
                                table.coords, {"observed": table.values})
    outputs.append("observations.png")
    panels = {"predicted": result.output}
    if query_ref is not None:
        panels["reference"] = query_ref
    figures.save_scatter_panels(outdir / "predictions.png", query_coords, panels)
    outputs.append("predictions.png")
    outputs += _write_trace_outputs(outdir, result.fits)
    scores = _fit_scores(result.fits)
    if query_ref is not None:
        nrmse, r_square = mse_rsquare(query_ref, result.output)
        scores["mse"] = float(np.mean((query_ref - result.output) ** 2))
        scores["nrmse"] = nrmse
        scores["r_square"] = r_square
    write_metrics(scores, outdir / "metrics.txt", outdir / "metrics.json")
    outputs += ["metrics.txt", "metrics.json"]
    return outputs, scores


_RUNNERS = {
    "denoise": _run_denoise,
    "inpaint": _run_inpaint,
    "hsi": _run_hsi,
    "pointcloud": _run_scattered,
    "transcriptomics": _run_scattered,
}


# -- varlab and gradcheck commands ---------------------------------------------------

def _cmd_varlab(args, cap):
    fn = varlab.get_function(args.fn)
    out_csv = Path(args.out)
    if out_csv.parent and not out_csv.parent.exists():
        out_csv.parent.mkdir(parents=True, exist_ok=True)
    stem = out_csv.with_suffix("")
    echo = {"study": args.study, "fn": args.fn}
    if args.study == "truncation":
        ns = []
        n = args.nmin
        while n <= args.nmax:
            ns.append(n)
            n *= 2
        report = varlab.truncation_error_study(fn, tuple(ns))
        varlab.write_error_report(report, out_csv)
        figures.save_error_curves(f"{stem}_curves.png", report)
        echo.update(nmin=args.nmin, nmax=args.nmax, exact=report.exact)
        for mode in sorted(report.slopes):
            echo[f"slope.{mode}"] = report.slopes[mode]
        print(f"wrote {out_csv} ({len(ns)} partition counts, "
              f"exact TV {report.exact:.6g})")
    else:
        rows = []
        for n in args.n:
            j = args.j if args.j is not None else n // 2
            if not 1 <= j < n:
                raise UsageError(f"--j must lie strictly inside the partition "
                                 f"(1..{n - 1} for n={n})")
            for delta in args.delta:
                try:
                    shift = varlab.nonuniform_shift_experiment(fn, n, j, delta)
                except ValueError as exc:
                    raise UsageError(f"--study shift: {exc}")
                rows.append((n, j, delta, shift.r_uniform, shift.r_shifted))
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "j", "delta", "r_uniform", "r_shifted",
                             "difference"])
            for n, j, delta, r_uniform, r_shifted in rows:
                writer.writerow([n, j, f"{delta:.17g}", f"{r_uniform:.17g}",
                                 f"{r_shifted:.17g}",
                                 f"{r_uniform - r_shifted:.17g}"])
        figures.save_shift_curves(f"{stem}_curves.png", rows, fn_name=args.fn)
        echo.update(n=tuple(args.n), delta=tuple(args.delta),
                    j="" if args.j is None else args.j)
        improved = sum(r[3] > r[4] for r in rows)
        print(f"wrote {out_csv} (shift reduced the error in {improved} of "
              f"{len(rows)} settings)")
    outputs = (out_csv.name, f"{stem.name}_curves.png")
    RunManifest("varlab", "", "", (), outputs, echo).write(f"{stem}_manifest.txt")
    return 0


def _cmd_gradcheck(args, cap):
    records = gradcheck.run_gradient_suite() + gradcheck.run_derivative_suite()
    lines = [record.line() for record in records]
    n_failed = sum(not record.passed for record in records)
    lines.append(f"{len(records) - n_failed} of {len(records)} checks passed")
    for line in lines:
        print(line)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "gradcheck.txt", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        echo = {"architectures": gradcheck.GRADIENT_ARCHITECTURES,
                "regularizers": gradcheck.REGULARIZER_KINDS}
        RunManifest("gradcheck", "", "", (), ("gradcheck.txt",), echo).write(
            outdir / "manifest.txt")
    return 1 if n_failed else 0


_COMMANDS = {
    "denoise": _cmd_task,
    "inpaint": _cmd_task,
    "hsi": _cmd_task,
    "pointcloud": _cmd_task,
    "transcriptomics": _cmd_task,
    "varlab": _cmd_varlab,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
        _validate_args(args)
        cap = _worker_cap()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args, cap)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
