"""Command line front end.

    driftkf simulate   --case static --seed 1 --out runs/
    driftkf identify   --method enkf_star --in runs/signal_static.csv --out runs/
    driftkf montecarlo --method enkf --case alternating --n-init 50 --out runs/
    driftkf gridsearch --seeds 5 --out runs/

Settings resolve as: built-in defaults < ``--config`` file < ``DRIFTKF_SEED``
(seed only) < command-line flags.  Exit status is 0 on success, 1 when a
numerical divergence was flagged and 2 on usage or I/O errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, enkf, harness
from .mill import CoefficientSet, ProcessSpec, ToolSpec
from .simulate import CASES, NoiseSpec, TrajectoryCase, add_noise, noise_sigma, ploughing_filter, read_signal_csv, simulate_run, write_signal_csv

log = logging.getLogger("driftkf")

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2
SEED_ENV = "DRIFTKF_SEED"

# config-file key -> (section, field, type)
CONFIG_KEYS = {
    "D": ("tool", "diameter", float),
    "N_z": ("tool", "tooth_count", int),
    "beta": ("tool", "helix_angle", float),
    "gamma": ("tool", "rake_angle", float),
    "disk_count": ("tool", "disk_count", int),
    "f_z": ("process", "feed_per_tooth", float),
    "f": ("process", "feed_per_tooth", float),
    "v_c": ("process", "cutting_velocity", float),
    "a_p": ("process", "depth_of_cut", float),
    "a_e": ("process", "width_of_cut", float),
    "f_s": ("process", "sample_rate", float),
    "milling_direction": ("process", "milling_direction", str),
    "k_t": ("base", "k_t", float),
    "m_t": ("base", "m_t", float),
    "k_r": ("base", "k_r", float),
    "m_r": ("base", "m_r", float),
    "revs": ("bench", "n_rev", int),
    "snr": ("bench", "snr", float),
    "h_th": ("bench", "h_th", float),
    "J": ("bench", "ensemble_size", int),
    "subset_fraction": ("bench", "subset_fraction", float),
    "rho": ("bench", "rho", float),
    "P0": ("bench", "p0_scale", float),
    "seed": ("run", "seed", int),
}


class UsageError(Exception):
    pass


def parse_config(path) -> dict[str, str]:
    """Read flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(args) -> tuple[harness.Benchmark, int]:
    sections = {"tool": {}, "process": {}, "base": {}, "bench": {}, "run": {}}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        for key, value in parse_config(args.config).items():
            section, name, kind = CONFIG_KEYS[key]
            try:
                sections[section][name] = kind(value)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {value!r}") from exc
    if os.environ.get(SEED_ENV):
        try:
            sections["run"]["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer") from exc
    for flag, name in (("revs", "n_rev"), ("snr", "snr")):
        if getattr(args, flag, None) is not None:
            sections["bench"][name] = getattr(args, flag)
    if args.seed is not None:
        sections["run"]["seed"] = args.seed
    try:
        base = dataclasses.replace(harness.Benchmark().base, **sections["base"])
        bench = harness.Benchmark(
            tool=ToolSpec(**sections["tool"]),
            process=ProcessSpec(**sections["process"]),
            base=CoefficientSet(**dataclasses.asdict(base)),
            **sections["bench"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return bench, sections["run"].get("seed", 0)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_manifest(out_dir: Path, command: str, bench, seed, params, outputs, elapsed, extra=None):
    config = {"command": command, "bench": _jsonable(bench), "seed": seed, "params": _jsonable(params)}
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    manifest = {
        "config_digest": digest,
        "seed": seed,
        "tool": _jsonable(bench.tool),
        "process": _jsonable(bench.process),
        "version": __version__,
        "command": command,
        "params": _jsonable(params),
        "outputs": sorted(Path(p).name for p in outputs),
        "timing_s": {command: round(elapsed, 3)},
    }
    if extra:
        manifest.update(_jsonable(extra))
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    bench, seed = resolve(args)
    clean = simulate_run(bench.tool, bench.process, TrajectoryCase(args.case), bench.n_rev, bench.base)
    series = add_noise(clean, NoiseSpec(bench.snr, seed))
    out = _out_dir(args.out)
    path = out / f"signal_{args.case}.csv"
    write_signal_csv(series, path)
    write_manifest(out, "simulate", bench, seed, {"case": args.case}, [path], time.perf_counter() - t0)
    print(path)
    return EXIT_OK


def _check_method_flags(args):
    if args.method == "rls" and (args.step is not None or args.lam is not None):
        raise UsageError("--step/--lambda do not apply to --method rls")
    if args.method == "enkf" and (args.step is not None or args.lam is not None):
        log.warning("--step/--lambda ignored for the classic filter")
    step = args.step if args.step is not None else 50
    lam = args.lam if args.lam is not None else 10.0
    try:
        enkf.InflationPolicy(step=step, lam=lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return step, lam


def cmd_identify(args) -> int:
    t0 = time.perf_counter()
    step, lam = _check_method_flags(args)
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input file not found: {src}")
    bench, seed = resolve(args)
    try:
        series = read_signal_csv(src, bench.tool, bench.process)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {src}: {exc}") from exc
    sigma = noise_sigma(series, bench.snr)
    series = ploughing_filter(series, bench.h_th)
    if len(series) == 0:
        raise UsageError("no sample passes the ploughing threshold")
    result = harness.identify(series, args.method, np.diag(np.square(sigma)), seed=seed,
                              n_init=args.n_init, step=step, lam=lam, bench=bench)
    label = args.label or src.stem
    out = _out_dir(args.out)
    outputs = harness.write_experiment_csvs(result, out, f"{args.method}_{label}")
    write_manifest(out, "identify", bench, seed,
                   {"method": args.method, "step": step, "lambda": lam, "input": str(src),
                    "n_init": args.n_init},
                   outputs, time.perf_counter() - t0,
                   {"divergent_runs": result.divergent, "singular_steps": result.singular})
    return EXIT_DIVERGED if result.divergent else EXIT_OK


def cmd_montecarlo(args) -> int:
    t0 = time.perf_counter()
    step, lam = _check_method_flags(args)
    bench, seed = resolve(args)
    cfg = harness.ExperimentConfig(case=args.case, method=args.method, n_init=args.n_init,
                                   step=step, lam=lam, seed=seed)
    result = harness.run_experiment(cfg, bench)
    out = _out_dir(args.out)
    outputs = harness.write_experiment_csvs(result, out, f"{args.method}_{args.case}")
    write_manifest(out, "montecarlo", bench, seed, cfg, outputs, time.perf_counter() - t0,
                   {"divergent_runs": result.divergent, "singular_steps": result.singular,
                    "rms": result.errors.rms()})
    print(f"rms {result.errors.rms():.6g} N over {result.n_samples} samples'")
    return EXIT_DIVERGED if result.divergent else EXIT_OK


def cmd_gridsearch(args) -> int:
    t0 = time.perf_counter()
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    bench, seed = resolve(args)
    seeds = [seed + i for i in range(args.seeds)]
    grid = harness.grid_search(bench, seeds=seeds, n_init=args.n_init)
    table = grid.mean_table()
    out = _out_dir(args.out)
    path = out / "rms_table.csv"
    table.to_csv(path)
    votes = {}
    for t in grid.tables.values():
        for key, ok in harness.table_orderings(t).items():
            votes[key] = votes.get(key, 0) + int(ok)
    report = {k: f"{v}/{len(seeds)}" for k, v in sorted(votes.items())}
    for key, frac in report.items():
        held = votes[key] * 2 > len(seeds)
        print(f"ordering ({key}): {frac} seeds {'PASS' if held else 'FAIL'}")
    write_manifest(out, "gridsearch", bench, seed, {"seeds": seeds, "n_init": args.n_init},
                   [path], time.perf_counter() - t0, {"orderings": report})
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftkf", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file with tool/process/coefficient settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--snr", type=float)
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("simulate", help="write a simulated force signal CSV")
    common(p)
    p.add_argument("--case", choices=CASES, default="static")
    p.add_argument("--revs", type=int)
    p.set_defaults(func=cmd_simulate)

    def method_flags(p):
        p.add_argument("--method", choices=harness.METHODS, default="enkf_star")
        p.add_argument("--step", type=int)
        p.add_argument("--lambda", dest="lam", type=float)

    p = sub.add_parser("identify", help="identify coefficients from a signal CSV")
    common(p)
    method_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--label", help="file tag (default: input file stem)")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("montecarlo", help="Monte Carlo envelopes over initial ensembles")
    common(p)
    method_flags(p)
    p.add_argument("--case", choices=CASES, default="static")
    p.add_argument("--n-init", type=int, default=50)
    p.add_argument("--revs", type=int)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("gridsearch", help="RMS table over inflation step and lambda")
    common(p)
    p.add_argument("--seeds", type=int, default=1, help="number of seeded repetitions")
    p.add_argument("--n-init", type=int, default=50)
    p.add_argument("--revs", type=int)
    p.set_defaults(func=cmd_gridsearch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n_init", 1) < 1:
        parser.error("--n-init must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"driftkf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
