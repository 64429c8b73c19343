"""Command-line front end.

``run`` loads a TNS1 tensor (optionally with a TNS1 mask) or generates a
synthetic problem from a key=value recipe file, runs one solver and writes
everything under ``--out DIR``:

* ``trace.csv``: one row per outer iteration;
* ``core.tns`` and ``factor_<n>.tns`` (``n`` from 1): the solution blocks;
* ``summary.txt``: final objective, relative error, densities, counts.

``compare`` runs two configurations on the same problem seed and writes
paired relerr-vs-iteration and relerr-vs-seconds tables.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import sys
from pathlib import Path

from . import tns
from .hopca import HopcaProblem, solve_hopca
from .masked import MaskedProblem, solve_masked
from .model import Problem, Regularization
from .solver import NumericalError, SolverOptions, density, solve
from .synth import SynthRecipe, generate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

TRACE_HEADER = ["iter", "seconds", "objective", "datafit", "relerr", "redo",
                "core_density", "factor_density"]
SOLVERS = ("apg1", "apg2", "hopca")

RECIPE_KEYS = {f.name for f in dataclasses.fields(SynthRecipe)} - {"extra"}
RUN_KEYS = {"solver", "tol", "max_iters", "max_seconds", "seed", "lambda_core",
            "lambda_factors", "mu", "signed_core", "extrapolation", "l_min",
            "delta_omega", "tensor", "mask", "core_dims", "clock"}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# -- config -------------------------------------------------------------------

def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RECIPE_KEYS | RUN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace("x", ",").split(",") if v.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optional_float(s: str):
    return None if s.strip().lower() in ("", "none", "off") else float(s)


_RECIPE_PARSERS = {
    "dims": _ints, "core_dims": _ints, "core_law": str,
    "factor_law": lambda s: s if "," not in s else tuple(v.strip() for v in s.split(",")),
    "identity_core": _bool, "sparsify_core": float,
    "sparsify_factors": lambda s: _floats(s) if "," in s else float(s),
    "factor_support": str, "factor_unit_max": _bool, "normalize_columns": _bool,
    "rescale_unit_max": _bool, "noise_snr": _optional_float, "mask_sr": _optional_float,
    "seed": int,
}


def recipe_from_config(cfg: dict[str, str]) -> SynthRecipe:
    kwargs = {}
    try:
        for key, value in cfg.items():
            if key in _RECIPE_PARSERS:
                kwargs[key] = _RECIPE_PARSERS[key](value)
        return SynthRecipe(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad recipe: {exc}") from exc


@dataclasses.dataclass
class RunConfig:
    solver: str = "apg2"
    seed: int = 0
    tol: float = SolverOptions.tol
    max_iters: int = SolverOptions.max_iters
    max_seconds: float = SolverOptions.max_seconds
    l_min: float = SolverOptions.l_min
    delta_omega: float = SolverOptions.delta_omega
    lambda_core: float = 0.0
    lambda_factors: tuple[float, ...] = (0.0,)
    mu: float = 0.0
    signed_core: bool = False
    extrapolation: bool = True
    clock: str = "wall"
    tensor: str | None = None
    mask: str | None = None
    core_dims: tuple[int, ...] | None = None
    recipe: dict = dataclasses.field(default_factory=dict)

    def options(self) -> SolverOptions:
        clock = (lambda: 0.0) if self.clock == "none" else SolverOptions.clock
        try:
            return SolverOptions(
                variant="apg1" if self.solver == "apg1" else "apg2",
                l_min=self.l_min, delta_omega=self.delta_omega, tol=self.tol,
                max_iters=self.max_iters, max_seconds=self.max_seconds, rng_seed=self.seed,
                extrapolation="fista" if self.extrapolation else "none", clock=clock)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_RUN_PARSERS = {
    "solver": str, "seed": int, "tol": float, "max_iters": int, "max_seconds": float,
    "l_min": float, "delta_omega": float, "lambda_core": float, "lambda_factors": _floats,
    "mu": float, "signed_core": _bool, "extrapolation": _bool, "clock": str,
    "tensor": str, "mask": str, "core_dims": _ints,
}


def build_config(args: argparse.Namespace, file_cfg: dict[str, str] | None = None) -> RunConfig:
    """Merge file settings with command-line overrides (the latter win)."""
    cfg = RunConfig()
    file_cfg = dict(file_cfg or {})
    try:
        for key, value in file_cfg.items():
            if key in _RUN_PARSERS:
                setattr(cfg, key, _RUN_PARSERS[key](value))
    except ValueError as exc:
        raise ConfigError(f"bad value: {exc}") from exc
    cfg.recipe = {k: v for k, v in file_cfg.items() if k in RECIPE_KEYS}
    for key in ("solver", "seed", "tol", "max_iters", "max_seconds", "lambda_core", "mu",
                "tensor", "mask", "core_dims", "clock"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "lambda_factors", None) is not None:
        cfg.lambda_factors = args.lambda_factors
    if getattr(args, "signed_core", False):
        cfg.signed_core = True
    if getattr(args, "no_extrapolation", False):
        cfg.extrapolation = False
    if cfg.solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {cfg.solver!r}")
    if cfg.clock not in ("wall", "none"):
        raise ConfigError("clock must be 'wall' or 'none'")
    if "seed" in file_cfg or getattr(args, "seed", None) is not None:
        cfg.recipe["seed"] = str(cfg.seed)
    return cfg


# -- problem construction ------------------------------------------------------

def _load(path: str):
    try:
        return tns.load(path)
    except tns.TNSFormatError as exc:
        raise DataError(str(exc)) from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def build_problem(cfg: RunConfig):
    """Return ``(problem, kind)`` with kind in ``{"full", "masked", "hopca"}``."""
    reg_kwargs = dict(lambda_core=cfg.lambda_core, lambda_factors=cfg.lambda_factors,
                      core_signed=cfg.signed_core or cfg.solver == "hopca")
    try:
        reg = Regularization(**reg_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.tensor is not None:
        if cfg.core_dims is None:
            raise ConfigError("--core-dims is required with --tensor")
        data = _load(cfg.tensor)
        mask = _load(cfg.mask) if cfg.mask is not None else None
        core_dims = cfg.core_dims
    elif cfg.recipe:
        recipe = recipe_from_config(cfg.recipe)
        p, _ = generate(recipe)
        mask = p.mask.astype(float) if isinstance(p, MaskedProblem) else None
        data = p.observed if mask is not None else p.data
        if cfg.mask is not None:
            mask = _load(cfg.mask)
        core_dims = cfg.core_dims or recipe.core_dims
    else:
        raise ConfigError("need --tensor or --generate")

    try:
        if cfg.solver == "hopca":
            if mask is not None:
                raise ConfigError("the hopca solver does not take a mask")
            lf = cfg.lambda_factors
            return HopcaProblem(data, core_dims, cfg.lambda_core, lf, cfg.mu), "hopca"
        if mask is not None:
            return MaskedProblem(data, mask, core_dims, reg), "masked"
        return Problem(data, core_dims, reg, check_nonneg=not cfg.signed_core), "full"
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def execute(cfg: RunConfig):
    problem, kind = build_problem(cfg)
    opts = cfg.options()
    if kind == "hopca":
        return solve_hopca(problem, opts=opts)
    if kind == "masked":
        return solve_masked(problem, opts=opts)
    return solve(problem, opts=opts)


# -- output --------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_trace(path: Path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            w.writerow([_fmt(getattr(r, name)) for name in TRACE_HEADER])


def summary_text(cfg: RunConfig, model, trace) -> str:
    last = trace.records[-1] if trace.records else None
    cd, fd = density(model)
    rows = [
        ("solver", cfg.solver),
        ("seed", cfg.seed),
        ("iterations", len(trace)),
        ("redo_count", trace.redo_count),
        ("stop_reason", trace.stop_reason),
        ("objective", last.objective if last else trace.initial_objective),
        ("relerr", last.relerr if last else math.nan),
        ("seconds", last.seconds if last else 0.0),
        ("core_density", cd),
        ("factor_density", fd),
    ]
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in rows)


def write_outputs(out: Path, cfg: RunConfig, model, trace) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", trace)
    tns.save(out / "core.tns", model.core)
    for n, a in enumerate(model.factors, 1):
        tns.save(out / f"factor_{n}.tns", a)
    (out / "summary.txt").write_text(summary_text(cfg, model, trace))


def write_comparison(out: Path, traces: dict[str, object]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    names = list(traces)
    longest = max(len(t) for t in traces.values())
    with open(out / "compare_iter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter"] + [f"relerr_{n}" for n in names])
        for i in range(longest):
            row = [i + 1]
            for n in names:
                recs = traces[n].records
                row.append(_fmt(recs[i].relerr) if i < len(recs) else "")
            w.writerow(row)
    with open(out / "compare_seconds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seconds", "relerr"])
        for n in names:
            for r in traces[n].records:
                w.writerow([n, _fmt(r.seconds), _fmt(r.relerr)])
    lines = []
    for tol in (1e-1, 1e-2, 1e-3, 1e-4):
        hits = {n: traces[n].iterations_to(tol) for n in names}
        lines.append(f"iterations_to_{tol:g} = " + ", ".join(f"{n}:{hits[n]}" for n in names) + "\n")
    (out / "compare_summary.txt").write_text("".join(lines))


# -- entry points --------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=SOLVERS)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--max-seconds", dest="max_seconds", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda-core", dest="lambda_core", type=float)
    p.add_argument("--lambda-factors", dest="lambda_factors", type=_floats,
                   help="comma-separated, one per mode or a single value")
    p.add_argument("--mu", type=float, help="orthogonality penalty (hopca)")
    p.add_argument("--signed-core", dest="signed_core", action="store_true")
    p.add_argument("--no-extrapolation", dest="no_extrapolation", action="store_true")
    p.add_argument("--clock", choices=("wall", "none"),
                   help="'none' records zero seconds so trace files are reproducible bit for bit")
    p.add_argument("--out", required=True, type=Path)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse-ntd", description="Sparse nonnegative Tucker decomposition.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one problem")
    run.add_argument("--tensor", help="TNS1 data file")
    run.add_argument("--mask", help="TNS1 0/1 mask of observed entries")
    run.add_argument("--generate", help="key=value recipe/solver config file")
    run.add_argument("--core-dims", dest="core_dims", type=_ints, help="e.g. 3,3,3")
    _add_common(run)

    cmp = sub.add_parser("compare", help="run two configs on the same problem seed")
    cmp.add_argument("config_a")
    cmp.add_argument("config_b")
    cmp.add_argument("--tensor")
    cmp.add_argument("--mask")
    cmp.add_argument("--core-dims", dest="core_dims", type=_ints)
    _add_common(cmp)
    return parser


def _run_command(args) -> int:
    file_cfg = read_config(args.generate) if args.generate else {}
    cfg = build_config(args, file_cfg)
    model, trace = execute(cfg)
    write_outputs(args.out, cfg, model, trace)
    return EXIT_OK


def _compare_command(args) -> int:
    cfgs = {}
    for name, path in (("a", args.config_a), ("b", args.config_b)):
        cfgs[name] = build_config(args, read_config(path))
    if cfgs["a"].seed != cfgs["b"].seed:
        raise ConfigError(f"configs use different seeds ({cfgs['a'].seed} vs {cfgs['b'].seed})")
    if cfgs["a"].recipe != cfgs["b"].recipe:
        raise ConfigError("configs describe different problems")
    traces = {}
    for name, cfg in cfgs.items():
        model, trace = execute(cfg)
        write_outputs(args.out / name, cfg, model, trace)
        traces[name] = trace
    write_comparison(args.out, traces)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "run":
            return _run_command(args)
        return _compare_command(args)
    except ConfigError as exc:
        print(f"sparse-ntd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"sparse-ntd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"sparse-ntd: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
