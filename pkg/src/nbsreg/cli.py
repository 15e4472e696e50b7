"""``nbsreg`` command line: simulate, estimate, replicate.

Exit codes: 0 success, 1 model or runtime failure, 2 usage or input error.
Option values come from flags, then from ``--config FILE`` (JSON), then
from built-in defaults.  Every run writes ``manifest.json`` holding the
resolved options.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import CsvSchema, default_schema, ingest_csv, validate, write_csv
from .errors import NbsError, SchemaError
from .inference import BootstrapConfig, bootstrap_pipeline, coefficient_test
from .pipeline import PipelineSpec, run_pipeline
from .regression import CedRow, ced_svg, profile_label
from .serialize import dumps, model_to_dict
from .simulation import (ScenarioConfig, generate_scenario_data, generate_zero_inflated_analogue,
                         run_study)

log = logging.getLogger("nbsreg")

SCENARIOS = ("effect", "null", "survival-confounded", "cost-confounded", "zero-inflated")

DEFAULTS = {
    "simulate": {"scenario": None, "n": 500, "censoring": 0.10, "level": "high", "seed": 0, "out": "."},
    "estimate": {"data": None, "schema": None, "x": None, "l": None, "categorical": None,
                 "lambda": "1", "profiles": None, "M": 10_000, "n_omega": 30, "bootstrap": 0,
                 "seed": 0, "threads": 1, "out": ".", "survival_terms": None, "cost_terms": None,
                 "cost_model": "lognormal", "censoring_model": "cox", "nbs_terms": None,
                 "quantile_mode": "auto", "alpha": 0.05, "ci_method": "symmetric",
                 "primary_range": None, "test": None},
    "replicate": {"table": None, "sims": 200, "boot": 200, "n": None, "censoring": None,
                  "confounding": "both", "level": "low,medium,high", "M": 5000, "n_omega": 30,
                  "seed": 2024, "threads": 1, "out": ".", "oracle_n": 1_000_000},
}


class UsageError(Exception):
    pass


# -- plumbing ----------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_with(path: Path, writer) -> None:
    """Atomic write for functions that take a path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _split(s, conv=str):
    if s is None:
        return None
    if isinstance(s, (list, tuple)):
        return [conv(v) for v in s]
    return [conv(v.strip()) for v in str(s).split(",") if v.strip()]


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(file_opts) - set(opts)
        if unknown:
            raise UsageError(f"unknown option(s) in config file: {sorted(unknown)}")
        opts.update(file_opts)
    for k in opts:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def write_manifest(out: Path, command: str, opts: dict, extra: dict | None = None) -> None:
    manifest = {"command": command, "version": __version__, "options": opts,
                "argv": sys.argv[1:], "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    manifest.update(extra or {})
    atomic_write(out / "manifest.json", dumps(manifest, indent=2) + "\n")


# -- simulate ----------------------------------------------------------------------

def cmd_simulate(opts: dict) -> int:
    scen = opts["scenario"]
    if scen not in SCENARIOS:
        raise UsageError(f"unknown scenario {scen!r}; choose from {', '.join(SCENARIOS)}")
    out = Path(opts["out"])
    rng = np.random.default_rng(int(opts["seed"]))
    params = {}
    if scen == "zero-inflated":
        data = generate_zero_inflated_analogue(int(opts["n"]), rng)
    else:
        confounding = {"survival-confounded": "survival", "cost-confounded": "cost"}.get(scen, "none")
        try:
            cfg = ScenarioConfig(n=int(opts["n"]), censoring_target=float(opts["censoring"]),
                                 effect_present=scen != "null", confounding=confounding,
                                 level=opts["level"])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        data = generate_scenario_data(cfg, rng)
        params = {"gamma": cfg.gamma, "beta_x": cfg.beta_x, "beta_ax": cfg.beta_ax,
                  "strengths": dict(zip(("gamma1", "eta1", "gamma2", "eta2"), cfg.strengths))}
    schema = default_schema(data)
    atomic_write_with(out / "data.csv", lambda p: write_csv(data, p, schema))
    atomic_write(out / "schema.json", json.dumps(schema.to_dict(), indent=2) + "\n")
    realized = float(data.cost_censored.mean())
    write_manifest(out, "simulate", opts, {"parameters": params, "n": data.n,
                                           "realized_censoring": realized,
                                           "outputs": ["data.csv", "schema.json"]})
    print(f"wrote {data.n} rows to {out / 'data.csv'} (censoring {realized:.3f})")
    return 0


# -- estimate ----------------------------------------------------------------------

def _load_schema(opts) -> CsvSchema:
    if opts["schema"]:
        try:
            return CsvSchema.load(opts["schema"])
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read schema {opts['schema']}: {exc}") from exc
    sidecar = Path(opts["data"]).with_name("schema.json")
    if opts["x"] is None and sidecar.exists():
        return CsvSchema.load(sidecar)
    cat = _split(opts["categorical"]) or []
    return CsvSchema("A", "Z", "Y", "delta_star", tuple(_split(opts["x"]) or ()),
                     tuple(_split(opts["l"]) or ()), None, {k: None for k in cat})


def _profiles(opts):
    p = opts["profiles"]
    if p is None:
        return ()
    if isinstance(p, str):
        try:
            p = json.loads(p)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--profiles must be JSON: {exc}") from exc
    if isinstance(p, dict):
        p = [p]
    if not isinstance(p, list) or not all(isinstance(v, dict) for v in p):
        raise UsageError("--profiles must be a JSON object or a list of objects")
    return tuple(p)


def _default_tests(spec: PipelineSpec, names) -> list[tuple[str, list[str]]]:
    """One test per effect modifier covering all of its columns."""
    tests = []
    for var in spec.nbs_terms:
        cols = [n for n in names if n == var or n.startswith(f"{var}[")]
        if cols:
            tests.append((var, cols))
    return tests


def cmd_estimate(opts: dict) -> int:
    if not opts["data"]:
        raise UsageError("--data is required")
    if not Path(opts["data"]).exists():
        raise UsageError(f"data file {opts['data']} does not exist")
    try:
        lambdas = _split(opts["lambda"], float)
    except ValueError as exc:
        raise UsageError(f"--lambda must be a comma-separated list of numbers: {exc}") from exc
    if not lambdas or any(not v > 0 for v in lambdas):
        raise UsageError("--lambda values must be positive")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise UsageError("--lambda values must be strictly increasing")
    B = int(opts["bootstrap"])
    if B == 1 or B < 0:
        raise UsageError("--bootstrap must be 0 or at least 2")
    schema = _load_schema(opts)
    data = ingest_csv(opts["data"], schema)
    problems = validate(data)
    if problems:
        raise SchemaError("input failed validation: " + "; ".join(problems[:20]))
    try:
        spec = PipelineSpec(
            lambdas=tuple(lambdas), profiles=_profiles(opts),
            survival_terms=_split(opts["survival_terms"]), cost_terms=_split(opts["cost_terms"]),
            cost_model=opts["cost_model"], censoring_model=opts["censoring_model"],
            nbs_terms=_split(opts["nbs_terms"]), quantile_mode=opts["quantile_mode"],
            m_draws=int(opts["M"]), n_omega=int(opts["n_omega"]), seed=int(opts["seed"]),
        ).resolve(data)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(opts["out"])
    point = run_pipeline(data, spec)
    boot = None
    if B:
        boot = bootstrap_pipeline(data, spec, BootstrapConfig(B, int(opts["seed"]), float(opts["alpha"]),
                                                              opts["ci_method"], int(opts["threads"])),
                                  point=point)
    names = list(point.coefficient_names)
    tests = [(t, [t]) if t in names else (t, [n for n in names if n.startswith(f"{t}[")])
             for t in (_split(opts["test"]) or [])] or _default_tests(spec, names)
    primary = _split(opts["primary_range"], float)
    estimates, coefs, test_out = [], [], []
    theta_ci = boot.theta_ci() if boot else None
    coef_ci = boot.coefficient_ci() if boot else None
    for i, lam in enumerate(spec.lambdas):
        for j, prof in enumerate(spec.profiles):
            row = {"lambda": lam, "profile": prof, "theta": float(point.thetas[i, j])}
            if boot:
                row.update(se=float(boot.theta_se[i, j]), ci_lower=float(theta_ci[i, j, 0]),
                           ci_upper=float(theta_ci[i, j, 1]))
            estimates.append(row)
        crow = {"lambda": lam, "names": names, "estimate": point.coefficients[i].tolist()}
        if boot:
            crow.update(se=boot.coefficient_se[i].tolist(), ci=coef_ci[i].tolist())
        coefs.append(crow)
        if boot:
            for label, cols in tests:
                if not cols:
                    raise UsageError(f"--test {label!r} matches no coefficient; available: {names}")
                res = coefficient_test(boot, cols, i)
                test_out.append({"lambda": lam, "hypothesis": label, "coefficients": cols,
                                 "method": res.method, "statistic": res.statistic,
                                 "p_value": res.p_value, "reject": res.reject})
    results = {
        "n": data.n, "spec": spec.to_dict(), "estimates": estimates, "coefficients": coefs,
        "models": {"survival": model_to_dict(point.survival_fit),
                   "censoring": model_to_dict(point.censoring_model),
                   "cost": model_to_dict(point.cost_fit)},
    }
    if boot:
        results["tests"] = test_out
        results["bootstrap"] = {"replicates": B, "successful": boot.n_ok, "failures": list(boot.failures),
                                "alpha": float(opts["alpha"]), "ci_method": opts["ci_method"]}
    rows = [CedRow(e["lambda"], e["profile"], e["theta"], e.get("ci_lower"), e.get("ci_upper"),
                   primary is None or primary[0] <= e["lambda"] <= primary[-1]) for e in estimates]
    from .regression import write_ced_csv
    atomic_write(out / "results.json", dumps(results, indent=2) + "\n")
    atomic_write_with(out / "ced.csv", lambda p: write_ced_csv(rows, p))
    atomic_write(out / "ced.svg", ced_svg(rows, title="NBS by willingness to pay"))
    write_manifest(out, "estimate", opts, {"schema": schema.to_dict(), "resolved_spec": spec.to_dict(),
                                           "outputs": ["results.json", "ced.csv", "ced.svg"]})
    for e in estimates:
        ci = f"  [{e['ci_lower']:.3f}, {e['ci_upper']:.3f}]" if "ci_lower" in e else ""
        print(f"lambda={e['lambda']:g}  {profile_label(e['profile'])}  theta={e['theta']:.3f}{ci}")
    for t in test_out:
        print(f"lambda={t['lambda']:g}  H0: {t['hypothesis']} = 0  p={t['p_value']:.3f}")
    return 0


# -- replicate ---------------------------------------------------------------------

def cmd_replicate(opts: dict) -> int:
    table = opts["table"]
    if table not in (1, 2, 3):
        raise UsageError("--table must be 1, 2 or 3")
    out = Path(opts["out"])
    base = dict(n_sims=int(opts["sims"]), n_boot=int(opts["boot"]), m_draws=int(opts["M"]),
                n_omega=int(opts["n_omega"]), seed=int(opts["seed"]), n_jobs=int(opts["threads"]))
    configs = []
    try:
        if table in (1, 2):
            ns = _split(opts["n"], int) or [500]
            cens = _split(opts["censoring"], float) or [0.10 if table == 1 else 0.30]
            for c in cens:
                for n in ns:
                    configs.append(ScenarioConfig(n=n, censoring_target=c, effect_present=table == 1, **base))
        else:
            kinds = ["survival", "cost"] if opts["confounding"] == "both" else [opts["confounding"]]
            ns = _split(opts["n"], int) or [5000]
            for kind in kinds:
                for level in _split(opts["level"]):
                    configs.append(ScenarioConfig(n=ns[0], censoring_target=0.30, confounding=kind,
                                                  level=level, **base))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    reports = []
    for cfg in configs:
        log.info("running %s", cfg)
        rep = run_study(cfg, n_oracle=int(opts["oracle_n"]))
        reports.append(rep)
    header = ["confounding", "level"] + list(reports[0].COLUMNS)
    lines = [header]
    for rep in reports:
        c = rep.config
        for row in rep.table():
            lines.append([c.confounding, c.level if c.confounding != "none" else ""] +
                         [("%.3f" % v if isinstance(v, float) else str(v)) for v in row])
    csv_text = "\n".join(",".join(r) for r in lines) + "\n"
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    txt = "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in lines) + "\n"
    atomic_write(out / f"table{table}.csv", csv_text)
    atomic_write(out / f"table{table}.txt", txt)
    write_manifest(out, "replicate", opts, {"outputs": [f"table{table}.csv", f"table{table}.txt"],
                                            "failures": [f for r in reports for f in r.failures]})
    sys.stdout.write(txt)
    return 0


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbsreg", description="Covariate-adjusted net benefit separation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated dataset")
    s.add_argument("--config")
    s.add_argument("--scenario", help=", ".join(SCENARIOS))
    s.add_argument("--n", type=int)
    s.add_argument("--censoring", type=float, help="0.10, 0.30 or 0.50")
    s.add_argument("--level", choices=("low", "medium", "high"))
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    e = sub.add_parser("estimate", help="estimate conditional NBS from a CSV file")
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--schema", help="JSON column mapping (default: schema.json next to the data)")
    e.add_argument("--x", help="effect modifier columns, comma separated")
    e.add_argument("--l", help="confounder columns, comma separated")
    e.add_argument("--categorical", help="categorical columns, comma separated")
    e.add_argument("--lambda", help="willingness-to-pay values, comma separated")
    e.add_argument("--profiles", help='JSON, e.g. [{"x": 0}, {"x": 1}]')
    e.add_argument("--M", type=int, help="Monte Carlo draws per arm")
    e.add_argument("--n-omega", dest="n_omega", type=int)
    e.add_argument("--bootstrap", type=int, help="replicates (0 for point estimates only)")
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int)
    e.add_argument("--out")
    e.add_argument("--survival-terms", dest="survival_terms")
    e.add_argument("--cost-terms", dest="cost_terms")
    e.add_argument("--cost-model", dest="cost_model", choices=("lognormal", "zero_inflated"))
    e.add_argument("--censoring-model", dest="censoring_model", choices=("cox", "km"))
    e.add_argument("--nbs-terms", dest="nbs_terms")
    e.add_argument("--quantile-mode", dest="quantile_mode", choices=("auto", "empirical", "regression"))
    e.add_argument("--alpha", type=float)
    e.add_argument("--ci-method", dest="ci_method", choices=("symmetric", "normal"))
    e.add_argument("--primary-range", dest="primary_range", help="lo,hi willingness-to-pay range")
    e.add_argument("--test", help="coefficients or variables to test, comma separated")

    r = sub.add_parser("replicate", help="rerun a simulation table")
    r.add_argument("--config")
    r.add_argument("--table", type=int)
    r.add_argument("--sims", type=int)
    r.add_argument("--boot", type=int)
    r.add_argument("--n")
    r.add_argument("--censoring")
    r.add_argument("--confounding", choices=("survival", "cost", "both"))
    r.add_argument("--level")
    r.add_argument("--M", type=int)
    r.add_argument("--n-omega", dest="n_omega", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--oracle-n", dest="oracle_n", type=int)
    r.add_argument("--out")
    return p


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "replicate": cmd_replicate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args.command, args)
        return COMMANDS[args.command](opts)
    except (UsageError, SchemaError) as exc:
        print(f"nbsreg {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, SchemaError) and exc.locations:
            for row, msg in exc.locations[:20]:
                print(f"  row {row}: {msg}", file=sys.stderr)
        return 2
    except (NbsError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        print(f"nbsreg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
