"""``peacocks`` command line.

Every run reads one JSON config, validates it against a strict schema,
dispatches to the library, and writes a JSON report (plus CSV tables where
the result is tabular). Exit codes: 0 pass, 1 violation found, 2 input or
config error, 3 inconclusive.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
from scipy import stats

from . import __version__
from .errors import DomainError, InputError
from .mtp2 import GaussianSpec, ProbTensor, abs_gaussian_mtp2, chain_joint, check_mtp2, gaussian_mtp2
from .peacock import (PeacockSpec, asian_scaling_check, build_functional, convex_order_exact,
                      convex_order_mc, integrability_diagnostics)
from .processes import (FiniteChain, ProcessModel, gamma_subordinator_joint, gw_rescaled_chain,
                        gw_transition, simulate)
from .reports import Verdict, to_jsonable
from .scm import cm_check, scm_bivariate_tp2, scm_randomized
from .totpos import (KernelGrid, builtin_kernel, check_log_concave, check_supermodular_logdensity,
                     check_tp2_grid)

SCHEMA_VERSION = "1.0"
COMMANDS = ("check-tp2", "check-mtp2", "check-scm", "check-logconcave", "simulate", "verify-peacock")
EXIT = {Verdict.PASS: 0, Verdict.FAIL: 1, Verdict.INCONCLUSIVE: 3}
EXIT_INPUT = 2


# ---------------------------------------------------------------- schemas

_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM, "minItems": 1}
_MATRIX = {"type": "array", "items": _NUMS, "minItems": 1}
_GRID = {"oneOf": [
    _NUMS,
    {"type": "object", "additionalProperties": False, "required": ["start", "stop", "num"],
     "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 2}}},
]}
_PARAMS = {"type": "object"}
_COMMON = {
    "command": {"enum": list(COMMANDS)},
    "name": {"type": "string"},
    "description": {"type": "string"},
    "expect": {"enum": ["pass", "fail", "inconclusive"]},
    "seed": {"type": "integer", "minimum": 0},
    "tol": {"type": "number", "minimum": 0},
    "jobs": {"type": "integer", "minimum": 1},
}


def _obj(required, props):
    return {"type": "object", "additionalProperties": False, "required": required,
            "properties": {**_COMMON, **props}}


def _closed(required, props):
    return {"type": "object", "additionalProperties": False, "required": required, "properties": props}


_TENSOR = {"oneOf": [
    _closed(["values"], {"values": {"type": "array"}, "axes": {"type": "array", "items": _NUMS},
                         "scale": _NUM}),
    _closed(["gw_joint"], {"gw_joint": _closed(["k", "lambdas"], {
        "k": {"type": "integer", "minimum": 1}, "lambdas": _NUMS, "i_max": {"type": "integer", "minimum": 1}})}),
    _closed(["gamma_joint"], {"gamma_joint": _closed([], {
        "shape1": _NUM, "shape2": _NUM, "h": _NUM, "n_cells": {"type": "integer", "minimum": 2}})}),
]}
_MODEL = _closed(["kind"], {"kind": {"type": "string"}, "params": _PARAMS, "chain": {"type": "object"}})

SCHEMAS: dict[str, dict] = {
    "check-tp2": _obj(["kernel"], {
        "kernel": {"oneOf": [
            _closed(["matrix"], {"matrix": _MATRIX, "scale": _NUM, "x_grid": _GRID, "y_grid": _GRID,
                                 "mask": {"type": "array"}}),
            _closed(["builtin", "x_grid"], {"builtin": {"type": "string"}, "x_grid": _GRID,
                                            "y_grid": _GRID, "params": _PARAMS}),
            _closed(["gw_matrix"], {"gw_matrix": _closed(["i_max"], {"i_max": {"type": "integer", "minimum": 1}})}),
        ]},
        "mode": {"enum": ["full", "adjacent"]},
        "log_supermodular": {"type": "boolean"},
    }),
    "check-mtp2": _obj([], {
        "tensor": _TENSOR,
        "gaussian": _closed(["covariance"], {"mean": _NUMS, "covariance": _MATRIX,
                                            "criterion": {"enum": ["precision", "abs"]}}),
        "mode": {"enum": ["exhaustive", "pairwise"]},
    }),
    "check-scm": _obj(["tensor"], {
        "tensor": _TENSOR,
        "check": {"enum": ["scm", "cm", "bivariate"]},
        "i": {"type": "integer", "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
        "weight_class": {"enum": ["positive", "nondecreasing", "nonincreasing"]},
    }),
    "check-logconcave": _obj([], {
        "sequence": _NUMS,
        "pmf": _closed(["family", "support"], {"family": {"enum": ["poisson", "geom", "binom", "nbinom"]},
                                               "params": _PARAMS, "support": _GRID}),
        "density": _closed(["family", "grid"], {"family": {"enum": ["gamma", "norm", "beta", "lognorm", "expon"]},
                                                "params": _PARAMS, "grid": _GRID}),
    }),
    "simulate": _obj(["model", "times", "n_paths"], {
        "model": _MODEL, "times": _GRID, "n_paths": {"type": "integer", "minimum": 1},
        "csv": {"type": "boolean"},
    }),
    "verify-peacock": _obj(["spec", "source"], {
        "spec": {"type": "object"},
        "source": {"oneOf": [
            _closed(["chain"], {"chain": {"type": "object"}}),
            _closed(["joint"], {"joint": _closed(["values"], {"values": _MATRIX, "axes": {"type": "array"},
                                                              "scale": _NUM, "time_labels": _NUMS})}),
            _closed(["gw"], {"gw": _closed(["k"], {"k": {"type": "integer", "minimum": 1},
                                                   "i_max": {"type": "integer", "minimum": 1}})}),
            _closed(["simulate"], {"simulate": _closed(["model", "n_paths"], {
                "model": _MODEL, "times": _GRID, "dt": _NUM, "n_paths": {"type": "integer", "minimum": 1}})}),
        ]},
        "strikes": _NUMS,
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "scaling_check": {"type": "boolean"},
        "diagnostics": {"type": "boolean"},
    }),
}


class ConfigError(InputError):
    pass


def _line_of(text: str, path: list) -> int | None:
    """Best-effort line number of the deepest key in ``path``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    for n, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return n
    return None


def load_config(path: str | Path, command: str | None = None) -> dict:
    """Parse and validate a config; errors carry line numbers where possible."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    if command and cfg.get("command", command) != command:
        raise ConfigError(f"{path}: config is for {cfg.get('command')!r}, not {command!r}")
    command = command or cfg.get("command")
    if command not in SCHEMAS:
        raise ConfigError(f"{path}: unknown or missing command {command!r}")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMAS[command]).iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for e in errors:
            loc = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
            ln = _line_of(text, list(e.absolute_path))
            if e.validator == "additionalProperties":
                ln = _line_of(text, [str(e.message).split("'")[1]]) or ln
            lines.append(f"{path}:{ln or 1}: {loc}: {e.message}")
        raise ConfigError("config does not validate:\n" + "\n".join(lines))
    cfg["command"] = command
    return cfg


# ---------------------------------------------------------------- builders

def _grid(g) -> np.ndarray:
    if isinstance(g, dict):
        return np.linspace(g["start"], g["stop"], g["num"])
    return np.asarray(g, dtype=float)


def _tensor(spec: dict) -> ProbTensor:
    if "values" in spec:
        v = np.asarray(spec["values"], dtype=float) * float(spec.get("scale", 1.0))
        return ProbTensor(spec.get("axes"), v)
    if "gw_joint" in spec:
        g = spec["gw_joint"]
        ch = gw_rescaled_chain(g["k"], g["lambdas"], g.get("i_max"))
        return chain_joint(ch, list(range(len(g["lambdas"]))))
    g = spec["gamma_joint"]
    return gamma_subordinator_joint(g.get("shape1", 0.3), g.get("shape2", 0.6), g.get("h", 0.1),
                                    g.get("n_cells", 20))


def _kernel(spec: dict) -> KernelGrid:
    if "matrix" in spec:
        V = np.asarray(spec["matrix"], dtype=float) * float(spec.get("scale", 1.0))
        x = _grid(spec["x_grid"]) if "x_grid" in spec else np.arange(1, V.shape[0] + 1, dtype=float)
        y = _grid(spec["y_grid"]) if "y_grid" in spec else np.arange(1, V.shape[1] + 1, dtype=float)
        mask = np.asarray(spec["mask"], dtype=bool) if "mask" in spec else None
        return KernelGrid(x, y, V, mask)
    if "gw_matrix" in spec:
        Q = gw_transition(spec["gw_matrix"]["i_max"]).matrix
        ax = np.arange(Q.shape[0], dtype=float)
        return KernelGrid(ax, ax, Q)
    y = _grid(spec["y_grid"]) if "y_grid" in spec else None
    return builtin_kernel(spec["builtin"], _grid(spec["x_grid"]), y, **spec.get("params", {}))


def _model(spec: dict) -> ProcessModel:
    chain = FiniteChain.from_dict(spec["chain"]) if "chain" in spec else None
    return ProcessModel(spec["kind"], dict(spec.get("params", {})), chain)


# ---------------------------------------------------------------- commands

class Outcome:
    def __init__(self, verdict: Verdict, report: dict, tables: dict[str, str] | None = None):
        self.verdict = Verdict(verdict)
        self.report = report
        self.tables = tables or {}


def _tol(cfg, default=1e-10):
    return float(cfg.get("tol", default))


def cmd_check_tp2(cfg: dict, seed: int, jobs: int) -> Outcome:
    K = _kernel(cfg["kernel"])
    rep = check_tp2_grid(K, _tol(cfg), cfg.get("mode", "full"), jobs)
    out = {"tp2": rep.to_dict()}
    verdict = rep.verdict
    if cfg.get("log_supermodular"):
        ls = check_supermodular_logdensity(K, _tol(cfg))
        out["log_supermodular"] = ls.to_dict()
        if ls.verdict == Verdict.FAIL:
            verdict = Verdict.FAIL
    return Outcome(verdict, out)


def cmd_check_mtp2(cfg: dict, seed: int, jobs: int) -> Outcome:
    if ("tensor" in cfg) == ("gaussian" in cfg):
        raise ConfigError("give exactly one of 'tensor' or 'gaussian'")
    if "gaussian" in cfg:
        g = cfg["gaussian"]
        cov = np.asarray(g["covariance"], dtype=float)
        spec = GaussianSpec(g.get("mean", [0.0] * cov.shape[0]), cov)
        fn = abs_gaussian_mtp2 if g.get("criterion", "precision") == "abs" else gaussian_mtp2
        rep = fn(spec, _tol(cfg))
    else:
        rep = check_mtp2(_tensor(cfg["tensor"]), _tol(cfg), cfg.get("mode", "exhaustive"))
    return Outcome(rep.verdict, {"mtp2": rep.to_dict()})


def cmd_check_scm(cfg: dict, seed: int, jobs: int) -> Outcome:
    J = _tensor(cfg["tensor"])
    check = cfg.get("check", "scm")
    i = int(cfg.get("i", J.ndim - 1))
    trials = int(cfg.get("trials", 1000))
    tol = _tol(cfg)
    if check == "bivariate":
        rep = scm_bivariate_tp2(J, tol)
    elif check == "cm":
        rep = cm_check(J, i, trials, seed, tol, jobs)
    else:
        rep = scm_randomized(J, i, trials, seed, cfg.get("weight_class", "positive"), tol, jobs)
    return Outcome(rep.verdict, {"scm": rep.to_dict()})


def cmd_check_logconcave(cfg: dict, seed: int, jobs: int) -> Outcome:
    given = [k for k in ("sequence", "pmf", "density") if k in cfg]
    if len(given) != 1:
        raise ConfigError("give exactly one of 'sequence', 'pmf' or 'density'")
    tol = _tol(cfg)
    if "sequence" in cfg:
        rep = check_log_concave(cfg["sequence"], tol)
    elif "pmf" in cfg:
        p = cfg["pmf"]
        k = _grid(p["support"])
        dist = getattr(stats, p["family"])(**p.get("params", {}))
        rep = check_log_concave(dist.pmf(k), tol)
    else:
        d = cfg["density"]
        x = _grid(d["grid"])
        dist = getattr(stats, d["family"])(**d.get("params", {}))
        rep = check_log_concave(dist.pdf, tol, x=x)
    return Outcome(rep.verdict, {"log_concave": rep.to_dict()})


def cmd_simulate(cfg: dict, seed: int, jobs: int) -> Outcome:
    model = _model(cfg["model"])
    ens = simulate(model, _grid(cfg["times"]), cfg["n_paths"], seed, jobs)
    v = ens.values
    summary = {"sidecar": ens.sidecar(), "mean": v.mean(axis=0), "var": v.var(axis=0, ddof=1),
               "std_error": v.std(axis=0, ddof=1) / np.sqrt(ens.n_paths)}
    tables = {}
    if cfg.get("csv", True):
        import csv as _csv
        import io
        buf = io.StringIO()
        w = _csv.writer(buf, lineterminator="\n")
        w.writerow([f"t={t!r}" for t in ens.times.tolist()])
        for row in v:
            w.writerow([repr(float(x)) for x in row])
        tables["paths"] = buf.getvalue()
    return Outcome(Verdict.PASS, {"simulation": to_jsonable(summary)}, tables)


def _peacock_source(cfg: dict, spec: PeacockSpec, seed: int, jobs: int):
    src = cfg["source"]
    if "chain" in src:
        return FiniteChain.from_dict(src["chain"])
    if "joint" in src:
        j = src["joint"]
        M = np.asarray(j["values"], dtype=float) * float(j.get("scale", 1.0))
        ch = FiniteChain.from_joint(M, j.get("axes"))
        if "time_labels" in j:
            ch = FiniteChain(ch.grids, ch.init, ch.transitions, j["time_labels"])
        return ch
    if "gw" in src:
        labels = sorted({*(l for l, _ in spec.atoms), *spec.t_grid.tolist()})
        return gw_rescaled_chain(src["gw"]["k"], labels, src["gw"].get("i_max"))
    s = src["simulate"]
    if "times" in s:
        times = _grid(s["times"])
    else:
        dt = float(s.get("dt", 1 / 64))
        T = float(spec.t_grid.max() if spec.form == "asian_CEX" else max(spec.t_grid.max(), spec.atoms[-1][0]))
        times = np.linspace(0.0, T, int(round(T / dt)) + 1)
    return simulate(_model(s["model"]), times, s["n_paths"], seed, jobs)


def cmd_verify_peacock(cfg: dict, seed: int, jobs: int) -> Outcome:
    spec = PeacockSpec.from_dict(cfg["spec"])
    source = _peacock_source(cfg, spec, seed, jobs)
    law = build_functional(spec, source)
    strikes = cfg.get("strikes")
    if law.exact:
        rep = convex_order_exact(law, strikes, _tol(cfg))
    else:
        rep = convex_order_mc(law, strikes, float(cfg.get("alpha", 0.01)))
    out = {"peacock": rep.to_dict(), "spec": spec.to_dict(), "spec_hash": spec.spec_hash()}
    if isinstance(source, FiniteChain) and "tail_mass" in source.meta:
        out["truncation"] = {"i_max": source.meta["i_max"], "tail_mass": source.meta["tail_mass"]}
    verdict = rep.verdict
    if cfg.get("scaling_check") and spec.form == "asian_CEX":
        n = cfg["source"]["simulate"]["n_paths"]
        sc = asian_scaling_check(spec.t_grid, rep.strikes, n, seed, jobs=jobs)
        out["scaling_check"] = sc.to_dict()
        if sc.verdict == Verdict.FAIL:
            verdict = Verdict.FAIL
    if cfg.get("diagnostics") and not law.exact:
        out["integrability"] = integrability_diagnostics(spec, source)
    return Outcome(verdict, out, {"calls": rep.to_csv()})


HANDLERS: dict[str, Callable[[dict, int, int], Outcome]] = {
    "check-tp2": cmd_check_tp2,
    "check-mtp2": cmd_check_mtp2,
    "check-scm": cmd_check_scm,
    "check-logconcave": cmd_check_logconcave,
    "simulate": cmd_simulate,
    "verify-peacock": cmd_verify_peacock,
}


# ---------------------------------------------------------------- output

def _canonical(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def build_document(cfg: dict, seed: int, outcome: Outcome) -> dict:
    """Report document; everything except ``header`` is deterministic."""
    return {
        "schema_version": SCHEMA_VERSION,
        "header": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                   "version": __version__},
        "command": cfg["command"],
        "name": cfg.get("name"),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "verdict": outcome.verdict.value,
        "result": outcome.report,
    }


def strip_header(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "header"}


def write_outputs(doc: dict, outcome: Outcome, out_dir: Path, stem: str, force: bool) -> list[Path]:
    """Write the report and tables; names get a content-hash suffix unless ``force``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    body = _canonical(strip_header(doc))
    digest = hashlib.sha256((body + "".join(outcome.tables.values())).encode()).hexdigest()[:10]
    base = stem if force else f"{stem}-{digest}"
    written = []
    path = out_dir / f"{base}.json"
    if force or not path.exists():
        path.write_text(_canonical(doc) + "\n")
    written.append(path)
    for name, text in sorted(outcome.tables.items()):
        p = out_dir / f"{base}.{name}.csv"
        if force or not p.exists():
            p.write_text(text)
        written.append(p)
    return written


def resolve_seed(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        return int(flag)
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("PEACOCK_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"PEACOCK_SEED must be an integer, got {env!r}") from None
    return 0


def execute(cfg: dict, seed: int, jobs: int, tol: float | None = None) -> tuple[dict, Outcome]:
    if tol is not None:
        cfg = {**cfg, "tol": tol}
    outcome = HANDLERS[cfg["command"]](cfg, seed, jobs)
    return build_document(cfg, seed, outcome), outcome


# ---------------------------------------------------------------- fixtures / reproduce

def fixture_names() -> list[str]:
    root = resources.files("peacocks") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and not p.name.startswith("_"))


def fixture_path(name: str) -> Path:
    p = resources.files("peacocks") / "fixtures" / f"{name}.json"
    if not p.is_file():
        raise ConfigError(f"unknown fixture {name!r}; known: {', '.join(fixture_names())}")
    return Path(str(p))


def reproduce(names: list[str], seed_flag: int | None, jobs: int, out_dir: Path | None,
              force: bool, stream=sys.stdout) -> int:
    """Run bundled fixtures; exit 0 iff each verdict matches the fixture's ``expect``."""
    rows = []
    for name in names:
        cfg = load_config(fixture_path(name))
        seed = resolve_seed(seed_flag, cfg)
        try:
            doc, outcome = execute(cfg, seed, jobs)
            verdict = outcome.verdict.value
            if out_dir is not None:
                write_outputs(doc, outcome, out_dir, f"{cfg['command']}-{name}", force)
        except (InputError, DomainError) as e:
            verdict = f"error: {e}"
        expect = cfg.get("expect", "pass")
        rows.append((name, cfg["command"], expect, verdict, verdict == expect))
    w = max(len(r[0]) for r in rows) if rows else 4
    stream.write(f"{'fixture':<{w}}  {'command':<16}  {'expect':<12}  {'got':<12}  ok\n")
    for name, cmd, expect, got, ok in rows:
        stream.write(f"{name:<{w}}  {cmd:<16}  {expect:<12}  {got:<12}  {'yes' if ok else 'NO'}\n")
    if out_dir is not None:
        summary = [{"fixture": r[0], "command": r[1], "expect": r[2], "got": r[3], "ok": r[4]} for r in rows]
        (out_dir / "reproduce-summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0 if all(r[4] for r in rows) else 1


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: config, then $PEACOCK_SEED)")
    common.add_argument("--tol", type=float, default=None, help="override the config tolerance")
    common.add_argument("--out", type=Path, default=Path("reports"), help="report directory")
    common.add_argument("--force", action="store_true", help="overwrite instead of hash-suffixing outputs")
    common.add_argument("--jobs", type=int, default=1, help="worker threads")
    ap = argparse.ArgumentParser(prog="peacocks", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        p = sub.add_parser(c, parents=[common])
        p.add_argument("--config", required=True, help="JSON config")
    r = sub.add_parser("reproduce", parents=[common], help="run bundled fixtures")
    r.add_argument("target", nargs="?", default="all", help="'all', 'list' or a fixture name")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.command == "reproduce":
            if args.target == "list":
                print("\n".join(fixture_names()))
                return 0
            names = fixture_names() if args.target == "all" else [args.target]
            return reproduce(names, args.seed, args.jobs, args.out, args.force)
        cfg = load_config(args.config, args.command)
        seed = resolve_seed(args.seed, cfg)
        doc, outcome = execute(cfg, seed, args.jobs, args.tol)
        stem = f"{args.command}-{cfg.get('name') or Path(args.config).stem}"
        paths = write_outputs(doc, outcome, args.out, stem, args.force)
    except (InputError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{outcome.verdict.value}: {paths[0]}")
    return EXIT[outcome.verdict]


if __name__ == "__main__":
    sys.exit(main())
