"""Batch experiment runner.

A run reads a YAML experiment file, executes one command and writes
``<command>.csv`` (a ``#`` header comment carries the timestamp and version)
and ``<command>.json`` (a deterministic summary without timings).  The exit
status is 1 when an invariant check fails, 2 on configuration errors.

Example configuration::

    action:
      space: circle
      generators: [{linear: 2}, {linear: 3}]
    command: estimate
    schedule:
      n: [4, 5, 6]
      epsilon: 0.05
      grid: 0.015625
    budget: 300000
    seed: 0
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction

import yaml

from . import __version__
from .actions import (
    Action,
    ActionFormatError,
    CircleLinear,
    CircleRotation,
    TorusMatrix,
    conjugate_action,
    parse_action,
    sine_homeomorphism,
)
from .bounds import (
    NotExpanding,
    lipschitz_bound,
    power_rule,
    single_endo_entropy,
    skew_bound,
    torus_preimage_bound,
)
from .orbit_space import (
    DEFAULT_BUDGET,
    BudgetExceeded,
    estimate_entropy,
    estimate_traditional_entropy,
)
from .preimage import build_tree, check_union_cardinality, hurley_check, preimage_count, preimages
from .sft import (
    build_matrix_block,
    build_matrix_geometric,
    is_irreducible,
    parry_measure,
    perron_root,
)

log = logging.getLogger("orbitentropy")

COMMANDS = ("sft", "estimate", "traditional", "bounds", "preimage", "hurley", "power-check", "conjugacy-check")


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass
class ExperimentConfig:
    action: Action
    action_doc: dict
    command: str
    schedule: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET
    seed: int = 0
    threads: int = 1
    out: str = "."

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        if self.command in ("estimate", "conjugacy-check", "traditional") and not self.schedule:
            raise ConfigError(f"command {self.command} needs a nonempty schedule")


@dataclass
class RunReport:
    config: dict
    columns: list
    rows: list
    checks: dict
    exact: dict = field(default_factory=dict)
    elapsed_ms: float = 0.0
    version: str = __version__

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _line(node, key):
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            if k.value == key:
                return v.start_mark.line + 1
    return None


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _number(v):
    if isinstance(v, str):
        return float(Fraction(v.strip()))
    return float(v)


def _expand_schedule(doc, line):
    """A list of {n, epsilon, grid} rows, or one mapping whose fields may be lists (cartesian product)."""
    if doc is None:
        return []
    rows = []
    try:
        if isinstance(doc, dict):
            for eps in _as_list(doc.get("epsilon", 0.05)):
                for grid in _as_list(doc.get("grid", 1 / 64)):
                    for n in _as_list(doc["n"]):
                        rows.append({"n": int(n), "epsilon": _number(eps), "grid": _number(grid)})
        elif isinstance(doc, list):
            for r in doc:
                if isinstance(r, dict):
                    rows.append({"n": int(r["n"]), "epsilon": _number(r["epsilon"]), "grid": _number(r["grid"])})
                else:
                    n, eps, grid = r
                    rows.append({"n": int(n), "epsilon": _number(eps), "grid": _number(grid)})
        else:
            raise ConfigError("schedule must be a mapping or a list", line)
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad schedule entry: {exc}", line) from None
    for r in rows:
        if r["n"] < 1 or r["epsilon"] <= 0 or r["grid"] <= 0:
            raise ConfigError(f"schedule row {r} needs n >= 1, epsilon > 0, grid > 0", line)
    return rows


def load_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML error: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None) from None
    if not isinstance(doc, dict):
        raise ConfigError("experiment file must be a mapping", 1)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "action" not in doc:
        raise ConfigError("missing 'action'", 1)
    anode = None
    if isinstance(node, yaml.MappingNode):
        anode = next((v for k, v in node.value if k.value == "action"), None)
    try:
        action = parse_action(doc["action"], anode)
    except ActionFormatError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1] if exc.line else str(exc), exc.line) from None
    command = overrides.get("command", doc.get("command"))
    if command is None:
        raise ConfigError("missing 'command'", 1)
    known = {"action", "command", "schedule", "budget", "seed", "threads", "out", "params"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown field {key!r}", _line(node, key))
    params = doc.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("'params' must be a mapping", _line(node, "params"))
    try:
        budget = int(overrides.get("budget", doc.get("budget", DEFAULT_BUDGET)))
        seed = int(overrides.get("seed", doc.get("seed", 0)))
        threads = int(overrides.get("threads", doc.get("threads", 1)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad integer field: {exc}") from None
    return ExperimentConfig(
        action=action,
        action_doc=doc["action"],
        command=str(command),
        schedule=_expand_schedule(doc.get("schedule"), _line(node, "schedule")),
        params=params,
        budget=budget,
        seed=seed,
        threads=max(1, threads),
        out=str(overrides.get("out", doc.get("out", "."))),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _multipliers(T: Action):
    try:
        return T.multipliers
    except TypeError:
        return None


def _exact_target(T: Action):
    L = _multipliers(T)
    if L is not None and all(l >= 2 for l in L):
        return math.log(sum(L))
    if all(isinstance(g, CircleRotation) for g in T.generators):
        return math.log(T.k)
    return None


def _cmd_sft(cfg):
    L = _multipliers(cfg.action)
    if L is None:
        raise ConfigError("sft needs an action of circle maps x -> Lx")
    A = build_matrix_block(L, budget=cfg.params.get("max_boxes", 20_000))
    G = build_matrix_geometric(L, budget=cfg.params.get("max_boxes", 20_000))
    irreducible = is_irreducible(A)
    cols_ok = bool((A.column_sums() == sum(L)).all())
    pd = perron_root(A)
    m = parry_measure(A)
    exact = math.log(sum(L))
    entropy = math.log(pd.rho)
    row = {
        "L_list": " ".join(map(str, L)), "kM": A.size, "rho": pd.rho, "entropy_nats": entropy,
        "exact_target": exact, "abs_err": abs(entropy - exact), "irreducible": irreducible,
        "column_sums_ok": cols_ok, "constructions_equal": A == G, "parry_entropy_rate": m.entropy_rate(),
        "parry_row_err": m.row_sum_error(), "parry_stationary_residual": m.stationary_residual(),
    }
    checks = {
        "irreducible": irreducible, "column_sums": cols_ok, "constructions_equal": A == G,
        "rho": abs(pd.rho - sum(L)) <= 1e-9, "entropy": abs(entropy - exact) <= 1e-9,
        "parry_stochastic": m.row_sum_error() <= 1e-12, "parry_stationary": m.stationary_residual() < 1e-10,
        "parry_entropy_rate": abs(m.entropy_rate() - exact) <= 1e-9,
    }
    matrix_path = cfg.params.get("export_matrix")
    if matrix_path:
        with open(os.path.join(cfg.out, matrix_path), "w") as fh:
            fh.write(A.to_coordinate_list())
    return list(row), [row], checks, {"entropy": exact}


_EST_COLUMNS = ["n", "epsilon", "grid", "count", "rate", "elapsed_ms", "candidates", "sampled", "status"]


def _estimate_rows(T, cfg):
    rows = []
    sample = bool(cfg.params.get("sample_itineraries", False))
    for r in cfg.schedule:
        try:
            (est,) = estimate_entropy(T, [r], cfg.budget, sample, cfg.seed)
            rows.append({"n": est.n, "epsilon": est.epsilon, "grid": est.grid, "count": est.count,
                         "rate": est.rate, "elapsed_ms": round(est.elapsed_ms, 1),
                         "candidates": est.candidates, "sampled": est.sampled, "status": "ok"})
        except BudgetExceeded as exc:
            log.warning("row %s: %s", r, exc)
            rows.append({**r, "count": "", "rate": "", "elapsed_ms": "", "candidates": "", "sampled": "",
                         "status": "budget_exceeded"})
    return rows


def _cmd_estimate(cfg):
    rows = _estimate_rows(cfg.action, cfg)
    ok_rows = [r for r in rows if r["status"] == "ok"]
    checks = {"counts_within_candidates": all(1 <= r["count"] <= r["candidates"] for r in ok_rows)}
    exact = _exact_target(cfg.action)
    return _EST_COLUMNS, rows, checks, ({"entropy": exact} if exact is not None else {})


def _cmd_traditional(cfg):
    rows = []
    for r in cfg.schedule:
        try:
            est = estimate_traditional_entropy(cfg.action, r["n"], r["epsilon"], r["grid"],
                                               budget=max(cfg.budget, 1) * 100)
            rows.append({"n": est.n, "epsilon": est.epsilon, "grid": est.grid, "count": est.count,
                         "rate": est.rate, "elapsed_ms": round(est.elapsed_ms, 1),
                         "candidates": est.candidates, "sampled": False, "status": "ok"})
        except BudgetExceeded as exc:
            log.warning("row %s: %s", r, exc)
            rows.append({**r, "count": "", "rate": "", "elapsed_ms": "", "candidates": "", "sampled": "",
                         "status": "budget_exceeded"})
    checks = {"counts_positive": all(r["count"] == "" or r["count"] >= 1 for r in rows)}
    return _EST_COLUMNS, rows, checks, {}


def _cmd_bounds(cfg):
    T = cfg.action
    D = cfg.params.get("ball_dimension")
    rows, checks = [], {}
    lb = lipschitz_bound(T, D)
    sb = skew_bound(T, D)
    rows.append({"kind": "lipschitz", "value": lb.value, "detail": " ".join(f"{l:g}" for l in lb.lipschitz)})
    rows.append({"kind": "skew", "value": sb.value, "detail": f"k={T.k} D={sb.ball_dimension:g}"})
    if all(isinstance(g, (TorusMatrix, CircleLinear)) for g in T.generators):
        try:
            tb = torus_preimage_bound(T)
            rows.append({"kind": "torus_preimage", "value": tb.value, "detail": " ".join(map(str, tb.dets))})
            checks["torus_bound_below_lipschitz"] = tb.value <= lb.value + 1e-9
        except NotExpanding as exc:
            rows.append({"kind": "torus_preimage", "value": "", "detail": f"rejected: {exc}"})
        for i, g in enumerate(T.generators, start=1):
            A = g.A if isinstance(g, TorusMatrix) else ((g.L,),)
            rows.append({"kind": f"single_endo[{i}]", "value": single_endo_entropy(A), "detail": ""})
    exact = _exact_target(T)
    L = _multipliers(T)
    if L is not None and all(l >= 2 for l in L):
        from .sft import sft_entropy

        h = sft_entropy(L)
        rows.append({"kind": "sft_exact", "value": h, "detail": ""})
        checks["exact_below_lipschitz"] = h <= lb.value + 1e-9
        checks["identity_sum_vs_k_max"] = (sb.value >= h - 1e-9) == (T.k * max(L) >= sum(L))
    return ["kind", "value", "detail"], rows, checks, ({"entropy": exact} if exact is not None else {})


def _parse_point(v, dim):
    def one(c):
        return Fraction(str(c)) if isinstance(c, (int, str)) else float(c)

    if dim == 1:
        return one(v)
    return tuple(one(c) for c in v)


def _cmd_preimage(cfg):
    T = cfg.action
    dim = T.space.dim
    points = [_parse_point(p, dim) for p in cfg.params.get("points", ["1/7"])]
    depth = int(cfg.params.get("depth", 1))
    rows, ok = [], True
    for x in points:
        for i, g in enumerate(T.generators, start=1):
            P = preimages(g, x)
            good = P.verify() and len(P) == preimage_count(g)
            ok &= good
            rows.append({"point": str(x), "generator": i, "count": len(P), "expected": preimage_count(g),
                         "verified": good, "union": "", "branches": ""})
        tree = build_tree(T, x, "all", depth, cfg.budget)
        rows.append({"point": str(x), "generator": "all", "count": "", "expected": "", "verified": "",
                     "union": check_union_cardinality(T, x), "branches": len(tree)})
        dump = cfg.params.get("dump_trees")
        if dump:
            with open(os.path.join(cfg.out, dump), "a") as fh:
                fh.write(tree.dump())
    cols = ["point", "generator", "count", "expected", "verified", "union", "branches"]
    return cols, rows, {"preimages_exact": ok}, {}


def _cmd_hurley(cfg):
    T = cfg.action
    if T.k != 1:
        raise ConfigError("hurley needs a single generator")
    n = int(cfg.params.get("n", 10))
    eps = float(cfg.params.get("epsilon", 0.25))
    r = hurley_check(T.generators[0], n, eps)
    row = {"n": r.n, "epsilon": r.epsilon, "h_m": r.h_m, "h": r.h, "h_i": r.h_i, "holds": r.holds,
           "count_h_m": r.counts["h_m"], "count_h": r.counts["h"], "count_h_i": r.counts["h_i"]}
    return list(row), [row], {"chain": r.holds}, {}


def _cmd_power_check(cfg):
    L = _multipliers(cfg.action)
    if L is None:
        raise ConfigError("power-check needs an action of circle maps x -> Lx")
    rows = []
    for m in cfg.params.get("m", [2, 3]):
        lhs, rhs = power_rule(L, int(m))
        rows.append({"L_list": " ".join(map(str, L)), "m": int(m), "h_power": lhs, "m_times_h": rhs,
                     "holds": lhs <= rhs + 1e-9})
    return list(rows[0]), rows, {"power_rule": all(r["holds"] for r in rows)}, {}


def _cmd_conjugacy(cfg):
    c = float(cfg.params.get("c", 0.05))
    tol = float(cfg.params.get("tolerance", 0.1))
    h, h_inv = sine_homeomorphism(c)
    C = conjugate_action(cfg.action, h, h_inv)
    a = _estimate_rows(cfg.action, cfg)
    b = _estimate_rows(C, cfg)
    rows = []
    for ra, rb in zip(a, b):
        diff = "" if "" in (ra["rate"], rb["rate"]) else abs(ra["rate"] - rb["rate"])
        rows.append({"n": ra["n"], "epsilon": ra["epsilon"], "grid": ra["grid"], "rate": ra["rate"],
                     "rate_conjugate": rb["rate"], "abs_diff": diff, "tolerance": tol,
                     "within": diff != "" and diff <= tol})
    return list(rows[0]), rows, {"conjugacy_stable": all(r["within"] for r in rows)}, {}


_DISPATCH = {
    "sft": _cmd_sft,
    "estimate": _cmd_estimate,
    "traditional": _cmd_traditional,
    "bounds": _cmd_bounds,
    "preimage": _cmd_preimage,
    "hurley": _cmd_hurley,
    "power-check": _cmd_power_check,
    "conjugacy-check": _cmd_conjugacy,
}


def run(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    os.makedirs(cfg.out, exist_ok=True)
    columns, rows, checks, exact = _DISPATCH[cfg.command](cfg)
    echo = {"action": cfg.action_doc, "command": cfg.command, "schedule": cfg.schedule, "params": cfg.params,
            "budget": cfg.budget, "seed": cfg.seed}
    return RunReport(echo, columns, rows, {k: bool(v) for k, v in checks.items()}, exact,
                     1000.0 * (time.perf_counter() - t0))


def _summary(report: RunReport) -> dict:
    rows = [{k: v for k, v in r.items() if k != "elapsed_ms"} for r in report.rows]
    out = {"version": report.version, "config": report.config, "rows": rows, "checks": report.checks,
           "ok": report.ok}
    if report.exact.get("entropy") is not None:
        target = report.exact["entropy"]
        rates = [r.get("rate", r.get("entropy_nats")) for r in report.rows]
        out["exact"] = {"entropy": target,
                        "comparison": [None if v in ("", None) else v - target for v in rates]}
    return out


def emit(report: RunReport, out_dir: str, stem: str) -> tuple:
    """Write ``stem.csv`` and ``stem.json`` under ``out_dir``; returns both paths."""
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    json_path = os.path.join(out_dir, f"{stem}.json")
    buf = io.StringIO()
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    buf.write(f"# generated {stamp} by orbitentropy {report.version}\n")
    w = csv.DictWriter(buf, fieldnames=report.columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in report.rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(buf.getvalue())
        with open(json_path, "w") as fh:
            json.dump(_summary(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {exc.filename or out_dir}: {exc.strerror}") from None
    return csv_path, json_path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbitentropy", description="Entropy experiments for Z_+^k actions.")
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--command", choices=COMMANDS, help="override the command in the file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--budget", type=int, help="max candidates per estimate")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return 2
    try:
        cfg = load_config(text, {"command": args.command, "out": args.out, "budget": args.budget,
                                 "seed": args.seed, "threads": args.threads})
        report = run(cfg)
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    csv_path, json_path = emit(report, cfg.out, cfg.command)
    for name, ok in report.checks.items():
        if not ok:
            print(f"check failed: {name}", file=sys.stderr)
    print(f"wrote {csv_path} and {json_path}")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
