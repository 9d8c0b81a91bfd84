"""Batch command-line entry point: validate, run, sweep, report.

All operation is file-driven: a JSON experiment file in, CSV/JSON ledgers
out.  Exit codes are a stable contract:

    0  success
    2  validation failure (schema, theory gate, topology, thresholds)
    3  divergence abort
    4  I/O failure (missing or corrupt files)

Every ledger carries the hash of the experiment configuration that produced
it; the report command refuses to merge series whose problem hashes differ.
Running with different --threads values never changes any emitted byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import engine, theory
from .momentum_rules import HyperParams
from .problems import (
    make_quadratic,
    make_rational_nonconvex,
    objective_value,
    problem_from_json,
    problem_to_json,
)
from .topology import TopologyError, complete_graph, mixing_from_json, ring_graph

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

_DEFAULT_OUT = "runs"

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "momentum-sync experiment file",
    "type": "object",
    "additionalProperties": False,
    "required": ["algorithm", "option", "gamma", "beta", "horizon", "problem"],
    "properties": {
        "algorithm": {"enum": ["parallel_restarted", "decentralized"]},
        "option": {"enum": ["polyak", "nesterov", "cleared_momentum"]},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "beta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "interval": {"type": "integer", "minimum": 1, "default": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "eval_every": {"type": "integer", "minimum": 1, "default": 1},
        "check_lemmas": {"type": "boolean", "default": False},
        "x_init": {
            "oneOf": [
                {"type": "number"},
                {"type": "array", "items": {"type": "number"}, "minItems": 1},
            ]
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "dimension", "num_workers", "sigma", "seed"],
            "properties": {
                "kind": {"enum": ["quadratic", "rational_nonconvex"]},
                "dimension": {"type": "integer", "minimum": 1},
                "num_workers": {"type": "integer", "minimum": 1},
                "center_spread": {"type": "number", "minimum": 0, "default": 0.0},
                "curvature_spectrum": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                },
                "sigma": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "problem_file": {"type": "string"},
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["complete", "ring", "file"]},
                "self_weight": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "path": {"type": "string"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["worker_counts"],
            "properties": {
                "worker_counts": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "interval_list": {
                    "oneOf": [
                        {"const": "auto"},
                        {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                    ]
                },
                "seed_count": {"type": "integer", "minimum": 1, "default": 20},
            },
        },
        "out_dir": {"type": "string"},
    },
}


class ValidationFailure(Exception):
    """Schema, gate, or topology problem; maps to exit code 2."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_experiment(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read experiment file {path}: {exc}") from exc
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        lines = [f"{e.json_path}: {e.message}" for e in errors]
        raise ValidationFailure("schema violation:\n  " + "\n  ".join(lines))
    if "problem" not in doc and "problem_file" not in doc:
        raise ValidationFailure("schema violation: one of 'problem' or 'problem_file' is required")
    return doc


def _build_problem(doc: dict, base_dir: Path):
    if "problem_file" in doc:
        path = base_dir / doc["problem_file"]
        try:
            return problem_from_json(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read problem file {path}: {exc}") from exc
    p = doc["problem"]
    if p["kind"] == "quadratic":
        spectrum = p.get("curvature_spectrum")
        if spectrum is None:
            raise ValidationFailure("quadratic problems need curvature_spectrum")
        if len(spectrum) != p["dimension"]:
            raise ValidationFailure("curvature_spectrum length must equal dimension")
        return make_quadratic(
            p["dimension"], p["num_workers"], p.get("center_spread", 0.0),
            spectrum, p["sigma"], p["seed"],
        )
    return make_rational_nonconvex(
        p["dimension"], p["num_workers"], p.get("center_spread", 0.0), p["sigma"], p["seed"]
    )


def _build_topology(doc: dict, num_workers: int, base_dir: Path):
    t = doc.get("topology")
    if t is None:
        return None
    if t["type"] == "complete":
        return complete_graph(num_workers)
    if t["type"] == "ring":
        if "self_weight" not in t:
            raise ValidationFailure("ring topology needs self_weight")
        return ring_graph(num_workers, t["self_weight"])
    if "path" not in t:
        raise ValidationFailure("file topology needs path")
    path = base_dir / t["path"]
    try:
        return mixing_from_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read topology file {path}: {exc}") from exc


def _build_x_init(doc: dict, dimension: int) -> np.ndarray:
    x = doc.get("x_init", 0.0)
    if isinstance(x, (int, float)):
        return np.full(dimension, float(x))
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dimension,):
        raise ValidationFailure(f"x_init must have length {dimension}")
    return x


def build_run_config(doc: dict, base_dir: Path, seed_override=None) -> engine.RunConfig:
    problem = _build_problem(doc, base_dir)
    try:
        topology = _build_topology(doc, problem.num_workers, base_dir)
        hp = HyperParams(
            gamma=doc["gamma"], beta=doc["beta"],
            interval=doc.get("interval", 1), horizon=doc["horizon"],
        )
        return engine.RunConfig(
            algorithm=doc["algorithm"],
            option=doc["option"],
            hp=hp,
            problem=problem,
            x_init=_build_x_init(doc, problem.dimension),
            seed=doc.get("seed", 0) if seed_override is None else seed_override,
            topology=topology,
            eval_every=doc.get("eval_every", 1),
            check_lemmas=doc.get("check_lemmas", False),
        )
    except (TopologyError, ValueError) as exc:
        raise ValidationFailure(str(exc)) from exc


def _gate_for(cfg: engine.RunConfig) -> theory.GateReport:
    if cfg.algorithm == engine.DECENTRALIZED:
        return theory.gate_decentralized(cfg.hp, cfg.problem.certified_L, cfg.topology.rho)
    if cfg.option == engine.NESTEROV:
        return theory.gate_nesterov(cfg.hp, cfg.problem.certified_L)
    return theory.gate_polyak(cfg.hp, cfg.problem.certified_L)


def _bound_for(cfg: engine.RunConfig) -> theory.BoundReport:
    spec = cfg.problem
    f0_gap = objective_value(spec, cfg.x_init) - spec.f_star
    if cfg.algorithm == engine.DECENTRALIZED:
        return theory.bound_decentralized(
            cfg.hp, spec.certified_L, spec.noise_sigma, spec.certified_kappa,
            cfg.topology.rho, spec.num_workers, f0_gap, enforce_gate=False,
        )
    return theory.bound_polyak(
        cfg.hp, spec.certified_L, spec.noise_sigma, spec.certified_kappa,
        spec.num_workers, f0_gap,
        nesterov=(cfg.option == engine.NESTEROV), enforce_gate=False,
    )


def _print_gate_lines(cfg: engine.RunConfig, gate: theory.GateReport):
    hp = cfg.hp
    gamma_ok = all("gamma" not in v for v in gate.violations)
    print(
        f"gate gamma:    {'PASS' if gamma_ok else 'FAIL'} "
        f"(gamma={hp.gamma!r}, limit={gate.gamma_limit!r})"
    )
    if gate.interval_limit is not None:
        int_ok = all("interval" not in v for v in gate.violations)
        print(
            f"gate interval: {'PASS' if int_ok else 'FAIL'} "
            f"(interval={hp.interval}, limit={gate.interval_limit})"
        )
    if cfg.algorithm == engine.DECENTRALIZED:
        print(
            f"assumption2:   PASS (rho={cfg.topology.rho!r}, "
            f"sqrt_rho={math.sqrt(cfg.topology.rho)!r})"
        )
    for v in gate.violations:
        print(f"violation: {v}")


def _resolve_out_dir(args, doc: dict) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if "out_dir" in doc:
        return Path(doc["out_dir"])
    env = os.environ.get("MOMENTUM_SYNC_OUT")
    if env:
        return Path(env)
    return Path(_DEFAULT_OUT)


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _config_hash(doc: dict, seed_override) -> str:
    resolved = dict(doc)
    if seed_override is not None:
        resolved["seed"] = seed_override
    return _sha256(_canonical_json(resolved))


def cmd_validate(args) -> int:
    doc = load_experiment(args.config)
    cfg = build_run_config(doc, Path(args.config).resolve().parent)
    print("schema: OK")
    spec = cfg.problem
    print(
        f"problem: {spec.kind} m={spec.dimension} N={spec.num_workers} "
        f"L={spec.certified_L!r} sigma={spec.noise_sigma!r} kappa={spec.certified_kappa!r}"
    )
    gate = _gate_for(cfg)
    _print_gate_lines(cfg, gate)
    if not gate.ok:
        return EXIT_VALIDATION
    print("all gates: PASS")
    return EXIT_OK


def _run_and_write(cfg: engine.RunConfig, out: Path, config_hash: str) -> int:
    problem_hash = _sha256(problem_to_json(cfg.problem))
    bound = _bound_for(cfg)
    meta = {
        "format_version": engine.RESULT_FORMAT_VERSION,
        "config_hash": config_hash,
        "problem_hash": problem_hash,
        "seed": cfg.seed,
        "algorithm": cfg.algorithm,
        "option": cfg.option,
        "workers": cfg.problem.num_workers,
        "interval": cfg.hp.interval,
        "horizon": cfg.hp.horizon,
    }
    try:
        result = engine.run(cfg)
    except engine.DivergenceError as exc:
        meta.update({"status": "diverged", "diverged_at": exc.iteration})
        _write_text(out / "result.json", json.dumps(meta, indent=2) + "\n")
        print(f"divergence abort at iteration {exc.iteration}; recorded in {out / 'result.json'}")
        return EXIT_DIVERGENCE
    meta.update({"status": "ok", "diverged_at": None})
    meta.update(engine.result_to_dict(result))
    csv_text = engine.trace_to_csv(result.trace) + f"# config_hash={config_hash}\n"
    _write_text(out / "trace.csv", csv_text)
    _write_text(out / "result.json", json.dumps(meta, indent=2) + "\n")
    bound_doc = {"config_hash": config_hash, "problem_hash": problem_hash}
    bound_doc.update(bound.to_dict())
    _write_text(out / "bound.json", json.dumps(bound_doc, indent=2) + "\n")
    print(f"wrote {out / 'trace.csv'}, {out / 'result.json'}, {out / 'bound.json'}")
    return EXIT_OK


def cmd_run(args) -> int:
    doc = load_experiment(args.config)
    cfg = build_run_config(doc, Path(args.config).resolve().parent, seed_override=args.seed)
    gate = _gate_for(cfg)
    if not gate.ok:
        if not args.force:
            for v in gate.violations:
                print(f"violation: {v}")
            print("gates failed; rerun with --force to execute anyway")
            return EXIT_VALIDATION
        print("warning: running despite gate violations (--force): " + "; ".join(gate.violations))
    out = _resolve_out_dir(args, doc)
    return _run_and_write(cfg, out, _config_hash(doc, args.seed))


def _sweep_rows(doc: dict, cfg: engine.RunConfig, force: bool):
    sweep = doc["sweep"]
    counts = sweep["worker_counts"]
    t_end = cfg.hp.horizon
    beta = cfg.hp.beta
    spec = cfg.problem
    interval_spec = sweep.get("interval_list", [1])

    jobs, violations = [], []
    for n in counts:
        gamma = math.sqrt(n) / math.sqrt(t_end)
        if interval_spec == "auto":
            try:
                intervals = [theory.max_interval(n, t_end, spec.certified_L, beta,
                                                 kappa_is_zero=spec.certified_kappa == 0.0)]
            except theory.ThresholdViolation as exc:
                violations.append(f"N={n}: {exc}")
                continue
        else:
            intervals = interval_spec
        for interval in intervals:
            hp = HyperParams(gamma=gamma, beta=beta, interval=interval, horizon=t_end)
            gate = (theory.gate_nesterov(hp, spec.certified_L)
                    if cfg.option == engine.NESTEROV
                    else theory.gate_polyak(hp, spec.certified_L))
            if not gate.ok:
                violations.append(f"N={n} I={interval}: " + "; ".join(gate.violations))
            thr = (theory.min_horizon_every_step(n, spec.certified_L, beta)
                   if interval == 1
                   else theory.min_horizon_reduced_comm(n, spec.certified_L, beta))
            if t_end < thr:
                violations.append(f"N={n} I={interval}: T={t_end} is below threshold {thr}")
            for k in range(sweep.get("seed_count", 20)):
                jobs.append((n, interval, cfg.seed + k, hp))
    if violations and not force:
        raise ValidationFailure("sweep thresholds failed:\n  " + "\n  ".join(violations))
    return jobs


def cmd_sweep(args) -> int:
    doc = load_experiment(args.config)
    if "sweep" not in doc:
        raise ValidationFailure("experiment file has no sweep section")
    cfg = build_run_config(doc, Path(args.config).resolve().parent, seed_override=args.seed)
    if cfg.algorithm != engine.PARALLEL_RESTARTED:
        raise ValidationFailure("sweeps drive the parallel-restarted algorithm")
    if cfg.problem.certified_kappa != 0.0:
        raise ValidationFailure("sweeps replicate a homogeneous problem; certified_kappa must be 0")
    jobs = _sweep_rows(doc, cfg, args.force)
    spec = cfg.problem

    def one(job):
        n, interval, seed, hp = job
        problem = engine.replicated_problem(spec, n)
        run_cfg = engine.RunConfig(
            algorithm=cfg.algorithm, option=cfg.option, hp=hp, problem=problem,
            x_init=cfg.x_init, seed=seed, eval_every=max(1, hp.horizon // 16),
        )
        result = engine.run(run_cfg)
        return {
            "workers": n, "interval": interval, "seed": seed,
            "avg_grad_norm_sq": result.avg_grad_norm_sq,
            "comm_rounds": result.comm_rounds_total,
        }

    workers = max(1, args.threads)
    if workers == 1:
        rows = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, jobs))
    rows.sort(key=lambda r: (r["workers"], r["interval"], r["seed"]))

    config_hash = _config_hash(doc, args.seed)
    out = _resolve_out_dir(args, doc)
    lines = [f"# config_hash={config_hash}", "workers,interval,seed,avg_grad_norm_sq,comm_rounds"]
    for r in rows:
        lines.append(
            f"{r['workers']},{r['interval']},{r['seed']},"
            f"{r['avg_grad_norm_sq']!r},{r['comm_rounds']}"
        )
    _write_text(out / "speedup.csv", "\n".join(lines) + "\n")

    counts = sorted({r["workers"] for r in rows})
    fit = {"config_hash": config_hash, "exponent": None, "exponent_stderr": None,
           "mean_by_workers": {}, "note": None}
    if doc["sweep"].get("interval_list", [1]) == "auto":
        base_rows = rows  # one corollary-chosen interval per worker count
    else:
        base_interval = min(r["interval"] for r in rows)
        base_rows = [r for r in rows if r["interval"] == base_interval]
    for n in counts:
        vals = [r["avg_grad_norm_sq"] for r in base_rows if r["workers"] == n]
        fit["mean_by_workers"][str(n)] = float(np.mean(vals))
    if len(counts) < 2:
        fit["note"] = "exponent undefined: need at least two worker counts"
    else:
        seeds = sorted({r["seed"] for r in base_rows})
        log_n = np.log(np.asarray(counts, dtype=np.float64))
        slopes = []
        for s in seeds:
            by_n = {r["workers"]: r["avg_grad_norm_sq"] for r in base_rows if r["seed"] == s}
            slopes.append(float(np.polyfit(log_n, np.log([by_n[n] for n in counts]), 1)[0]))
        fit["exponent"] = float(np.mean(slopes))
        if len(slopes) >= 2:
            fit["exponent_stderr"] = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes)))
    _write_text(out / "speedup_fit.json", json.dumps(fit, indent=2) + "\n")
    print(f"wrote {out / 'speedup.csv'}, {out / 'speedup_fit.json'}")
    return EXIT_OK


def _read_trace_csv(path: Path):
    rows = []
    text = path.read_text(encoding="utf-8")
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    if not lines or lines[0] != engine.TRACE_CSV_HEADER:
        raise ValueError(f"{path}: unexpected trace header")
    for line in lines[1:]:
        parts = line.split(",")
        rows.append({"t": int(parts[0]), "grad_norm_sq": float(parts[1]),
                     "comm_rounds": int(parts[5])})
    return rows


def cmd_report(args) -> int:
    root = Path(args.directory)
    if not root.is_dir():
        print(f"error: {root} is not a directory")
        return EXIT_IO
    candidates = sorted(p for p in [root, *root.iterdir()] if p.is_dir())
    series, failures = [], []
    for d in candidates:
        trace_path, result_path = d / "trace.csv", d / "result.json"
        if not trace_path.exists() or not result_path.exists():
            continue
        try:
            meta = json.loads(result_path.read_text(encoding="utf-8"))
            rows = _read_trace_csv(trace_path)
            bound_path = d / "bound.json"
            bound = json.loads(bound_path.read_text(encoding="utf-8")) if bound_path.exists() else None
            series.append({"name": d.name, "meta": meta, "rows": rows, "bound": bound})
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            failures.append(f"{d}: {exc}")
    for f in failures:
        print(f"corrupt ledger: {f}")
    if not series:
        print(f"error: no run ledgers found under {root} (need trace.csv + result.json)")
        return EXIT_IO
    hashes = {s["meta"].get("problem_hash") for s in series}
    if len(hashes) > 1:
        print("error: refusing to merge series with mismatched problem hashes:")
        for s in series:
            print(f"  {s['name']}: {s['meta'].get('problem_hash')}")
        return EXIT_VALIDATION

    out = Path(args.out) if args.out else root
    problem_hash = next(iter(hashes))
    header = f"# problem_hash={problem_hash}"

    def emit(name, col, value_of):
        lines = [header, f"series,{col},grad_norm_sq"]
        for s in series:
            for r in s["rows"]:
                lines.append(f"{s['name']},{value_of(r)},{r['grad_norm_sq']!r}")
        _write_text(out / name, "\n".join(lines) + "\n")

    emit("report_grad_vs_iteration.csv", "t", lambda r: r["t"])
    emit("report_grad_vs_comm.csv", "comm_rounds", lambda r: r["comm_rounds"])
    lines = [header, "series,t,bound_value"]
    for s in series:
        if s["bound"] is None:
            continue
        for r in s["rows"]:
            lines.append(f"{s['name']},{r['t']},{s['bound']['bound_value']!r}")
    _write_text(out / "report_bound_overlay.csv", "\n".join(lines) + "\n")
    print(f"wrote report series for {len(series)} run(s) to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="momentum-sync",
        description="deterministic distributed momentum SGD experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_force=True):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for sweeps (never changes results)")
        if with_force:
            p.add_argument("--force", action="store_true",
                           help="run even if theory gates fail")

    p_val = sub.add_parser("validate", help="check schema and theory gates")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("config")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the speedup / interval sweep")
    p_sweep.add_argument("config")
    add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="emit plot-ready CSV series from run ledgers")
    p_rep.add_argument("directory")
    p_rep.add_argument("--out", type=str, default=None)
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"validation failure: {exc}")
        return EXIT_VALIDATION
    except engine.DivergenceError as exc:
        print(f"divergence: {exc}")
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"i/o failure: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
