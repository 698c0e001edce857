"""Command-line experiment runner.

    equiaug generate --config exp.yaml --out runs/g
    equiaug optimize --config exp.yaml --out runs/o
    equiaug evaluate --config exp.yaml --out runs/e
    equiaug sweep    --config exp.yaml --out runs/s --budget 5,10,20
    equiaug facility --config exp.yaml --out runs/f --budget 3,15

Exit status: 0 on success, 2 for configuration errors, 3 for data errors,
4 when training diverges.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig, derive_seed, load_config, provenance_header
from .evaluate import EvalReport, full_report
from .facility import train_facility
from .geci import geci_augment
from .graph import DiGraph, EditSet, GraphError, GroupSpec, RewardSet, validate_edits
from .ingest import DataError, DatasetBundle, load_bundle, save_bundle
from .mrp import TrainingDiverged, optimize_edges
from .synth import ConfigError, synthetic_instance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


@dataclass
class Problem:
    name: str
    graph: DiGraph
    groups: list[GroupSpec]
    rewards: RewardSet
    reward_mode: str = ""


def _to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def _write_json(path: Path, payload: dict, config: dict) -> None:
    path.write_text(_to_json({"config": config, **payload}))


def load_problem(cfg: ExperimentConfig, seed: int, ensemble: dict | None = None,
                 k: int | None = None, mode: str | None = None, name: str = "") -> Problem:
    if ensemble is None and cfg.uses_bundle:
        b = load_bundle(cfg.bundle_path())
        return Problem(name or cfg.bundle_path().parent.name, b.graph, b.groups, b.rewards)
    ens = cfg.ensemble_config(ensemble, seed)
    k = cfg.rewards.get("k", 3) if k is None else k
    mode = cfg.rewards.get("mode", "high-degree") if mode is None else mode
    rseed = cfg.rewards.get("seed", derive_seed(seed, "rewards"))
    try:
        inst = synthetic_instance(ens, k, mode, rseed, cfg.source.get("mask", "complement"))
    except GraphError as exc:
        raise ConfigError("rewards", str(exc)) from None
    return Problem(name or ens.kind, inst.graph, inst.groups, inst.rewards, mode)


def run_optimizer(cfg: ExperimentConfig, problem: Problem, name: str, budget: int, seed: int):
    """Returns (EditSet, trajectory or None, GECI trace or None)."""
    if name == "none":
        return EditSet(), None, None
    if name == "geci":
        edits, trace = geci_augment(
            problem.graph, problem.groups, problem.rewards, budget,
            T=cfg.optimizer.get("T", 10), prune=cfg.optimizer.get("prune", True),
        )
        return edits, None, trace
    tc = cfg.train_config(budget, seed, problem.graph.n)
    edits, _, traj = optimize_edges(problem.graph, problem.groups, problem.rewards, tc)
    return edits, traj, None


# -- subcommands ------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.uses_bundle:
        raise ConfigError("source", "generate needs source.ensemble")
    problem = load_problem(cfg, cfg.seed)
    resolved = cfg.resolved()
    resolved["source"]["ensemble"] = cfg.ensemble_config().to_dict()
    save_bundle(DatasetBundle(problem.graph, problem.groups, problem.rewards), out, provenance=resolved)
    summary = {
        "seed": cfg.seed,
        "graph_seed": resolved["source"]["ensemble"]["seed"],
        "nodes": problem.graph.n,
        "edges": len(problem.graph.edges),
        "mask": len(problem.graph.mask),
        "groups": [g.id for g in problem.groups],
        "rewards": list(problem.rewards.nodes),
    }
    _write_json(out / "summary.json", {"summary": summary}, resolved)
    return summary


def cmd_optimize(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    problem = load_problem(cfg, cfg.seed)
    settings = cfg.eval_settings(cfg.seed)
    try:
        edits, traj, trace = run_optimizer(cfg, problem, cfg.optimizer_name, cfg.budget, cfg.seed)
    except TrainingDiverged as exc:
        (out / "trajectory.csv").write_text(exc.trajectory.to_csv(provenance_header(resolved)))
        raise
    validate_edits(problem.graph, edits)
    before = full_report(problem.graph, None, problem.rewards, problem.groups, settings)
    after = full_report(problem.graph, edits, problem.rewards, problem.groups, settings)
    _write_json(out / "report_before.json", {"report": before.to_dict()}, resolved)
    _write_json(out / "report_after.json", {"report": after.to_dict()}, resolved)
    _write_json(out / "edits.json", {"edits": [list(e) for e in edits.sorted()]}, resolved)
    if traj is not None:
        (out / "trajectory.csv").write_text(traj.to_csv(provenance_header(resolved)))
    if trace is not None:
        _write_json(out / "geci_trace.json", {"trace": trace.to_dict()}, resolved)
    return {
        "optimizer": cfg.optimizer_name,
        "edits": len(edits),
        "utility": [before.utility, after.utility],
        "pooled_gini": [before.pooled_gini, after.pooled_gini],
    }


def _read_edits(path: Path) -> EditSet:
    try:
        data = json.loads(path.read_text())
        pairs = data["edits"] if isinstance(data, dict) else data
        return EditSet(frozenset((int(a), int(b)) for a, b in pairs))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: cannot read edits ({exc})") from None


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    problem = load_problem(cfg, cfg.seed)
    edits = EditSet()
    if cfg.edits:
        p = Path(cfg.edits)
        edits = _read_edits(p if p.is_absolute() else cfg.base_dir / p)
        validate_edits(problem.graph, edits)
    report = full_report(problem.graph, edits, problem.rewards, problem.groups, cfg.eval_settings(cfg.seed))
    _write_json(out / "report.json", {"report": report.to_dict()}, resolved)
    return {"utility": report.utility, "pooled_gini": report.pooled_gini, "edits": len(edits)}


SWEEP_HEAD = ["ensemble", "reward_mode", "budget", "seed", "optimizer", "status", "edits",
              "utility", "pooled_gini", "reward", "group_mean_gini", "equity_deviation"]


@dataclass(frozen=True)
class SweepJob:
    instance: str
    ensemble: dict | None
    k: int
    mode: str
    budget: int
    seed: int
    optimizer: str


def _run_job(cfg: ExperimentConfig, job: SweepJob) -> dict:
    row = {"ensemble": job.instance, "reward_mode": job.mode, "budget": job.budget,
           "seed": job.seed, "optimizer": job.optimizer}
    try:
        problem = load_problem(cfg, job.seed, job.ensemble, job.k, job.mode, job.instance)
        edits, _, _ = run_optimizer(cfg, problem, job.optimizer, job.budget, job.seed)
        validate_edits(problem.graph, edits)
        rep: EvalReport = full_report(problem.graph, edits, problem.rewards, problem.groups,
                                      cfg.eval_settings(job.seed))
    except (GraphError, ConfigError, TrainingDiverged, ValueError) as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
        return row
    row.update(status="ok", edits=len(edits), utility=rep.utility, pooled_gini=rep.pooled_gini,
               reward=rep.reward, group_mean_gini=rep.group_mean_gini,
               equity_deviation=rep.equity_deviation)
    for g in rep.groups:
        row[f"utility[{g}]"] = rep.per_group_utility[g]
        row[f"reward[{g}]"] = rep.per_group_reward[g]
    return row


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def sweep_jobs(cfg: ExperimentConfig, budgets: list[int]) -> list[SweepJob]:
    seeds = cfg.sweep.get("seeds") or [cfg.seed]
    opts = cfg.sweep.get("optimizers") or [cfg.optimizer_name]
    jobs = []
    for inst in cfg.instances():
        ens = None if (cfg.uses_bundle and not cfg.sweep.get("instances")) else inst.ensemble
        for b in budgets:
            for s in seeds:
                for o in opts:
                    jobs.append(SweepJob(inst.name, ens, inst.k, inst.mode if ens else "", b, s, o))
    return jobs


def run_sweep(cfg: ExperimentConfig, budgets: list[int], jobs: int = 1) -> list[dict]:
    work = sweep_jobs(cfg, budgets)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_job, [cfg] * len(work), work))
    else:
        rows = [_run_job(cfg, j) for j in work]
    return sorted(rows, key=lambda r: (r["ensemble"], r["reward_mode"], r["budget"], r["seed"], r["optimizer"]))


def sweep_csv(rows: list[dict], header: str = "") -> str:
    extra: list[str] = []
    for r in rows:
        for key in r:
            if key not in SWEEP_HEAD and key not in extra:
                extra.append(key)
    cols = SWEEP_HEAD + sorted(c for c in extra if c.startswith("utility[")) + sorted(
        c for c in extra if c.startswith("reward["))
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    budgets = cfg.sweep.get("budgets") or [cfg.budget]
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(cfg, budgets, int(cfg.sweep.get("jobs", 1)))
    (out / "sweep.csv").write_text(sweep_csv(rows, provenance_header(cfg.resolved())))
    failed = sum(r["status"] != "ok" for r in rows)
    return {"rows": len(rows), "failed": failed}


FACILITY_HEAD = ["k", "seed", "utility", "pooled_gini", "reward", "group_mean_gini", "facilities"]


def cmd_facility(cfg: ExperimentConfig, out: Path) -> dict:
    ks = cfg.facility.get("k", [cfg.budget or 1])
    ks = ks if isinstance(ks, list) else [ks]
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    problem = load_problem(cfg, cfg.seed)
    settings = cfg.eval_settings(cfg.seed)
    rows = []
    for k in ks:
        if not isinstance(k, int) or not 1 <= k <= problem.graph.n:
            raise ConfigError("facility.k", f"each k must be an integer in [1, n], got {k!r}")
        tc = cfg.train_config(k, cfg.seed, problem.graph.n)
        try:
            res = train_facility(problem.graph, problem.groups, k, tc)
        except TrainingDiverged as exc:
            (out / f"trajectory_k{k}.csv").write_text(exc.trajectory.to_csv(provenance_header(resolved)))
            raise
        rep = full_report(problem.graph, None, res.rewards, problem.groups, settings)
        (out / f"trajectory_k{k}.csv").write_text(res.trajectory.to_csv(provenance_header(resolved)))
        _write_json(out / f"facility_k{k}.json",
                    {"k": k, "facilities": list(res.rewards.nodes), "report": rep.to_dict()}, resolved)
        rows.append([k, cfg.seed, rep.utility, rep.pooled_gini, rep.reward, rep.group_mean_gini,
                     " ".join(map(str, res.rewards.nodes))])
    buf = io.StringIO()
    buf.write(provenance_header(resolved))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FACILITY_HEAD)
    w.writerows([[_cell(c) for c in r] for r in rows])
    (out / "facility.csv").write_text(buf.getvalue())
    return {"k": ks, "utility": [r[2] for r in rows], "pooled_gini": [r[3] for r in rows]}


COMMANDS = {
    "generate": cmd_generate,
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "facility": cmd_facility,
}


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("need one or more non-negative integers")
    return vals


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equiaug", description="Equitable graph augmentation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment config")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=_u64, help="override the config's top-level seed")
        p.add_argument("--budget", type=_int_list, help="budget(s); a list for sweep and facility")
    return parser


def apply_overrides(cfg: ExperimentConfig, command: str, seed: int | None, budget: list[int] | None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed, sweep={**cfg.sweep, "seeds": [seed]} if cfg.sweep else {})
    if budget is not None:
        if command == "sweep":
            cfg = replace(cfg, sweep={**cfg.sweep, "budgets": budget})
        elif command == "facility":
            cfg = replace(cfg, facility={**cfg.facility, "k": budget})
        else:
            if len(budget) != 1:
                raise ConfigError("--budget", f"{command} takes a single budget")
            cfg = replace(cfg, optimizer={**cfg.optimizer, "budget": budget[0]})
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args.command, args.seed, args.budget)
        summary = COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, GraphError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(_to_json(summary), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
