"""Command-line front end: gen, train, eval, attack, transfer, report."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import run_campaign
from .agent import load_checkpoint, rollout, save_checkpoint, train
from .baselines import StaticEnsemble, enumerate_baselines, predict_table
from .config import ConfigError, RunConfig, format_config, parse_config
from .evaluator import (MetricsReport, ReportRow, baseline_rows, compute_metrics, format_table, pareto_front,
                        pareto_points, write_report)
from .rewards import two_region_curve
from .scores import ScoreTable, ScoreTableError, load_table, split, synthesize, write_table
from .transfer import TransferError, TransferProblem, transfer, two_region_parameters


def _out(args, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(args.out) / p


def _splits(cfg: RunConfig) -> tuple[ScoreTable, ScoreTable, ScoreTable]:
    cfg.require("data.table")
    table = load_table(cfg["data.table"])
    return split(table, cfg["data.split"], cfg["data.split_seed"])


def _checkpoint_path(cfg: RunConfig, args) -> Path:
    if cfg["eval.checkpoint"] is not None:
        return Path(cfg["eval.checkpoint"])
    return _out(args, cfg["train.checkpoint"])


def _load_agent(cfg: RunConfig, args):
    path = _checkpoint_path(cfg, args)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _check_pool(doc: dict, table: ScoreTable, what: str) -> None:
    ids = doc.get("detector_ids") or []
    if ids != table.detector_ids:
        raise ConfigError(f"detector pools differ between checkpoint {ids} and {what} {table.detector_ids}")


def _eval_table(cfg: RunConfig, args) -> tuple[ScoreTable, str]:
    if args.test_table:
        return load_table(args.test_table), str(args.test_table)
    return _splits(cfg)[2], "test split"


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen(cfg: RunConfig, args) -> str:
    table = synthesize(cfg.synth_spec())
    path = _out(args, cfg["data.out"])
    path.parent.mkdir(parents=True, exist_ok=True)
    write_table(table, path)
    return f"wrote {len(table)} samples x {table.n_detectors} detectors to {path}"


def cmd_train(cfg: RunConfig, args) -> str:
    tr, va, _ = _splits(cfg)
    init = None
    if cfg["train.init"] is not None:
        init, doc = load_checkpoint(cfg["train.init"])
        _check_pool(doc, tr, "training table")
    tc = cfg.train_config()
    scheme, goal = cfg.scheme(), cfg.goal()
    result = train(tr, va, scheme, goal, tc, init)
    ckpt = _out(args, cfg["train.checkpoint"])
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    extra = {"scheme": scheme.scheme_id, "reward.d": cfg["reward.d"], "reward.t_cap": cfg["reward.t_cap"],
             "goal": asdict(goal) if goal else None, "best_epoch": result.best_epoch}
    save_checkpoint(ckpt, result.params, tc, tr.detector_ids, extra)
    log = {"best_epoch": result.best_epoch, "history": [asdict(h) for h in result.history]}
    _write_json(ckpt.with_name(ckpt.stem + "_log.json"), log)
    return f"best epoch {result.best_epoch}; checkpoint {ckpt}"


def _agent_row(params, doc, table: ScoreTable) -> ReportRow:
    ro = rollout(params, table.scores, table.costs)
    m = compute_metrics(ro.confidence, ro.predicted, ro.total_cost, table.labels)
    scheme = (doc.get("extra") or {}).get("scheme", "?")
    return ReportRow("agent", f"drl scheme {scheme}", m)


def cmd_eval(cfg: RunConfig, args) -> str:
    params, doc = _load_agent(cfg, args)
    table, where = _eval_table(cfg, args)
    _check_pool(doc, table, where)
    rows = [_agent_row(params, doc, table)]
    if cfg["eval.baselines"]:
        rows += baseline_rows(table)
    extra = {"table": where, "n_samples": len(table), "quality": cfg["eval.quality"]}
    jpath, _ = write_report(rows, args.out, cfg["eval.out"], extra)
    return f"{len(rows)} rows written to {jpath}"


def _ensemble_target(spec: str, cfg: RunConfig, args) -> StaticEnsemble:
    """``or-best`` / ``majority-best`` (highest validation F1) or ``rule:id+id``."""
    _, va, _ = _splits(cfg)
    ids = va.detector_ids
    if spec.endswith("-best"):
        rule = spec[:-5]
        cands = [e for e in enumerate_baselines(va.n_detectors) if e.rule == rule]
        if not cands:
            raise ConfigError(f"unknown attack target {spec!r}")

        def f1(e):
            conf, pred, cost = predict_table(e, va)
            return compute_metrics(conf, pred, cost, va.labels).f1 or 0.0
        return max(cands, key=f1)
    rule, _, members = spec.partition(":")
    try:
        subset = tuple(ids.index(m) for m in members.split("+"))
    except ValueError:
        raise ConfigError(f"attack target {spec!r} names an unknown detector") from None
    return StaticEnsemble(subset, rule)


def cmd_attack(cfg: RunConfig, args) -> str:
    ac = cfg.attack_config()
    kind = cfg["attack.kind"]
    table, where = _eval_table(cfg, args)
    if cfg["attack.target"] == "agent":
        target, doc = _load_agent(cfg, args)
        _check_pool(doc, table, where)
    else:
        target = _ensemble_target(cfg["attack.target"], cfg, args)
    report = run_campaign(target, table, ac, cfg["attack.n_samples"], kind)
    path = _out(args, cfg["attack.out"])
    path.parent.mkdir(parents=True, exist_ok=True)
    report.write(path)
    rate = "undefined" if report.success_rate is None else f"{report.success_rate:.4f}"
    return f"success rate {rate}; report {path}"


def cmd_transfer(cfg: RunConfig, args) -> str:
    source = two_region_curve(cfg["reward.d"], cfg["reward.t_cap"])
    end = cfg["transfer.target_end"]
    if end is None:
        if cfg["transfer.target_table"] is None:
            raise ConfigError("transfer needs transfer.target_end or transfer.target_table")
        costs = load_table(cfg["transfer.target_table"]).costs
        end = float(np.percentile(costs, cfg["transfer.percentile"]))
    problem = TransferProblem(source, cfg["transfer.target_start"], end, cfg["transfer.epsilon"],
                              boundary_tol=cfg["transfer.tolerance"],
                              residual_tol=cfg["transfer.residual_tol"], seed=cfg["transfer.seed"])
    sol = transfer(problem)
    params = two_region_parameters(sol)
    curve_path = _out(args, cfg["transfer.out"])
    curve_path.parent.mkdir(parents=True, exist_ok=True)
    curve_path.write_text(format_config(params))
    rel = float(np.max(np.abs(sol.achieved_beta - sol.beta_target) / sol.beta_target))
    _write_json(curve_path.with_suffix(".json"), {
        "source": {"d": cfg["reward.d"], "t_cap": cfg["reward.t_cap"]},
        "target_interval": [problem.target_start, end],
        "source_beta": sol.source_beta.tolist(),
        "beta_target": sol.beta_target.tolist(),
        "achieved_beta": sol.achieved_beta.tolist(),
        "relative_beta_error": rel,
        "sym_kl": sol.divergence,
        "boundaries": list(sol.boundaries),
        "curve": params,
    })
    return f"d = {params['reward.d']:.6g}, t_cap = {params['reward.t_cap']:.6g}; curve file {curve_path}"


def _classify_json(path: Path) -> str | None:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if not isinstance(doc, dict):
        return None
    if "rows" in doc:
        return "eval"
    if "round_rates" in doc:
        return "attack"
    if "beta_target" in doc:
        return "transfer"
    return None


def cmd_report(cfg: RunConfig, args) -> str:
    from .plotting import attack_figure, pareto_figure

    out = Path(args.out)
    stem = cfg["report.out"]
    found: dict[str, list[Path]] = {"eval": [], "attack": [], "transfer": []}
    for p in sorted(out.glob("*.json")):
        if p.stem == stem:
            continue
        kind = _classify_json(p)
        if kind:
            found[kind].append(p)
    if not any(found.values()):
        raise ConfigError(f"no eval, attack or transfer outputs found in {out}")
    merged: dict = {"sources": {k: [p.name for p in v] for k, v in found.items()}}
    text = []
    figures = []
    for p in found["eval"]:
        doc = json.loads(p.read_text())
        rows = [ReportRow(r["combination"], r["aggregation"], _metrics_from(r)) for r in doc["rows"]]
        text.append(f"== {p.name} ==\n" + format_table(rows))
        pts = pareto_points(rows)
        if pts:
            agents = [q.name for q in pts if q.name.startswith("agent")]
            fig = pareto_figure(pts, out / f"{stem}_{p.stem}_pareto.png", agents)
            figures.append(fig.name)
            merged.setdefault("pareto_front", {})[p.name] = [asdict(q) for q in pareto_front(pts)]
        merged.setdefault("eval", {})[p.name] = doc["rows"]
    if found["attack"]:
        labels, rates, lines = [], [], []
        for p in found["attack"]:
            doc = json.loads(p.read_text())
            c = doc["config"]
            label = f"{p.stem}: {doc['target']} {doc['attack']} {c['goal']} eps={c['epsilon']}"
            rate = doc["success_rate"]
            lines.append(f"  {label}: " + ("undefined" if rate is None else f"{rate:.4f}"))
            if rate is not None:
                labels.append(label)
                rates.append(rate)
        text.append("== attacks ==\n" + "\n".join(lines) + "\n")
        merged["attacks"] = {p.name: json.loads(p.read_text()) for p in found["attack"]}
        if rates:
            figures.append(attack_figure(labels, rates, out / f"{stem}_attacks.png").name)
    for p in found["transfer"]:
        doc = json.loads(p.read_text())
        text.append(f"== {p.name} ==\n  d = {doc['curve']['reward.d']:.6g}, t_cap = "
                    f"{doc['curve']['reward.t_cap']:.6g}, symKL = {doc['sym_kl']:.3e}\n")
        merged.setdefault("transfer", {})[p.name] = doc
    merged["figures"] = figures
    _write_json(out / f"{stem}.json", merged)
    (out / f"{stem}.txt").write_text("\n".join(text))
    return f"report {out / (stem + '.txt')} with {len(figures)} figure(s)"


def _metrics_from(row: dict) -> MetricsReport:
    keys = ("auc", "f1", "precision", "recall", "accuracy", "mean_time", "tp", "tn", "fp", "fn")
    return MetricsReport(**{k: row[k] for k in keys})


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
    "attack": cmd_attack, "transfer": cmd_transfer, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], metavar="PATH",
                        help="config file; repeat to layer files, later ones win")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; applied after all files")
    common.add_argument("--out", default=".", metavar="DIR", help="output directory")
    parser = argparse.ArgumentParser(prog="cascadeforge",
                                     description="Cost-aware detector selection with a learned agent.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "synthesize a score table",
        "train": "train an agent and write a checkpoint",
        "eval": "evaluate the agent and all static ensembles",
        "attack": "run an attack campaign",
        "transfer": "transfer the cost curve to a new time range",
        "report": "merge outputs in --out into one report with figures",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name in ("eval", "attack"):
            p.add_argument("--test-table", metavar="PATH",
                           help="evaluate on this whole table instead of the test split")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "test_table"):
        args.test_table = None
    try:
        cfg = parse_config(args.config, args.set)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        msg = COMMANDS[args.command](cfg, args)
    except (ConfigError, ScoreTableError, TransferError, ValueError, OSError) as exc:
        text = " ".join(str(exc).split())
        print(f"cascadeforge {args.command}: error: {text}", file=sys.stderr)
        return 2
    print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
