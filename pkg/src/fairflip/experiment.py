"""Experiment harness: config parsing, attack artifacts, two-stage evaluation.

Evaluation protocols:

* evasion -- the victim is trained on the clean graph; its output on the clean
  graph is compared with its output on the perturbed graph (same weights);
* poisoning -- a normal model is trained on the clean graph and scored there,
  a victim model is trained on the perturbed graph and scored there.

All file writes are atomic (temp file + rename) and reports are validated
against a JSON schema before they reach disk.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import jsonschema

from .attack import AttackConfig, run_attack, greedy_unconstrained_attack
from .graph import (EdgeFlip, Graph, classify_edge_group, generate_sbm,
                    load_graph, save_graph)
from .victims import (GCNClassifier, cross_group_injection_attack, evaluate_victim,
                      random_attack)

CONFIG_VERSION = 1
ATTACK_METHODS = ("fairness", "greedy-unconstrained", "random", "cross-group-injection")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class VictimSpec:
    kind: str = "regularized"
    hidden_dim: int = 16
    reg_weight: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 1000
    seeds: tuple = (0, 1, 2)

    def make(self, seed: int) -> GCNClassifier:
        return GCNClassifier(kind=self.kind, hidden_dim=self.hidden_dim,
                             reg_weight=self.reg_weight,
                             learning_rate=self.learning_rate,
                             epochs=self.epochs, seed=seed)


@dataclass
class ExperimentConfig:
    seed: int
    dataset: dict
    attack_method: str
    attack: AttackConfig
    victims: list
    output_dir: str

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        try:
            if payload.get("version") != CONFIG_VERSION:
                raise ConfigError("config version must be %d" % CONFIG_VERSION)
            seed = int(payload.get("seed", 0))
            dataset = payload["dataset"]
            if not ({"sbm", "files"} & set(dataset)):
                raise ConfigError("dataset needs an 'sbm' spec or 'files' paths")
            atk = dict(payload.get("attack", {}))
            method = atk.pop("method", "fairness")
            if method not in ATTACK_METHODS:
                raise ConfigError("unknown attack method %r" % method)
            budget = atk.pop("budget", 0.05)
            eps_spec = atk.pop("utility_budget", {"relative": 0.05})
            if eps_spec is None:
                eps, eps_kind = None, "relative"
            elif isinstance(eps_spec, dict) and len(eps_spec) == 1:
                eps_kind, eps = next(iter(eps_spec.items()))
                eps = float(eps)
            else:
                raise ConfigError("utility_budget must be null, {'relative': x} "
                                  "or {'absolute': x}")
            config = AttackConfig(
                budget_edges=budget, utility_budget=eps,
                utility_budget_kind=eps_kind, seed=seed,
                **{k: v for k, v in atk.items()})
            config.validate()
            victims = [VictimSpec(**{**v, "seeds": tuple(v.get("seeds", (0, 1, 2)))})
                       for v in payload.get("victims", [])]
            for v in victims:
                if not v.seeds:
                    raise ConfigError("each victim needs at least one seed")
                if v.kind not in ("vanilla", "regularized"):
                    raise ConfigError("victim kind must be vanilla or regularized")
            return cls(seed=seed, dataset=dataset, attack_method=method,
                       attack=config, victims=victims,
                       output_dir=payload.get("output_dir", "fairflip-out"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json_default(obj):
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    raise TypeError("not JSON serializable: %r" % (obj,))


def dump_json(payload) -> str:
    return json.dumps(payload, indent=2, default=_json_default)


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            "%.17g" % v if isinstance(v, float) else str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(config: ExperimentConfig) -> Graph:
    if "files" in config.dataset:
        spec = config.dataset["files"]
        return load_graph(spec["nodes"], spec["edges"])
    spec = dict(config.dataset["sbm"])
    spec.setdefault("seed", config.seed)
    return generate_sbm(**spec)


def edge_pattern_breakdown(graph: Graph, flips) -> dict:
    """EE/ED/DE/DD percentages of the flipped pairs (labels from the clean graph)."""
    counts = {"EE": 0, "ED": 0, "DE": 0, "DD": 0}
    unclassified = 0
    for flip in flips:
        if graph.labeled[flip.u] and graph.labeled[flip.v]:
            counts[classify_edge_group(graph, flip.u, flip.v)] += 1
        else:
            unclassified += 1
    total = sum(counts.values())
    pct = {k: (100.0 * c / total if total else 0.0) for k, c in counts.items()}
    return {"counts": counts, "percent": pct, "unclassified": unclassified,
            "total_classified": total}


def run_attack_command(config: ExperimentConfig) -> dict:
    """Run the configured attack and write every artifact to the output dir."""
    graph = load_dataset(config)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    method = config.attack_method
    result = None
    if method == "fairness":
        result = run_attack(graph, config.attack)
        poisoned, flips = result.graph, result.flips
    elif method == "greedy-unconstrained":
        result = greedy_unconstrained_attack(graph, config.attack)
        poisoned, flips = result.graph, result.flips
    elif method == "random":
        budget = config.attack.resolve_budget(graph.num_edges)
        poisoned = random_attack(graph, budget, config.seed)
        flips = _diff_flips(graph, poisoned)
    else:
        budget = config.attack.resolve_budget(graph.num_edges)
        poisoned = cross_group_injection_attack(graph, budget, config.seed)
        flips = _diff_flips(graph, poisoned)

    save_graph(poisoned, outdir / "poisoned_nodes.csv", outdir / "poisoned_edges.tsv")
    save_graph(graph, outdir / "clean_nodes.csv", outdir / "clean_edges.tsv")
    atomic_write_text(outdir / "flips.json", dump_json(
        [{"u": f.u, "v": f.v, "kind": f.kind, "iteration": f.iteration}
         for f in flips]))

    summary = {
        "method": method,
        "mode": config.attack.mode,
        "num_flips": len(flips),
        "pattern": edge_pattern_breakdown(graph, flips),
    }
    if result is not None:
        _write_csv(outdir / "trace.csv",
                   ["t", "u", "v", "kind", "delta_Lf", "delta_L", "score", "Lf", "L"],
                   [(r.t, r.u, r.v, r.kind, r.delta_lf, r.delta_l, r.score, r.lf, r.l)
                    for r in result.trace])
        _write_csv(outdir / "benchmark.csv",
                   ["round", "candidates_evaluated", "ranking_time", "score_time",
                    "objective"],
                   [(b.round, b.candidates_evaluated, b.ranking_time, b.score_time,
                     b.objective) for b in result.benchmark])
        atomic_write_text(outdir / "surrogate.json",
                          dump_json(result.surrogate.to_checkpoint()))
        summary.update({
            "baseline_objective": result.baseline_objective,
            "final_objective": result.final_objective,
            "baseline_train_loss": result.baseline_train_loss,
            "final_train_loss": result.final_train_loss,
            "utility_budget_resolved": result.utility_budget_resolved,
            "budget_resolved": result.budget_resolved,
            "stop_reason": result.stop_reason,
            "candidate_evaluations": result.candidate_evaluations,
        })
    atomic_write_text(outdir / "attack_summary.json", dump_json(summary))
    return summary


def _diff_flips(before: Graph, after: Graph):
    flips = [EdgeFlip(u=a, v=b, kind="add") for (a, b) in sorted(after.edges - before.edges)]
    flips += [EdgeFlip(u=a, v=b, kind="remove") for (a, b) in sorted(before.edges - after.edges)]
    return flips


REPORT_SCHEMA = {
    "type": "object",
    "required": ["mode", "victims", "pattern"],
    "properties": {
        "mode": {"enum": ["evasion", "poisoning"]},
        "pattern": {"type": "object"},
        "victims": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "clean", "attacked", "seeds"],
                "properties": {
                    "kind": {"type": "string"},
                    "seeds": {"type": "array", "items": {"type": "integer"}},
                    "clean": {"$ref": "#/$defs/aggregate"},
                    "attacked": {"$ref": "#/$defs/aggregate"},
                },
            },
        },
    },
    "$defs": {
        "aggregate": {
            "type": "object",
            "required": ["mean", "std", "per_seed"],
            "properties": {
                "mean": {"$ref": "#/$defs/metrics"},
                "std": {"$ref": "#/$defs/metrics"},
                "per_seed": {"type": "array"},
            },
        },
        "metrics": {
            "type": "object",
            "properties": {k: {"type": ["number", "null"]}
                           for k in ("acc", "auc", "delta_dp", "delta_eo")},
        },
    },
}

_METRIC_KEYS = ("acc", "auc", "delta_dp", "delta_eo")


def _aggregate_reports(reports) -> dict:
    out = {"mean": {}, "std": {}, "per_seed": [r.to_dict() for r in reports]}
    for key in _METRIC_KEYS:
        vals = [getattr(r, key) for r in reports]
        if any(v is None for v in vals):
            out["mean"][key] = None
            out["std"][key] = None
        else:
            out["mean"][key] = float(np.mean(vals))
            out["std"][key] = float(np.std(vals))
    return out


def run_evaluate_command(config: ExperimentConfig) -> dict:
    """Two-stage protocol over the attack artifacts; emits JSON + CSV reports."""
    outdir = Path(config.output_dir)
    summary_path = outdir / "attack_summary.json"
    if not summary_path.exists():
        raise FileNotFoundError("missing attack artifacts in %s; run the attack first"
                                % outdir)
    attack_summary = json.loads(summary_path.read_text())
    mode = attack_summary["mode"]
    clean = load_graph(outdir / "clean_nodes.csv", outdir / "clean_edges.tsv")
    poisoned = load_graph(outdir / "poisoned_nodes.csv", outdir / "poisoned_edges.tsv")

    victims_out = []
    for spec in config.victims:
        clean_reports, attacked_reports = [], []
        for seed in spec.seeds:
            if mode == "evasion":
                model = spec.make(seed).fit(clean)
                clean_reports.append(evaluate_victim(model, clean))
                attacked_reports.append(evaluate_victim(model, poisoned))
            else:
                normal = spec.make(seed).fit(clean)
                clean_reports.append(evaluate_victim(normal, clean))
                victim = spec.make(seed).fit(poisoned)
                attacked_reports.append(evaluate_victim(victim, poisoned))
        victims_out.append({
            "kind": spec.kind,
            "reg_weight": spec.reg_weight,
            "seeds": [int(s) for s in spec.seeds],
            "clean": _aggregate_reports(clean_reports),
            "attacked": _aggregate_reports(attacked_reports),
        })

    report = {
        "mode": mode,
        "attack_summary": attack_summary,
        "pattern": attack_summary["pattern"],
        "victims": victims_out,
    }
    jsonschema.validate(report, REPORT_SCHEMA)
    atomic_write_text(outdir / "report.json", dump_json(report))

    rows = []
    for v in victims_out:
        for which in ("clean", "attacked"):
            agg = v[which]
            rows.append([v["kind"], which]
                        + [_fmt_opt(agg["mean"][k]) for k in _METRIC_KEYS]
                        + [_fmt_opt(agg["std"][k]) for k in _METRIC_KEYS])
    _write_csv(outdir / "report.csv",
               ["victim", "graph"] + ["mean_%s" % k for k in _METRIC_KEYS]
               + ["std_%s" % k for k in _METRIC_KEYS], rows)
    return report


def _fmt_opt(v):
    return "" if v is None else float(v)


def run_benchmark_command(config: ExperimentConfig, a_sweep) -> list:
    """Attack once per candidate-pool size; returns and writes the sweep rows."""
    graph = load_dataset(config)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for a in a_sweep:
        cfg = dataclasses.replace(config.attack, candidate_top_a=a)
        start = time.perf_counter()
        result = run_attack(graph, cfg)
        wall = time.perf_counter() - start
        tag = "all" if a == "all" else repr(a)
        _write_csv(outdir / ("benchmark_a_%s.csv" % tag.replace(".", "p")),
                   ["round", "candidates_evaluated", "ranking_time", "score_time",
                    "objective"],
                   [(b.round, b.candidates_evaluated, b.ranking_time, b.score_time,
                     b.objective) for b in result.benchmark])
        rows.append({
            "a": tag,
            "rounds": len(result.benchmark),
            "candidate_evaluations": result.candidate_evaluations,
            "wall_time_s": wall,
            "final_objective": result.final_objective,
            "num_flips": len(result.flips),
        })
    _write_csv(outdir / "benchmark_sweep.csv",
               ["a", "rounds", "candidate_evaluations", "wall_time_s",
                "final_objective", "num_flips"],
               [(r["a"], r["rounds"], r["candidate_evaluations"], r["wall_time_s"],
                 r["final_objective"], r["num_flips"]) for r in rows])
    return rows
