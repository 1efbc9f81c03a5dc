"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .experiment import (ConfigError, ExperimentConfig, atomic_write_text,
                         dump_json, run_attack_command, run_benchmark_command,
                         run_evaluate_command)
from .graph import generate_sbm, save_graph
from .verify import run_bound_sweep, run_gradient_flip_search, run_projection_check


def _fail(code: int, message: str):
    click.echo("error: %s" % message, err=True)
    sys.exit(code)


def _load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_file(path)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        _fail(1, str(exc))


@click.group()
def main():
    """Edge-flip attacks on the group fairness of graph node classifiers."""


@main.command()
@click.option("--n", type=int, required=True)
@click.option("--d-x", type=int, required=True)
@click.option("--homophily", type=float, default=0.8, show_default=True)
@click.option("--label-noise", type=float, default=0.05, show_default=True)
@click.option("--avg-degree", type=float, default=8.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output-dir", type=click.Path(), default=".", show_default=True)
def gen(n, d_x, homophily, label_noise, avg_degree, seed, output_dir):
    """Generate a synthetic two-block graph and write the on-disk formats."""
    try:
        graph = generate_sbm(n=n, d_x=d_x, homophily=homophily,
                             label_noise=label_noise, seed=seed,
                             avg_degree=avg_degree)
    except ValueError as exc:
        _fail(1, str(exc))
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        save_graph(graph, outdir / "nodes.csv", outdir / "edges.tsv")
    except OSError as exc:
        _fail(2, str(exc))
    click.echo("wrote %s and %s (%d nodes, %d edges)"
               % (outdir / "nodes.csv", outdir / "edges.tsv", graph.n, graph.num_edges))


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--output-dir", type=click.Path(), default=None,
              help="Override the config's output directory.")
def attack(config_path, output_dir):
    """Run the configured attack and write the perturbed graph, trace and flips."""
    config = _load_config(config_path)
    if output_dir is not None:
        config.output_dir = output_dir
    try:
        summary = run_attack_command(config)
    except Exception as exc:  # CLI boundary: map any failure to exit 2
        _fail(2, str(exc))
    click.echo("attack complete: %d flips, artifacts in %s"
               % (summary["num_flips"], config.output_dir))


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--output-dir", type=click.Path(), default=None)
def evaluate(config_path, output_dir):
    """Score the configured victims on the clean and attacked graphs."""
    config = _load_config(config_path)
    if output_dir is not None:
        config.output_dir = output_dir
    if not config.victims:
        _fail(1, "evaluate needs at least one victim spec")
    try:
        report = run_evaluate_command(config)
    except FileNotFoundError as exc:
        _fail(1, str(exc))
    except Exception as exc:
        _fail(2, str(exc))
    for victim in report["victims"]:
        for which in ("clean", "attacked"):
            mean = victim[which]["mean"]
            click.echo("%-12s %-8s acc=%s delta_dp=%s"
                       % (victim["kind"], which,
                          _num(mean["acc"]), _num(mean["delta_dp"])))
    click.echo("report written to %s/report.json" % config.output_dir)


def _num(v):
    return "n/a" if v is None else "%.4f" % v


@main.command("verify-theorems")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trials", type=int, default=100, show_default=True)
@click.option("--output-dir", type=click.Path(), default=".", show_default=True)
def verify_theorems(seed, trials, output_dir):
    """Run the analytical-claim verification suite and report pass/fail."""
    if trials < 1:
        _fail(1, "trials must be >= 1")
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        bounds = run_bound_sweep(trials=trials, seed=seed)
        projection = run_projection_check(trials=max(50, trials // 2), seed=seed)
        flips = run_gradient_flip_search(trials=max(400, trials), seed=seed)
    except Exception as exc:
        _fail(2, str(exc))
    report = {"bounds": {k: v for k, v in bounds.items() if k != "rows"},
              "projection": projection, "gradient_flip": flips}
    atomic_write_text(outdir / "verification.json", dump_json(report))
    click.echo("bound sweep        : %s (dp %d/%d, w1 %d/%d, mi %d/%d, sqrt %d/%d)"
               % ("pass" if bounds["all_pass"] else "FAIL",
                  bounds["dp_pass"], bounds["trials"],
                  bounds["w1_pass"], bounds["trials"],
                  bounds["mi_pass"], bounds["mi_applicable"],
                  bounds["mi_sqrt_pass"], bounds["mi_sqrt_applicable"]))
    click.echo("projection step    : %s (worst error %.2e, constraint %.2e)"
               % ("pass" if projection["all_pass"] else "FAIL",
                  projection["worst_step_error"],
                  projection["worst_constraint_violation"]))
    click.echo("gradient-pick flaw : %s (%d witnesses in %d trials)"
               % ("pass" if flips["all_pass"] else "FAIL",
                  flips["witnesses_found"], flips["trials"]))
    if not (bounds["all_pass"] and projection["all_pass"] and flips["all_pass"]):
        sys.exit(2)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--a-sweep", default="0.0005,0.001,0.01,all", show_default=True,
              help="Comma-separated candidate-pool sizes (fractions, counts, or 'all').")
@click.option("--output-dir", type=click.Path(), default=None)
def benchmark(config_path, a_sweep, output_dir):
    """Sweep the candidate-pool size and record work vs. objective tradeoffs."""
    config = _load_config(config_path)
    if output_dir is not None:
        config.output_dir = output_dir
    values = []
    for token in a_sweep.split(","):
        token = token.strip()
        if token == "all":
            values.append("all")
        else:
            try:
                values.append(float(token) if "." in token or "e" in token
                              else int(token))
            except ValueError:
                _fail(1, "bad a-sweep entry %r" % token)
    try:
        rows = run_benchmark_command(config, values)
    except Exception as exc:
        _fail(2, str(exc))
    for row in rows:
        click.echo("a=%-8s evaluations=%-10d wall=%.2fs objective=%.6f"
                   % (row["a"], row["candidate_evaluations"],
                      row["wall_time_s"], row["final_objective"]))


if __name__ == "__main__":
    main()
