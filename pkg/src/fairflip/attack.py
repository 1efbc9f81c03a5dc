"""Sequential greedy edge-flip attack under edge and utility-change budgets.

Each round scores candidate flips by the exact change they cause in the
indicator demographic-parity objective on the test split, optionally penalized
by the train-loss change (the discrete projected update), commits the best
flip whose post-commit train loss stays within the utility budget, and in
poisoning mode retrains the surrogate on the perturbed structure.  A flip that
would violate the utility budget is never committed: the next-ranked candidate
is tried instead, and the attack stops when none qualifies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from .fastpath import AttackState, batch_loss_deltas, build_candidates, commit_flip
from .graph import Graph, flip_edge
from .surrogate import AggregatedFeatures, SurrogateClassifier, train_surrogate


@dataclass
class AttackConfig:
    """Attack hyperparameters.

    budget_edges : max flips; int for an absolute count, float in (0, 1] for a
        fraction of |E|.
    utility_budget : allowed |train-loss change|; interpreted per
        ``utility_budget_kind`` ("relative" to the clean train loss or
        "absolute"); None disables the constraint.
    candidate_top_a : per-round candidate pool; int count, float fraction of
        all node pairs, or "all".
    """

    budget_edges: float = 0.05
    utility_budget: float | None = 0.05
    utility_budget_kind: str = "relative"
    candidate_top_a: float = 0.1
    alpha: float = 1.0
    bandwidth: float = 0.1
    grid_size: int = 10000
    learning_rate: float = 1e-3
    epochs: int = 2000
    mode: str = "evasion"
    retrain_epochs: int = 200
    seed: int = 0
    constrained: bool = True
    debug_checks: bool = False

    def validate(self):
        if isinstance(self.budget_edges, float):
            if not (0.0 < self.budget_edges <= 1.0):
                raise ValueError("fractional edge budget must lie in (0, 1]")
        elif int(self.budget_edges) < 1:
            raise ValueError("edge budget must be >= 1")
        if self.utility_budget is not None and self.utility_budget < 0:
            raise ValueError("utility budget must be >= 0")
        if self.utility_budget_kind not in ("relative", "absolute"):
            raise ValueError("utility_budget_kind must be 'relative' or 'absolute'")
        if self.mode not in ("evasion", "poisoning"):
            raise ValueError("mode must be 'evasion' or 'poisoning'")
        if self.candidate_top_a != "all":
            if isinstance(self.candidate_top_a, float):
                if not (0.0 < self.candidate_top_a <= 1.0):
                    raise ValueError("fractional candidate_top_a must lie in (0, 1]")
            elif int(self.candidate_top_a) < 1:
                raise ValueError("candidate_top_a must be >= 1")

    def resolve_budget(self, num_edges: int) -> int:
        if isinstance(self.budget_edges, float):
            return max(1, int(self.budget_edges * num_edges))
        return int(self.budget_edges)

    def resolve_candidates(self, n: int):
        if self.candidate_top_a == "all":
            return "all"
        total_pairs = n * (n - 1) // 2
        if isinstance(self.candidate_top_a, float):
            return max(1, int(self.candidate_top_a * total_pairs))
        return int(self.candidate_top_a)

    def resolve_utility_budget(self, baseline_loss: float) -> float:
        if self.utility_budget is None:
            return np.inf
        if self.utility_budget_kind == "relative":
            return self.utility_budget * baseline_loss
        return float(self.utility_budget)


@dataclass
class ScoreRound:
    """One round of candidate scoring: loss deltas and the balanced scores."""

    candidates: list
    p: np.ndarray            # train-loss deltas
    q: np.ndarray            # objective deltas
    coefficient: float       # p.q / ||p||^2, zero when the constraint is off or ||p|| = 0
    scores: np.ndarray


@dataclass
class TraceRow:
    t: int
    u: int
    v: int
    kind: str
    delta_lf: float
    delta_l: float
    score: float
    lf: float
    l: float


@dataclass
class BenchmarkRow:
    round: int
    candidates_evaluated: int
    ranking_time: float
    score_time: float
    objective: float


@dataclass
class AttackResult:
    graph: Graph
    flips: list
    trace: list
    baseline_objective: float
    baseline_train_loss: float
    final_objective: float
    final_train_loss: float
    utility_budget_resolved: float
    budget_resolved: int
    stop_reason: str
    candidate_evaluations: int
    benchmark: list
    theta0: np.ndarray
    surrogate: SurrogateClassifier


def score_candidates(state: AttackState, candidates, constrained: bool) -> ScoreRound:
    """Exact zeroth-order loss differences and scores for every candidate flip."""
    if not candidates:
        raise ValueError("empty candidate set")
    q, p = batch_loss_deltas(state, candidates)
    if constrained:
        p_norm2 = float(p @ p)
        coeff = float(p @ q) / p_norm2 if p_norm2 > 0.0 else 0.0
        scores = q - coeff * np.abs(p)
    else:
        coeff = 0.0
        scores = q.copy()
    return ScoreRound(candidates=list(candidates), p=p, q=q,
                      coefficient=coeff, scores=scores)


def run_attack(graph: Graph, config: AttackConfig,
               surrogate: SurrogateClassifier | None = None) -> AttackResult:
    """Run the sequential attack; returns the perturbed graph plus a full trace.

    ``surrogate`` may carry a pre-trained model (used as-is); by default one is
    trained on the clean graph per the config.
    """
    config.validate()
    if surrogate is None:
        surrogate = train_surrogate(graph, config)
    state = AttackState.from_graph(graph, surrogate.theta_)
    theta0 = surrogate.theta_.copy()

    l0 = state.train_loss
    lf0 = state.objective
    eps = config.resolve_utility_budget(l0)
    # Commit guard: the post-commit cache refresh re-sums the losses, so keep a
    # 1e-9 margin to guarantee every committed state satisfies the budget.
    eps_commit = eps - 1e-9 * max(1.0, abs(l0)) if np.isfinite(eps) else eps
    budget = config.resolve_budget(graph.num_edges)
    n_cand = config.resolve_candidates(graph.n)

    trace = []
    benchmark = []
    evaluations = 0
    stop_reason = "edge budget exhausted"

    for t in range(budget):
        t_rank = time.perf_counter()
        try:
            candidates = build_candidates(state, n_cand)
        except ValueError:
            stop_reason = "no feasible candidates remain"
            break
        t_score = time.perf_counter()
        rnd = score_candidates(state, candidates, config.constrained)
        evaluations += len(candidates)
        score_time = time.perf_counter() - t_score
        ranking_time = t_score - t_rank

        order = np.lexsort((
            [v for (_, v) in rnd.candidates],
            [u for (u, _) in rnd.candidates],
            -rnd.scores,
        ))
        committed = False
        for pos in order:
            u, v = rnd.candidates[pos]
            if not config.constrained and rnd.scores[pos] < 0.0:
                # Unconstrained scoring commits only objective-improving flips.
                break
            if abs(state.train_loss + rnd.p[pos] - l0) > eps_commit:
                continue
            commit_flip(state, u, v, iteration=t)
            if config.debug_checks:
                state.assert_consistent()
            if config.mode == "poisoning":
                zf = AggregatedFeatures(z=state.z, ax=state.ax, dhat=state.dhat)
                retrained = SurrogateClassifier(
                    alpha=config.alpha, bandwidth=config.bandwidth,
                    grid_size=config.grid_size, learning_rate=config.learning_rate,
                    epochs=config.epochs, seed=config.seed,
                ).fit(graph, zf=zf, warm_start=state.theta, epochs=config.retrain_epochs)
                lf_commit, l_commit = state.objective, state.train_loss
                state.set_theta(retrained.theta_)
            else:
                lf_commit, l_commit = state.objective, state.train_loss
            trace.append(TraceRow(
                t=t, u=min(u, v), v=max(u, v), kind=state.flips[-1].kind,
                delta_lf=float(rnd.q[pos]), delta_l=float(rnd.p[pos]),
                score=float(rnd.scores[pos]), lf=lf_commit, l=l_commit))
            committed = True
            break
        benchmark.append(BenchmarkRow(
            round=t, candidates_evaluated=len(candidates),
            ranking_time=ranking_time, score_time=score_time,
            objective=trace[-1].lf if committed else state.objective))
        if not committed:
            if not config.constrained and np.max(rnd.scores) < 0.0:
                stop_reason = "no objective-improving candidate"
            else:
                stop_reason = "utility budget blocks every candidate"
            break

    return AttackResult(
        graph=state.to_graph(),
        flips=list(state.flips),
        trace=trace,
        baseline_objective=lf0,
        baseline_train_loss=l0,
        final_objective=trace[-1].lf if trace else lf0,
        final_train_loss=trace[-1].l if trace else l0,
        utility_budget_resolved=eps,
        budget_resolved=budget,
        stop_reason=stop_reason,
        candidate_evaluations=evaluations,
        benchmark=benchmark,
        theta0=theta0,
        surrogate=surrogate,
    )


def greedy_unconstrained_attack(graph: Graph, config: AttackConfig,
                                surrogate: SurrogateClassifier | None = None) -> AttackResult:
    """Ablation variant: raw objective scoring with the utility constraint removed."""
    return run_attack(graph, replace(config, constrained=False, utility_budget=None),
                      surrogate=surrogate)


def pgd_step_closed_form(grad_l, grad_lf, a_t, eta: float, eps_t: float) -> np.ndarray:
    """One projected ascent step on a vectorized adjacency under a linearized budget.

    Minimizes ||A' - (A + eta * grad_lf)||^2 subject to
    |grad_l . (A' - A)| <= eps_t.  Exists to verify the closed form against a
    numerical projection oracle; the discrete attack uses ranked flips instead.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if eps_t < 0:
        raise ValueError("eps_t must be >= 0")
    grad_l = np.asarray(grad_l, dtype=np.float64)
    grad_lf = np.asarray(grad_lf, dtype=np.float64)
    a_t = np.asarray(a_t, dtype=np.float64)
    ip = float(grad_l @ grad_lf)
    if eta * abs(ip) <= eps_t:
        return a_t + eta * grad_lf
    norm2 = float(grad_l @ grad_l)
    if norm2 == 0.0:
        raise ValueError("zero utility gradient with a binding constraint")
    e_t = np.sign(ip)
    return a_t + eta * grad_lf + ((e_t * eps_t - eta * ip) / norm2) * grad_l


class FairnessAttack(BaseEstimator):
    """Estimator wrapper: ``fit`` searches the flips, ``transform`` applies them.

    Parameters mirror AttackConfig; see its docstring for semantics.
    """

    def __init__(self, budget=0.05, utility_budget=0.05, utility_budget_kind="relative",
                 candidate_top_a=0.1, constrained=True, mode="evasion", alpha=1.0,
                 bandwidth=0.1, grid_size=10000, learning_rate=1e-3, epochs=2000,
                 retrain_epochs=200, seed=0):
        self.budget = budget
        self.utility_budget = utility_budget
        self.utility_budget_kind = utility_budget_kind
        self.candidate_top_a = candidate_top_a
        self.constrained = constrained
        self.mode = mode
        self.alpha = alpha
        self.bandwidth = bandwidth
        self.grid_size = grid_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.retrain_epochs = retrain_epochs
        self.seed = seed

    def _config(self) -> AttackConfig:
        return AttackConfig(
            budget_edges=self.budget, utility_budget=self.utility_budget,
            utility_budget_kind=self.utility_budget_kind,
            candidate_top_a=self.candidate_top_a, alpha=self.alpha,
            bandwidth=self.bandwidth, grid_size=self.grid_size,
            learning_rate=self.learning_rate, epochs=self.epochs,
            mode=self.mode, retrain_epochs=self.retrain_epochs,
            seed=self.seed, constrained=self.constrained)

    def fit(self, graph: Graph):
        self.result_ = run_attack(graph, self._config())
        self.flips_ = self.result_.flips
        return self

    def transform(self, graph: Graph) -> Graph:
        out = graph
        for flip in self.flips_:
            out = flip_edge(out, flip.u, flip.v)
        return out

    def fit_transform(self, graph: Graph) -> Graph:
        return self.fit(graph).result_.graph
