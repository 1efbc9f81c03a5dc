"""Numerical verification harness for the method's analytical claims.

Three independent checks:

* a randomized sweep confirming that the grid total variation between the
  groups' smoothed prediction densities upper-bounds the parity gap, the
  Wasserstein-1 distance, and (under the stated density conditions) the
  mutual information computed from the same densities;
* a projection-oracle comparison for the closed-form constrained ascent step;
* a counterexample search showing that picking the discrete edge flip by the
  largest continuous-gradient entry can decrease a smooth objective that the
  exhaustive difference-based flip increases.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import minimize

from .attack import pgd_step_closed_form
from .graph import generate_sbm
from .metrics import (delta_dp, group_coefficients, mutual_information_kde,
                      wasserstein1_empirical)
from .surrogate import kde_density, sigmoid, tv_grid, tv_loss

BOUND_TOL = 1e-3


def _random_prediction_config(rng: np.random.Generator):
    """Draw a group assignment and predictions from a mixed family of shapes."""
    n = int(rng.integers(40, 200))
    frac0 = rng.uniform(0.25, 0.75)
    sensitive = (rng.random(n) >= frac0).astype(np.int64)
    # guarantee both groups are populated
    sensitive[0], sensitive[1] = 0, 1
    family = int(rng.integers(0, 4))
    preds = np.empty(n)
    for g in (0, 1):
        idx = np.flatnonzero(sensitive == g)
        if family == 0:          # common uniform
            vals = rng.uniform(0.05, 0.95, size=idx.size)
        elif family == 1:        # shifted beta bumps
            a, b = rng.uniform(2, 8, size=2)
            vals = rng.beta(a, b, size=idx.size)
            vals = 0.05 + 0.9 * (vals if g == 0 else 1.0 - vals)
        elif family == 2:        # well-separated groups
            center = 0.25 if g == 0 else 0.75
            vals = np.clip(center + rng.normal(0, 0.08, size=idx.size), 0.01, 0.99)
        else:                    # logits through a sigmoid
            vals = sigmoid(rng.normal(rng.normal(0, 0.5), 1.2, size=idx.size))
        preds[idx] = vals
    return preds, sensitive


@dataclass
class BoundTrialResult:
    tv: float
    dp_smoothed: float
    w1_smoothed: float
    mi: float
    density_condition: bool
    integral_condition: bool
    dp_raw: float
    w1_raw: float
    dp_ok: bool
    w1_ok: bool
    mi_ok: bool | None      # None where the density condition fails
    mi_sqrt_ok: bool | None


def smoothed_bound_trial(preds, sensitive, h: float, m: int) -> BoundTrialResult:
    """Evaluate every bounded quantity from the same smoothed grid densities."""
    grid = tv_grid(m)
    g0 = np.flatnonzero(np.asarray(sensitive) == 0)
    g1 = np.flatnonzero(np.asarray(sensitive) == 1)
    d0 = kde_density(preds, g0, grid, h)
    d1 = kde_density(preds, g1, grid, h)
    pi0 = g0.size / len(sensitive)
    pi1 = 1.0 - pi0
    mix = pi0 * d0 + pi1 * d1

    tv = tv_loss(preds, sensitive, h, m)
    dp_sm = abs(float(np.sum((d0 - d1)[grid >= 0.5]))) / m
    f0 = np.cumsum(d0) / m
    f1 = np.cumsum(d1) / m
    w1_sm = float(np.mean(np.abs(f0 - f1)))
    mi = mutual_information_kde(preds, sensitive, h, m)

    density_condition = bool(np.min(mix) >= pi0 * pi1)
    ratio = np.where(mix > 0, (pi0 * pi1) / np.maximum(mix, 1e-300), np.inf)
    integral_condition = bool(np.mean(np.square(ratio)) <= 1.0)

    hard = (np.asarray(preds) >= 0.5).astype(np.int64)
    dp_raw = delta_dp(hard, sensitive, np.arange(len(sensitive)))
    w1_raw = wasserstein1_empirical(np.asarray(preds)[g0], np.asarray(preds)[g1])

    return BoundTrialResult(
        tv=tv, dp_smoothed=dp_sm, w1_smoothed=w1_sm, mi=mi,
        density_condition=density_condition,
        integral_condition=integral_condition,
        dp_raw=dp_raw, w1_raw=w1_raw,
        dp_ok=dp_sm <= tv + BOUND_TOL,
        w1_ok=w1_sm <= tv + BOUND_TOL,
        mi_ok=(mi <= tv + BOUND_TOL) if density_condition else None,
        mi_sqrt_ok=(mi <= np.sqrt(tv) + BOUND_TOL) if integral_condition else None,
    )


def run_bound_sweep(trials: int = 100, seed: int = 0, h: float = 0.1,
                    m: int = 2000) -> dict:
    """Randomized sweep of the upper-bound inequalities; returns a summary dict."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x11]))
    rows = []
    for _ in range(trials):
        preds, sensitive = _random_prediction_config(rng)
        rows.append(smoothed_bound_trial(preds, sensitive, h, m))

    def margin(vals):
        return float(max(vals)) if vals else float("-inf")

    mi_rows = [r for r in rows if r.mi_ok is not None]
    mi_sqrt_rows = [r for r in rows if r.mi_sqrt_ok is not None]
    summary = {
        "trials": trials,
        "dp_pass": sum(r.dp_ok for r in rows),
        "w1_pass": sum(r.w1_ok for r in rows),
        "mi_applicable": len(mi_rows),
        "mi_pass": sum(r.mi_ok for r in mi_rows),
        "mi_sqrt_applicable": len(mi_sqrt_rows),
        "mi_sqrt_pass": sum(r.mi_sqrt_ok for r in mi_sqrt_rows),
        "worst_dp_margin": margin([r.dp_smoothed - r.tv for r in rows]),
        "worst_w1_margin": margin([r.w1_smoothed - r.tv for r in rows]),
        "worst_mi_margin": margin([r.mi - r.tv for r in mi_rows]),
        "worst_mi_sqrt_margin": margin([r.mi - np.sqrt(r.tv) for r in mi_sqrt_rows]),
        "rows": [asdict(r) for r in rows],
    }
    summary["all_pass"] = (
        summary["dp_pass"] == trials
        and summary["w1_pass"] == trials
        and summary["mi_pass"] == summary["mi_applicable"]
        and summary["mi_sqrt_pass"] == summary["mi_sqrt_applicable"]
    )
    return summary


def projection_oracle(grad_l, grad_lf, a_t, eta: float, eps_t: float) -> np.ndarray:
    """Numerical minimizer of ||A' - (A + eta grad_lf)||^2 under the linear band."""
    grad_l = np.asarray(grad_l, dtype=np.float64)
    a_t = np.asarray(a_t, dtype=np.float64)
    target = a_t + eta * np.asarray(grad_lf, dtype=np.float64)

    def objective(x):
        diff = x - target
        return float(diff @ diff), 2.0 * diff

    constraints = [
        {"type": "ineq",
         "fun": lambda x: eps_t - grad_l @ (x - a_t),
         "jac": lambda x: -grad_l},
        {"type": "ineq",
         "fun": lambda x: eps_t + grad_l @ (x - a_t),
         "jac": lambda x: grad_l},
    ]
    res = minimize(objective, x0=a_t, jac=True, method="SLSQP",
                   constraints=constraints,
                   options={"maxiter": 600, "ftol": 1e-16})
    if not res.success and res.status != 8:   # 8: iteration limit with tiny step
        raise RuntimeError("projection oracle failed: %s" % res.message)
    return res.x


def run_projection_check(trials: int = 50, seed: int = 0, dim: int = 10) -> dict:
    """Compare the closed-form constrained step with the numerical oracle."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x12]))
    worst_step = 0.0
    worst_constraint = 0.0
    binding = 0
    for _ in range(trials):
        grad_l = rng.normal(size=dim)
        grad_lf = rng.normal(size=dim)
        a_t = rng.uniform(0, 1, size=dim)
        eta = float(rng.uniform(0.05, 0.5))
        ip = abs(grad_l @ grad_lf)
        # exercise both branches: half the draws force a binding constraint
        eps_t = float(rng.uniform(0.0, 2.0 * eta * ip))
        closed = pgd_step_closed_form(grad_l, grad_lf, a_t, eta, eps_t)
        numeric = projection_oracle(grad_l, grad_lf, a_t, eta, eps_t)
        worst_step = max(worst_step, float(np.max(np.abs(closed - numeric))))
        violation = abs(grad_l @ (closed - a_t)) - eps_t
        worst_constraint = max(worst_constraint, violation)
        if eta * ip > eps_t:
            binding += 1
    return {
        "trials": trials,
        "binding_cases": binding,
        "worst_step_error": worst_step,
        "worst_constraint_violation": worst_constraint,
        "all_pass": worst_step <= 1e-6 and worst_constraint <= 1e-9,
    }


def _dense_aggregation(adj: np.ndarray, x: np.ndarray) -> np.ndarray:
    ahat = adj + np.eye(adj.shape[0])
    dhat = ahat.sum(axis=1)
    return (ahat @ ((ahat @ x) / dhat[:, None])) / dhat[:, None]


def _soft_objective(adj, x, theta, k_signed) -> float:
    z = _dense_aggregation(adj, x)
    return abs(float(k_signed @ sigmoid(z @ theta)))


def run_gradient_flip_search(trials: int = 400, seed: int = 0, n: int = 10,
                             d_x: int = 4) -> dict:
    """Search for instances where the gradient-ranked discrete flip backfires.

    For random small graphs and weights, computes the continuous-domain
    gradient of the soft parity objective, flips the edge with the largest
    sign-adjusted gradient entry, and compares against the best exhaustive
    single-flip improvement.  A witness is an instance where the gradient
    pick strictly decreases the objective while the exhaustive pick strictly
    increases it; finding any demonstrates (not proves) the limitation.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x13]))
    witnesses = []
    fd_step = 1e-6
    for trial in range(trials):
        # Sparse graphs and confident weights make a single flip a large move
        # relative to the local linearization, which is where the gradient
        # ranking goes wrong.
        graph = generate_sbm(n=n, d_x=d_x, homophily=float(rng.uniform(0.5, 0.9)),
                             label_noise=0.1, seed=int(rng.integers(0, 2 ** 31)),
                             avg_degree=2.5)
        theta = rng.normal(size=d_x) * 2.0
        adj = np.zeros((n, n))
        for (u, v) in graph.edges:
            adj[u, v] = adj[v, u] = 1.0
        k_signed = np.zeros(n)
        test = graph.test_index
        k_signed[test] = group_coefficients(graph.sensitive, test)

        base = _soft_objective(adj, graph.x, theta, k_signed)
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        grad = {}
        for (u, v) in pairs:
            plus = adj.copy()
            plus[u, v] += fd_step
            plus[v, u] += fd_step
            minus = adj.copy()
            minus[u, v] -= fd_step
            minus[v, u] -= fd_step
            grad[(u, v)] = (_soft_objective(plus, graph.x, theta, k_signed)
                            - _soft_objective(minus, graph.x, theta, k_signed)) / (2 * fd_step)

        # sign-adjusted: removing an existing edge realizes the negative direction
        def flip_gain_estimate(pair):
            direction = 1.0 - 2.0 * adj[pair]
            return grad[pair] * direction

        grad_pick = max(pairs, key=lambda pr: (flip_gain_estimate(pr), -pr[0], -pr[1]))

        def exact_delta(pair):
            flipped = adj.copy()
            u, v = pair
            flipped[u, v] = flipped[v, u] = 1.0 - flipped[u, v]
            return _soft_objective(flipped, graph.x, theta, k_signed) - base

        grad_delta = exact_delta(grad_pick)
        best_pair = max(pairs, key=lambda pr: (exact_delta(pr), -pr[0], -pr[1]))
        best_delta = exact_delta(best_pair)
        if grad_delta < -1e-12 and best_delta > 1e-12:
            witnesses.append({
                "trial": trial,
                "gradient_pick": list(grad_pick),
                "gradient_pick_delta": grad_delta,
                "exhaustive_pick": list(best_pair),
                "exhaustive_pick_delta": best_delta,
            })
    return {
        "trials": trials,
        "witnesses_found": len(witnesses),
        "first_witness": witnesses[0] if witnesses else None,
        "all_pass": len(witnesses) >= 1,
    }
