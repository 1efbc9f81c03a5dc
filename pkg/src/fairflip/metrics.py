"""Attacker objective and evaluation metrics.

Metrics that condition on an empty group return None (an explicit undefined
result) instead of a silent zero; MetricReport serializes those as JSON null.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .surrogate import kde_density, tv_grid


@dataclass
class MetricReport:
    acc: float | None
    auc: float | None
    delta_dp: float | None
    delta_eo: float | None
    node_set: str

    def __post_init__(self):
        for name in ("acc", "auc", "delta_dp", "delta_eo"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and -1e-9 <= v <= 1.0 + 1e-9):
                raise ValueError("%s = %r outside [0, 1]" % (name, v))

    def to_dict(self) -> dict:
        return asdict(self)


def group_coefficients(sensitive, test_index) -> np.ndarray:
    """Signed weights +-1/|group ∩ test| used by the attacker objective."""
    sensitive = np.asarray(sensitive)
    n0 = int(np.sum(sensitive[test_index] == 0))
    n1 = int(np.sum(sensitive[test_index] == 1))
    if n0 == 0 or n1 == 0:
        raise ValueError("attacker objective needs both groups in the test set")
    k = np.where(sensitive[test_index] == 0, 1.0 / n0, -1.0 / n1)
    return k


def attacker_objective(logit_values, sensitive, test_index) -> float:
    """Demographic-parity gap of hard predictions over the test set.

    |sum_i k_i * 1[logit_i >= 0]| with k_i = +1/|V0 ∩ test| on group 0 and
    -1/|V1 ∩ test| on group 1; boundary logits count as positive.
    """
    test_index = np.asarray(test_index)
    k = group_coefficients(sensitive, test_index)
    pos = np.asarray(logit_values)[test_index] >= 0.0
    return float(abs(np.sum(k * pos)))


def accuracy(hard_preds, labels, node_set) -> float | None:
    node_set = np.asarray(node_set)
    if node_set.size == 0:
        return None
    hp = np.asarray(hard_preds)[node_set]
    y = np.asarray(labels)[node_set]
    return float(np.mean(hp == y))


def delta_dp(hard_preds, sensitive, node_set) -> float | None:
    """Absolute difference of group-conditional positive rates; None if undefined."""
    node_set = np.asarray(node_set)
    hp = np.asarray(hard_preds)[node_set]
    s = np.asarray(sensitive)[node_set]
    rates = []
    for g in (0, 1):
        mask = s == g
        if not np.any(mask):
            return None
        rates.append(float(np.mean(hp[mask])))
    return abs(rates[0] - rates[1])


def delta_eo(hard_preds, labels, sensitive, node_set) -> float | None:
    """Absolute difference of group-conditional true positive rates; None if undefined."""
    node_set = np.asarray(node_set)
    hp = np.asarray(hard_preds)[node_set]
    y = np.asarray(labels)[node_set]
    s = np.asarray(sensitive)[node_set]
    rates = []
    for g in (0, 1):
        mask = (s == g) & (y == 1)
        if not np.any(mask):
            return None
        rates.append(float(np.mean(hp[mask])))
    return abs(rates[0] - rates[1])


def auc(soft_preds, labels, node_set) -> float | None:
    """Mann-Whitney AUC with midranks for ties; None when only one class present."""
    node_set = np.asarray(node_set)
    p = np.asarray(soft_preds, dtype=np.float64)[node_set]
    y = np.asarray(labels)[node_set]
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(p, kind="mergesort")
    ranks = np.empty(p.size, dtype=np.float64)
    sorted_p = p[order]
    i = 0
    while i < p.size:
        j = i
        while j + 1 < p.size and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[y == 1]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def wasserstein1_empirical(preds_g0, preds_g1) -> float:
    """L1 distance between the empirical quantile functions (exact for step CDFs)."""
    a = np.sort(np.asarray(preds_g0, dtype=np.float64))
    b = np.sort(np.asarray(preds_g1, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1_empirical needs non-empty samples")
    values = np.concatenate([a, b])
    values.sort(kind="mergesort")
    deltas = np.diff(values)
    cdf_a = np.searchsorted(a, values[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, values[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def mutual_information_kde(preds, sensitive, h: float, m: int) -> float:
    """Grid-integrated mutual information between smoothed predictions and group.

    Uses KDE conditionals with the mixture marginal; integrand terms whose
    joint density falls below 1e-12 contribute zero.
    """
    sensitive = np.asarray(sensitive)
    g0 = np.flatnonzero(sensitive == 0)
    g1 = np.flatnonzero(sensitive == 1)
    if g0.size == 0 or g1.size == 0:
        raise ValueError("mutual_information_kde needs both groups non-empty")
    grid = tv_grid(m)
    pi0 = g0.size / sensitive.size
    pi1 = g1.size / sensitive.size
    d0 = kde_density(preds, g0, grid, h)
    d1 = kde_density(preds, g1, grid, h)
    mix = pi0 * d0 + pi1 * d1
    total = 0.0
    for pi, dens in ((pi0, d0), (pi1, d1)):
        joint = pi * dens
        ok = joint >= 1e-12
        total += float(np.sum(joint[ok] * np.log(dens[ok] / mix[ok])))
    return total / m
