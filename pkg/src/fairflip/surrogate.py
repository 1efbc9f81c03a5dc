"""Linearized two-hop surrogate classifier and its density-matching training loss.

The surrogate collapses a two-layer graph convolution into a single weight
vector: logits are ``Z @ theta`` where ``Z`` is the doubly degree-normalized
two-hop feature aggregation.  Training minimizes cross-entropy on the train
split plus ``alpha`` times the grid total variation between the two groups'
kernel-smoothed prediction densities, so the trained weights mimic classifiers
regularized toward group parity regardless of which parity loss they used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import Graph

SQRT_2PI = np.sqrt(2.0 * np.pi)
PROB_CLIP = 1e-12


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class AggregatedFeatures:
    """Cached aggregation state: Z rows, (A+I)X rows, and the A+I row sums."""

    z: np.ndarray      # (n, d_x)
    ax: np.ndarray     # (n, d_x), rows of (A + I) X
    dhat: np.ndarray   # (n,), degree + 1, always >= 1

    @property
    def n(self) -> int:
        return self.z.shape[0]


def _ahat(graph: Graph) -> sp.csr_matrix:
    rows, cols = [], []
    for (u, v) in graph.edges:
        rows += [u, v]
        cols += [v, u]
    a = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(graph.n, graph.n)
    )
    return a + sp.identity(graph.n, format="csr")


def aggregate(graph: Graph) -> AggregatedFeatures:
    """Compute the two-hop normalized aggregation Z = D^-1 (A+I) D^-1 (A+I) X."""
    ahat = _ahat(graph)
    dhat = np.asarray(ahat.sum(axis=1), dtype=np.float64).ravel()
    ax = ahat @ graph.x
    z = (ahat @ (ax / dhat[:, None])) / dhat[:, None]
    return AggregatedFeatures(z=z, ax=ax, dhat=dhat)


def logits(zf: AggregatedFeatures, theta: np.ndarray) -> np.ndarray:
    return zf.z @ theta


def sigmoid(t):
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def soft_predict(zf: AggregatedFeatures, theta: np.ndarray) -> np.ndarray:
    """Per-node soft prediction sigmoid(Z @ theta) in (0, 1)."""
    return sigmoid(zf.z @ theta)


def hard_predict(logit_values: np.ndarray) -> np.ndarray:
    """Boundary logit 0 counts as the positive class."""
    return (np.asarray(logit_values) >= 0.0).astype(np.int64)


def gaussian_kernel(t):
    return np.exp(-0.5 * np.square(t)) / SQRT_2PI


def kde_density(predictions, group_members, z, h: float):
    """Gaussian kernel density of the group's predictions, evaluated at z.

    Returns (1 / (h * |group|)) * sum_j K((z - p_j) / h); z may be a scalar or
    a grid array.
    """
    if h <= 0:
        raise ValueError("bandwidth must be positive, got %r" % h)
    group_members = np.asarray(group_members)
    if group_members.size == 0:
        raise ValueError("empty group in kde_density")
    p = np.asarray(predictions, dtype=np.float64)[group_members]
    t = (np.atleast_1d(np.asarray(z, dtype=np.float64))[:, None] - p[None, :]) / h
    dens = gaussian_kernel(t).sum(axis=1) / (h * p.size)
    return dens if np.ndim(z) else float(dens[0])


def tv_grid(m: int) -> np.ndarray:
    """Integration grid j/m for j = 1..m."""
    if m < 2:
        raise ValueError("grid size must be >= 2, got %d" % m)
    return np.arange(1, m + 1, dtype=np.float64) / m


def tv_loss(predictions, sensitive, h: float, m: int) -> float:
    """Grid total variation between the two groups' smoothed prediction densities."""
    sensitive = np.asarray(sensitive)
    grid = tv_grid(m)
    g0 = np.flatnonzero(sensitive == 0)
    g1 = np.flatnonzero(sensitive == 1)
    if g0.size == 0 or g1.size == 0:
        raise ValueError("tv_loss needs both groups non-empty")
    p0 = kde_density(predictions, g0, grid, h)
    p1 = kde_density(predictions, g1, grid, h)
    return float(np.mean(np.abs(p0 - p1)))


def ce_loss(predictions, labels, node_set) -> float:
    """Mean binary cross-entropy over ``node_set``, probabilities clamped."""
    node_set = np.asarray(node_set)
    if node_set.size == 0:
        raise ValueError("ce_loss needs a non-empty node set")
    p = np.clip(np.asarray(predictions, dtype=np.float64)[node_set], PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(labels, dtype=np.float64)[node_set]
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _surrogate_loss_and_grad(theta, zf: AggregatedFeatures, labels, train_index,
                             sensitive, alpha, h, m):
    """Full-batch loss CE(train) + alpha * TV(all nodes) and its analytic gradient.

    The TV term is subdifferentiated with sign(0) := 0; the gradient flows
    through the Gaussian kernel and the logistic squashing by the chain rule.
    """
    z = zf.z
    logit = z @ theta
    p = sigmoid(logit)

    p_tr = np.clip(p[train_index], PROB_CLIP, 1.0 - PROB_CLIP)
    y_tr = labels[train_index].astype(np.float64)
    ce = float(-np.mean(y_tr * np.log(p_tr) + (1.0 - y_tr) * np.log(1.0 - p_tr)))
    grad = z[train_index].T @ (p[train_index] - y_tr) / train_index.size

    if alpha != 0.0:
        grid = tv_grid(m)
        g0 = np.flatnonzero(sensitive == 0)
        g1 = np.flatnonzero(sensitive == 1)
        t0 = (grid[:, None] - p[g0][None, :]) / h
        t1 = (grid[:, None] - p[g1][None, :]) / h
        k0 = gaussian_kernel(t0)
        k1 = gaussian_kernel(t1)
        d0 = k0.sum(axis=1) / (h * g0.size)
        d1 = k1.sum(axis=1) / (h * g1.size)
        diff = d0 - d1
        tv = float(np.mean(np.abs(diff)))
        sign = np.sign(diff)
        # d density / d p_j = t * K(t) / (h^2 * n_g); group 1 enters with minus sign
        acc = np.zeros(p.size)
        acc[g0] = (sign @ (t0 * k0)) / (m * h * h * g0.size)
        acc[g1] = -(sign @ (t1 * k1)) / (m * h * h * g1.size)
        grad = grad + alpha * (z.T @ (acc * p * (1.0 - p)))
    else:
        tv = 0.0

    return ce + alpha * tv, grad, ce, tv


def _adam_minimize(theta0, loss_grad, epochs, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    theta = theta0.copy()
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    loss = None
    for t in range(1, epochs + 1):
        loss, grad = loss_grad(theta)
        if not np.isfinite(loss):
            raise TrainingDivergedError("non-finite loss %r at epoch %d" % (loss, t))
        m1 = beta1 * m1 + (1.0 - beta1) * grad
        m2 = beta2 * m2 + (1.0 - beta2) * np.square(grad)
        m1_hat = m1 / (1.0 - beta1 ** t)
        m2_hat = m2 / (1.0 - beta2 ** t)
        theta -= lr * m1_hat / (np.sqrt(m2_hat) + eps)
    return theta, loss


class SurrogateClassifier(BaseEstimator):
    """Linearized two-hop graph classifier trained with a parity-penalized loss.

    Parameters
    ----------
    alpha : weight of the group density total-variation penalty.
    bandwidth : Gaussian kernel bandwidth for the density estimates.
    grid_size : number of integration intervals on [0, 1].
    learning_rate, epochs : full-batch Adam schedule.
    seed : controls the weight initialization.
    """

    def __init__(self, alpha=1.0, bandwidth=0.1, grid_size=10000,
                 learning_rate=1e-3, epochs=2000, seed=0):
        self.alpha = alpha
        self.bandwidth = bandwidth
        self.grid_size = grid_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed

    def fit(self, graph: Graph, zf: AggregatedFeatures | None = None,
            warm_start: np.ndarray | None = None, epochs: int | None = None):
        """Train theta on the given graph (or on caller-supplied aggregation state)."""
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if zf is None:
            zf = aggregate(graph)
        train_index = graph.train_index
        if train_index.size == 0:
            raise ValueError("train split is empty")
        labels = graph.labels
        sensitive = graph.sensitive
        if warm_start is not None:
            theta0 = np.asarray(warm_start, dtype=np.float64).copy()
        else:
            rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0x51]))
            theta0 = rng.normal(scale=0.01, size=zf.z.shape[1])

        def loss_grad(theta):
            loss, grad, _, _ = _surrogate_loss_and_grad(
                theta, zf, labels, train_index, sensitive,
                self.alpha, self.bandwidth, self.grid_size)
            return loss, grad

        n_epochs = self.epochs if epochs is None else epochs
        self.theta_, self.loss_ = _adam_minimize(theta0, loss_grad, n_epochs, self.learning_rate)
        self.n_features_in_ = zf.z.shape[1]
        return self

    def decision_function(self, graph: Graph, zf: AggregatedFeatures | None = None):
        check_is_fitted(self, "theta_")
        if zf is None:
            zf = aggregate(graph)
        return zf.z @ self.theta_

    def predict_proba(self, graph: Graph, zf: AggregatedFeatures | None = None):
        return sigmoid(self.decision_function(graph, zf))

    def predict(self, graph: Graph, zf: AggregatedFeatures | None = None):
        return hard_predict(self.decision_function(graph, zf))

    def to_checkpoint(self) -> dict:
        check_is_fitted(self, "theta_")
        return {
            "theta": [float(v) for v in self.theta_],
            "alpha": self.alpha,
            "bandwidth": self.bandwidth,
            "grid_size": self.grid_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "SurrogateClassifier":
        model = cls(alpha=payload["alpha"], bandwidth=payload["bandwidth"],
                    grid_size=payload["grid_size"], epochs=payload["epochs"],
                    seed=payload["seed"])
        model.theta_ = np.asarray(payload["theta"], dtype=np.float64)
        model.n_features_in_ = model.theta_.size
        return model


def train_surrogate(graph: Graph, config, warm_start=None,
                    zf: AggregatedFeatures | None = None,
                    epochs: int | None = None) -> SurrogateClassifier:
    """Functional entry point used by the attack engine; see SurrogateClassifier."""
    model = SurrogateClassifier(
        alpha=config.alpha, bandwidth=config.bandwidth, grid_size=config.grid_size,
        learning_rate=config.learning_rate, epochs=config.epochs, seed=config.seed)
    return model.fit(graph, zf=zf, warm_start=warm_start, epochs=epochs)
