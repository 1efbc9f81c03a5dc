"""Gray-box victim models and baseline attackers.

The victim is deliberately a different architecture from the attack surrogate
(one ReLU hidden layer instead of a collapsed linear stack) so end-to-end
experiments honor the gray-box setting.  Training is full-batch Adam with
hand-derived gradients.
"""

from __future__ import annotations

import hashlib

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import Graph, check_feasible, classify_edge_group, flip_edge, EdgeFlip
from .metrics import MetricReport, accuracy, auc, delta_dp, delta_eo
from .surrogate import PROB_CLIP, TrainingDivergedError, _ahat, sigmoid


def propagation_matrix(graph: Graph) -> sp.csr_matrix:
    """One-hop operator with (dhat_i * dhat_j)^-1 weights on self-inclusive neighbors."""
    ahat = _ahat(graph)
    dhat = np.asarray(ahat.sum(axis=1), dtype=np.float64).ravel()
    dinv = sp.diags(1.0 / dhat)
    return dinv @ ahat @ dinv


class GCNClassifier(BaseEstimator):
    """Two-layer graph convolution victim with optional parity regularization.

    kind "vanilla" trains on cross-entropy alone; "regularized" adds
    ``reg_weight`` times the soft demographic-parity gap (absolute difference
    of group-mean soft predictions over all nodes).
    """

    def __init__(self, kind="vanilla", hidden_dim=16, reg_weight=1.0,
                 learning_rate=1e-3, epochs=1000, seed=0):
        self.kind = kind
        self.hidden_dim = hidden_dim
        self.reg_weight = reg_weight
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed

    def _loss_and_grads(self, w1, w2, px, prop, y, train_index, sensitive, reg):
        u = px @ w1
        h = np.maximum(u, 0.0)
        ph = prop @ h
        logit = ph @ w2
        p = sigmoid(logit)

        n_tr = train_index.size
        p_tr = np.clip(p[train_index], PROB_CLIP, 1.0 - PROB_CLIP)
        loss = float(-np.mean(y[train_index] * np.log(p_tr)
                              + (1.0 - y[train_index]) * np.log(1.0 - p_tr)))
        g_logit = np.zeros_like(p)
        g_logit[train_index] = (p[train_index] - y[train_index]) / n_tr

        if reg > 0.0:
            g0 = sensitive == 0
            g1 = sensitive == 1
            m0 = float(np.mean(p[g0]))
            m1 = float(np.mean(p[g1]))
            loss += reg * abs(m0 - m1)
            s = np.sign(m0 - m1)
            g_soft = np.where(g0, s / g0.sum(), -s / g1.sum())
            g_logit = g_logit + reg * g_soft * p * (1.0 - p)

        g_ph = prop @ g_logit             # prop is symmetric
        grad_w2 = ph.T @ g_logit
        g_h = np.outer(g_ph, w2)
        g_u = g_h * (u > 0.0)
        grad_w1 = px.T @ g_u
        return loss, grad_w1, grad_w2

    def fit(self, graph: Graph):
        if self.kind not in ("vanilla", "regularized"):
            raise ValueError("kind must be 'vanilla' or 'regularized'")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        train_index = graph.train_index
        if train_index.size == 0:
            raise ValueError("train split is empty")
        reg = self.reg_weight if self.kind == "regularized" else 0.0

        prop = propagation_matrix(graph)
        px = prop @ graph.x
        y = graph.labels.astype(np.float64)
        d_x = graph.x.shape[1]

        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0x6C]))
        s1 = 1.0 / np.sqrt(d_x)
        s2 = 1.0 / np.sqrt(self.hidden_dim)
        w1 = rng.uniform(-s1, s1, size=(d_x, self.hidden_dim))
        w2 = rng.uniform(-s2, s2, size=self.hidden_dim)

        m1_w1 = np.zeros_like(w1)
        m2_w1 = np.zeros_like(w1)
        m1_w2 = np.zeros_like(w2)
        m2_w2 = np.zeros_like(w2)
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, self.epochs + 1):
            loss, g1, g2 = self._loss_and_grads(
                w1, w2, px, prop, y, train_index, graph.sensitive, reg)
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite victim loss at epoch %d" % t)
            m1_w1 = b1 * m1_w1 + (1 - b1) * g1
            m2_w1 = b2 * m2_w1 + (1 - b2) * np.square(g1)
            m1_w2 = b1 * m1_w2 + (1 - b1) * g2
            m2_w2 = b2 * m2_w2 + (1 - b2) * np.square(g2)
            w1 -= self.learning_rate * (m1_w1 / (1 - b1 ** t)) / (np.sqrt(m2_w1 / (1 - b2 ** t)) + eps)
            w2 -= self.learning_rate * (m1_w2 / (1 - b1 ** t)) / (np.sqrt(m2_w2 / (1 - b2 ** t)) + eps)

        self.w1_ = w1
        self.w2_ = w2
        self.loss_ = loss
        self.n_features_in_ = d_x
        return self

    def decision_function(self, graph: Graph) -> np.ndarray:
        check_is_fitted(self, "w1_")
        if graph.x.shape[1] != self.w1_.shape[0]:
            raise ValueError("attribute dimension %d does not match fitted %d"
                             % (graph.x.shape[1], self.w1_.shape[0]))
        prop = propagation_matrix(graph)
        h = np.maximum(prop @ graph.x @ self.w1_, 0.0)
        return (prop @ h) @ self.w2_

    def predict_proba(self, graph: Graph) -> np.ndarray:
        return sigmoid(self.decision_function(graph))

    def predict(self, graph: Graph) -> np.ndarray:
        return (self.decision_function(graph) >= 0.0).astype(np.int64)

    def weights_hash(self) -> str:
        check_is_fitted(self, "w1_")
        digest = hashlib.sha256()
        digest.update(self.w1_.tobytes())
        digest.update(self.w2_.tobytes())
        return digest.hexdigest()

    def to_checkpoint(self) -> dict:
        check_is_fitted(self, "w1_")
        return {
            "kind": self.kind,
            "hidden_dim": self.hidden_dim,
            "reg_weight": self.reg_weight,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "w1": [[float(v) for v in row] for row in self.w1_],
            "w2": [float(v) for v in self.w2_],
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "GCNClassifier":
        model = cls(kind=payload["kind"], hidden_dim=payload["hidden_dim"],
                    reg_weight=payload["reg_weight"],
                    learning_rate=payload["learning_rate"],
                    epochs=payload["epochs"], seed=payload["seed"])
        model.w1_ = np.asarray(payload["w1"], dtype=np.float64)
        model.w2_ = np.asarray(payload["w2"], dtype=np.float64)
        model.n_features_in_ = model.w1_.shape[0]
        return model


def train_victim(graph: Graph, kind: str, hyper: dict | None = None) -> GCNClassifier:
    return GCNClassifier(kind=kind, **(hyper or {})).fit(graph)


def evaluate_victim(model: GCNClassifier, graph: Graph, node_set: str = "test") -> MetricReport:
    logit = model.decision_function(graph)
    soft = sigmoid(logit)
    hard = (logit >= 0.0).astype(np.int64)
    idx = graph.split_index(node_set)
    return MetricReport(
        acc=accuracy(hard, graph.labels, idx),
        auc=auc(soft, graph.labels, idx),
        delta_dp=delta_dp(hard, graph.sensitive, idx),
        delta_eo=delta_eo(hard, graph.labels, graph.sensitive, idx),
        node_set=node_set,
    )


def random_attack(graph: Graph, budget: int, seed: int) -> Graph:
    """Flip ``budget`` distinct feasible edges uniformly at random (sequentially)."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A]))
    out = graph
    done = set()
    n = graph.n
    for _ in range(budget):
        committed = False
        for _attempt in range(20 * n * n):
            u, v = rng.integers(0, n, size=2)
            if u == v:
                continue
            pair = (min(int(u), int(v)), max(int(u), int(v)))
            if pair in done:
                continue
            kind = "remove" if out.has_edge(*pair) else "add"
            flip = EdgeFlip(u=pair[0], v=pair[1], kind=kind)
            if not check_feasible(out, flip):
                continue
            out = flip_edge(out, *pair)
            done.add(pair)
            committed = True
            break
        if not committed:
            raise ValueError("fewer than %d feasible flips exist" % budget)
    return out


def cross_group_injection_attack(graph: Graph, budget: int, seed: int) -> Graph:
    """Add ``budget`` random edges joining different labels and different groups.

    Never removes edges; every injected edge classifies as DD.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7B]))
    candidates = []
    for u in range(graph.n):
        if not graph.labeled[u]:
            continue
        for v in range(u + 1, graph.n):
            if not graph.labeled[v]:
                continue
            if graph.has_edge(u, v):
                continue
            if (graph.labels[u] != graph.labels[v]
                    and graph.sensitive[u] != graph.sensitive[v]):
                candidates.append((u, v))
    if len(candidates) < budget:
        raise ValueError("only %d cross-group non-edges available, need %d"
                         % (len(candidates), budget))
    chosen = rng.choice(len(candidates), size=budget, replace=False)
    out = graph
    for idx in chosen:
        u, v = candidates[int(idx)]
        assert classify_edge_group(graph, u, v) == "DD"
        out = flip_edge(out, u, v)
    return out
