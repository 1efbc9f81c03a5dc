"""Incremental maintenance of the aggregation caches under single edge flips.

Flipping (u, v) only changes Z rows in the joint neighborhood of u and v
(self-inclusive).  The endpoint rows get a closed-form update built from the
cached (A+I)X rows and degree counts; the remaining neighborhood rows get a
rank-one-style correction; every other row is untouched.  The same closed
forms projected onto theta give candidate logits without touching any d_x-wide
row, which is what the scoring loop uses.  The incremental path is exact (up
to float rounding), not an approximation; only candidate pruning by the
importance score is heuristic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numba
import numpy as np

from .graph import Graph, EdgeFlip, make_graph
from .metrics import group_coefficients
from .surrogate import PROB_CLIP, aggregate, sigmoid


class CacheInconsistencyError(RuntimeError):
    """Incremental caches no longer match the adjacency they claim to describe."""


@dataclass
class FlipDelta:
    """Replacement Z rows for the rows a flip touches; rows elsewhere are unchanged."""

    touched_rows: np.ndarray   # node ids, endpoints first
    new_rows: np.ndarray       # (len(touched_rows), d_x)
    kind: str                  # "add" | "remove"


def _ce_terms(logit_values, y):
    """Per-node cross-entropy terms with the standard probability clamp."""
    p = np.clip(sigmoid(np.asarray(logit_values, dtype=np.float64)),
                PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


@dataclass
class AttackState:
    """Mutable per-iteration attack state: adjacency, caches, and flip history.

    Single-writer: only ``commit_flip`` and ``set_theta`` mutate it.  All
    scoring reads are side-effect free.
    """

    x: np.ndarray
    labels: np.ndarray
    labeled: np.ndarray
    sensitive: np.ndarray
    split: np.ndarray
    train_index: np.ndarray
    test_index: np.ndarray

    adj: list                  # list[set[int]]
    edges: set                 # canonical pairs
    dhat: np.ndarray
    ax: np.ndarray
    z: np.ndarray

    theta: np.ndarray
    logit: np.ndarray = field(default=None)
    ax_theta: np.ndarray = field(default=None)
    x_theta: np.ndarray = field(default=None)

    k_signed: np.ndarray = field(default=None)      # attacker-objective weights, 0 off test
    w_train: np.ndarray = field(default=None)       # 1/|train| on train nodes, else 0
    y_float: np.ndarray = field(default=None)
    train_ce: float = 0.0
    signed_sum: float = 0.0

    flips: list = field(default_factory=list)
    flipped_pairs: set = field(default_factory=set)

    @classmethod
    def from_graph(cls, graph: Graph, theta: np.ndarray) -> "AttackState":
        zf = aggregate(graph)
        n = graph.n
        k = np.zeros(n)
        k[graph.test_index] = group_coefficients(graph.sensitive, graph.test_index)
        w = np.zeros(n)
        if graph.train_index.size:
            w[graph.train_index] = 1.0 / graph.train_index.size
        state = cls(
            x=graph.x,
            labels=graph.labels.copy(),
            labeled=graph.labeled.copy(),
            sensitive=graph.sensitive.copy(),
            split=graph.split.copy(),
            train_index=graph.train_index,
            test_index=graph.test_index,
            adj=[set(map(int, nb)) for nb in graph.neighbors],
            edges=set(graph.edges),
            dhat=zf.dhat.copy(),
            ax=zf.ax.copy(),
            z=zf.z.copy(),
            theta=np.asarray(theta, dtype=np.float64).copy(),
            y_float=graph.labels.astype(np.float64),
            k_signed=k,
            w_train=w,
        )
        state._refresh_theta_caches()
        return state

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def train_loss(self) -> float:
        return self.train_ce

    @property
    def objective(self) -> float:
        return abs(self.signed_sum)

    def _refresh_theta_caches(self):
        self.logit = self.z @ self.theta
        self.ax_theta = self.ax @ self.theta
        self.x_theta = self.x @ self.theta
        self._refresh_losses()

    def _refresh_losses(self):
        tr = self.train_index
        self.train_ce = float(np.mean(_ce_terms(self.logit[tr], self.y_float[tr]))) \
            if tr.size else 0.0
        self.signed_sum = float(np.sum(self.k_signed * (self.logit >= 0.0)))

    def set_theta(self, theta: np.ndarray):
        self.theta = np.asarray(theta, dtype=np.float64).copy()
        self._refresh_theta_caches()

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges

    def flip_kind(self, u: int, v: int) -> str:
        return "remove" if self.has_edge(u, v) else "add"

    def is_feasible(self, u: int, v: int) -> bool:
        """A flip is feasible unless it is a removal that creates a singleton."""
        if u == v:
            return False
        if not self.has_edge(u, v):
            return True
        return len(self.adj[u]) >= 2 and len(self.adj[v]) >= 2

    def to_graph(self) -> Graph:
        return make_graph(self.x, self.labels, self.labeled, self.sensitive,
                          self.split, self.edges)

    def checksum(self) -> tuple:
        return (float(self.dhat.sum()), float(np.linalg.norm(self.z)))

    def assert_consistent(self, atol: float = 1e-8):
        """Full-recompute cross-check of the caches (debug/spot-check path)."""
        zf = aggregate(self.to_graph())
        if not np.array_equal(zf.dhat, self.dhat):
            raise CacheInconsistencyError("degree cache mismatch")
        err_ax = float(np.max(np.abs(zf.ax - self.ax))) if self.ax.size else 0.0
        err_z = float(np.max(np.abs(zf.z - self.z))) if self.z.size else 0.0
        if err_ax > atol or err_z > atol:
            raise CacheInconsistencyError(
                "cache drift: |ax| err %.3e, |z| err %.3e" % (err_ax, err_z))


def _touched_partition(state: AttackState, u: int, v: int):
    """Endpoint pair and the two neighbor groups (excluding both endpoints)."""
    nb_u = np.fromiter((i for i in state.adj[u] if i != v), dtype=np.int64)
    nb_v = np.fromiter((i for i in state.adj[v] if i != u), dtype=np.int64)
    return nb_u, nb_v


def incremental_flip_z(state: AttackState, u: int, v: int) -> FlipDelta:
    """Closed-form replacement Z rows for flipping (u, v) against current caches."""
    if not state.is_feasible(u, v):
        raise ValueError("infeasible flip (%d, %d)" % (u, v))
    kind = state.flip_kind(u, v)
    s = 1.0 if kind == "add" else -1.0
    d = state.dhat
    ax = state.ax
    x = state.x
    z = state.z

    rows = [None, None]
    for slot, (i, j) in enumerate(((u, v), (v, u))):
        di, dj = d[i], d[j]
        if kind == "add":
            rows[slot] = (di / (di + 1.0)) * (z[i] - ax[i] / di ** 2) \
                + (ax[i] + x[j]) / (di + 1.0) ** 2 \
                + (ax[j] + x[i]) / ((di + 1.0) * (dj + 1.0))
        else:
            rows[slot] = (di / (di - 1.0)) * (z[i] - ax[i] / di ** 2 - ax[j] / (di * dj)) \
                + (ax[i] - x[j]) / (di - 1.0) ** 2

    nb_u, nb_v = _touched_partition(state, u, v)
    # Correction through endpoint e for its neighbors: the e-hop term changes
    # from ax[e]/(d_i d_e) to (ax[e] +- x[other])/(d_i (d_e +- 1)).
    corr_u = -(ax[u] / d[u] - (ax[u] + s * x[v]) / (d[u] + s))
    corr_v = -(ax[v] / d[v] - (ax[v] + s * x[u]) / (d[v] + s))

    idx = np.concatenate([nb_u, nb_v])
    if idx.size:
        contrib = np.vstack([
            np.outer(1.0 / d[nb_u], corr_u) if nb_u.size else np.empty((0, x.shape[1])),
            np.outer(1.0 / d[nb_v], corr_v) if nb_v.size else np.empty((0, x.shape[1])),
        ])
        uni, inv = np.unique(idx, return_inverse=True)
        acc = np.zeros((uni.size, x.shape[1]))
        np.add.at(acc, inv, contrib)
        other_rows = z[uni] + acc
    else:
        uni = np.empty(0, dtype=np.int64)
        other_rows = np.empty((0, x.shape[1]))

    touched = np.concatenate([np.array([u, v], dtype=np.int64), uni])
    new_rows = np.vstack([rows[0], rows[1], other_rows])
    return FlipDelta(touched_rows=touched, new_rows=new_rows, kind=kind)


def flip_logits(state: AttackState, u: int, v: int):
    """Theta-projected incremental update: new logits on the touched rows only.

    Same closed forms as ``incremental_flip_z`` contracted with theta, so a
    candidate evaluation never materializes a d_x-wide row.
    """
    kind = state.flip_kind(u, v)
    s = 1.0 if kind == "add" else -1.0
    d = state.dhat
    axt = state.ax_theta
    xt = state.x_theta
    lg = state.logit

    vals = [0.0, 0.0]
    for slot, (i, j) in enumerate(((u, v), (v, u))):
        di, dj = d[i], d[j]
        if kind == "add":
            vals[slot] = (di / (di + 1.0)) * (lg[i] - axt[i] / di ** 2) \
                + (axt[i] + xt[j]) / (di + 1.0) ** 2 \
                + (axt[j] + xt[i]) / ((di + 1.0) * (dj + 1.0))
        else:
            vals[slot] = (di / (di - 1.0)) * (lg[i] - axt[i] / di ** 2 - axt[j] / (di * dj)) \
                + (axt[i] - xt[j]) / (di - 1.0) ** 2

    nb_u, nb_v = _touched_partition(state, u, v)
    corr_u = -(axt[u] / d[u] - (axt[u] + s * xt[v]) / (d[u] + s))
    corr_v = -(axt[v] / d[v] - (axt[v] + s * xt[u]) / (d[v] + s))

    idx = np.concatenate([nb_u, nb_v])
    if idx.size:
        contrib = np.concatenate([corr_u / d[nb_u], corr_v / d[nb_v]])
        uni, inv = np.unique(idx, return_inverse=True)
        acc = np.zeros(uni.size)
        np.add.at(acc, inv, contrib)
        other = lg[uni] + acc
    else:
        uni = np.empty(0, dtype=np.int64)
        other = np.empty(0)

    touched = np.concatenate([np.array([u, v], dtype=np.int64), uni])
    new_logits = np.concatenate([np.array(vals), other])
    return touched, new_logits


def loss_deltas(state: AttackState, u: int, v: int):
    """Exact (delta objective, delta train loss) for flipping (u, v)."""
    touched, new_lg = flip_logits(state, u, v)
    old_lg = state.logit[touched]
    k = state.k_signed[touched]
    d_signed = float(np.sum(k * ((new_lg >= 0.0).astype(np.float64)
                                 - (old_lg >= 0.0).astype(np.float64))))
    delta_lf = abs(state.signed_sum + d_signed) - abs(state.signed_sum)
    w = state.w_train[touched]
    y = state.y_float[touched]
    delta_l = float(np.sum(w * (_ce_terms(new_lg, y) - _ce_terms(old_lg, y))))
    return delta_lf, delta_l


@numba.njit(cache=True, inline="always")
def _ce_scalar(logit, y):
    # same arithmetic as the vectorized path: stable sigmoid, clamp, log
    if logit >= 0.0:
        p = 1.0 / (1.0 + np.exp(-logit))
    else:
        e = np.exp(logit)
        p = e / (1.0 + e)
    if p < 1e-12:
        p = 1e-12
    elif p > 1.0 - 1e-12:
        p = 1.0 - 1e-12
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


@numba.njit(cache=True)
def _score_rounds_kernel(indptr, indices, dhat, lg, axt, xt, k_signed, w_train,
                         y, cand_u, cand_v, cand_remove, signed_sum,
                         q_out, p_out):
    """Batched candidate scoring over a CSR view of the current adjacency.

    Scalar transcription of flip_logits + the per-node loss terms; neighbor
    lists are sorted, so a two-pointer merge resolves shared neighbors.
    """
    n_max = lg.size
    scratch_idx = np.empty(n_max + 2, dtype=np.int64)
    scratch_lg = np.empty(n_max + 2, dtype=np.float64)
    for c in range(cand_u.size):
        u = cand_u[c]
        v = cand_v[c]
        remove = cand_remove[c]
        s = -1.0 if remove else 1.0
        du = dhat[u]
        dv = dhat[v]
        if remove:
            new_u = (du / (du - 1.0)) * (lg[u] - axt[u] / du ** 2 - axt[v] / (du * dv)) \
                + (axt[u] - xt[v]) / (du - 1.0) ** 2
            new_v = (dv / (dv - 1.0)) * (lg[v] - axt[v] / dv ** 2 - axt[u] / (dv * du)) \
                + (axt[v] - xt[u]) / (dv - 1.0) ** 2
        else:
            new_u = (du / (du + 1.0)) * (lg[u] - axt[u] / du ** 2) \
                + (axt[u] + xt[v]) / (du + 1.0) ** 2 \
                + (axt[v] + xt[u]) / ((du + 1.0) * (dv + 1.0))
            new_v = (dv / (dv + 1.0)) * (lg[v] - axt[v] / dv ** 2) \
                + (axt[v] + xt[u]) / (dv + 1.0) ** 2 \
                + (axt[u] + xt[v]) / ((dv + 1.0) * (du + 1.0))
        corr_u = -(axt[u] / du - (axt[u] + s * xt[v]) / (du + s))
        corr_v = -(axt[v] / dv - (axt[v] + s * xt[u]) / (dv + s))

        iu, eu = indptr[u], indptr[u + 1]
        iv, ev = indptr[v], indptr[v + 1]
        m = 0
        while iu < eu or iv < ev:
            if iv >= ev or (iu < eu and indices[iu] < indices[iv]):
                node = indices[iu]
                delta = corr_u / dhat[node]
                iu += 1
            elif iu >= eu or indices[iv] < indices[iu]:
                node = indices[iv]
                delta = corr_v / dhat[node]
                iv += 1
            else:
                node = indices[iu]
                delta = (corr_u + corr_v) / dhat[node]
                iu += 1
                iv += 1
            if node == u or node == v:
                continue
            scratch_idx[m] = node
            scratch_lg[m] = lg[node] + delta
            m += 1
        scratch_idx[m] = u
        scratch_lg[m] = new_u
        m += 1
        scratch_idx[m] = v
        scratch_lg[m] = new_v
        m += 1

        d_signed = 0.0
        d_ce = 0.0
        for t in range(m):
            node = scratch_idx[t]
            nl = scratch_lg[t]
            ol = lg[node]
            kn = k_signed[node]
            if kn != 0.0:
                ind_new = 1.0 if nl >= 0.0 else 0.0
                ind_old = 1.0 if ol >= 0.0 else 0.0
                d_signed += kn * (ind_new - ind_old)
            wn = w_train[node]
            if wn != 0.0:
                d_ce += wn * (_ce_scalar(nl, y[node]) - _ce_scalar(ol, y[node]))
        q_out[c] = abs(signed_sum + d_signed) - abs(signed_sum)
        p_out[c] = d_ce


def adjacency_csr(state: AttackState):
    """Sorted CSR view of the current adjacency (no self entries)."""
    degrees = np.fromiter((len(a) for a in state.adj), dtype=np.int64,
                          count=state.n)
    indptr = np.zeros(state.n + 1, dtype=np.int64)
    np.cumsum(degrees, out=indptr[1:])
    indices = np.empty(int(indptr[-1]), dtype=np.int64)
    for i in range(state.n):
        indices[indptr[i]:indptr[i + 1]] = sorted(state.adj[i])
    return indptr, indices


def batch_loss_deltas(state: AttackState, candidates):
    """Kernel-accelerated (delta objective, delta train loss) for many flips."""
    cand_u = np.fromiter((u for (u, _) in candidates), dtype=np.int64,
                         count=len(candidates))
    cand_v = np.fromiter((v for (_, v) in candidates), dtype=np.int64,
                         count=len(candidates))
    cand_remove = np.fromiter((state.has_edge(u, v) for (u, v) in candidates),
                              dtype=np.bool_, count=len(candidates))
    indptr, indices = adjacency_csr(state)
    q = np.empty(len(candidates))
    p = np.empty(len(candidates))
    _score_rounds_kernel(indptr, indices, state.dhat, state.logit,
                         state.ax_theta, state.x_theta, state.k_signed,
                         state.w_train, state.y_float, cand_u, cand_v,
                         cand_remove, state.signed_sum, q, p)
    return q, p


def commit_flip(state: AttackState, u: int, v: int, iteration: int = 0) -> AttackState:
    """Apply the flip to adjacency and caches in place; returns the state."""
    if not state.is_feasible(u, v):
        raise ValueError("infeasible flip (%d, %d)" % (u, v))
    delta = incremental_flip_z(state, u, v)
    s = 1.0 if delta.kind == "add" else -1.0

    a, b = (u, v) if u < v else (v, u)
    if delta.kind == "add":
        state.edges.add((a, b))
        state.adj[u].add(v)
        state.adj[v].add(u)
    else:
        state.edges.remove((a, b))
        state.adj[u].discard(v)
        state.adj[v].discard(u)

    state.dhat[u] += s
    state.dhat[v] += s
    state.ax[u] += s * state.x[v]
    state.ax[v] += s * state.x[u]
    state.z[delta.touched_rows] = delta.new_rows
    state.ax_theta[u] += s * state.x_theta[v]
    state.ax_theta[v] += s * state.x_theta[u]
    state.logit[delta.touched_rows] = delta.new_rows @ state.theta
    state._refresh_losses()

    state.flips.append(EdgeFlip(u=a, v=b, kind=delta.kind, iteration=iteration))
    state.flipped_pairs.add((a, b))
    return state


def node_deficits(state: AttackState) -> np.ndarray:
    """Per-node confidence deficit max_i |logit_i| - |logit|, all >= 0."""
    abs_lg = np.abs(state.logit)
    return float(abs_lg.max()) - abs_lg


def importance_score(state: AttackState, u: int, v: int) -> float:
    """Sum of confidence deficits over the self-inclusive joint neighborhood."""
    deficit = node_deficits(state)
    members = (state.adj[u] | {u}) | (state.adj[v] | {v})
    return float(deficit[list(members)].sum())


def _condensed_index(u, v, n):
    # index of pair (u, v), u < v, in upper-triangle row-major order
    return u * (2 * n - u - 1) // 2 + (v - u - 1)


def _feasible_pair_mask(state: AttackState):
    """Boolean mask over all canonical pairs: feasible and not previously flipped."""
    n = state.n
    iu, ju = np.triu_indices(n, k=1)
    is_edge = np.zeros(iu.size, dtype=bool)
    pos = np.fromiter(
        (_condensed_index(a, b, n) for (a, b) in state.edges), dtype=np.int64,
        count=len(state.edges))
    if pos.size:
        is_edge[pos] = True
    deg = np.fromiter((len(a) for a in state.adj), dtype=np.int64, count=n)
    removable = (deg[iu] >= 2) & (deg[ju] >= 2)
    mask = np.where(is_edge, removable, True)
    if state.flipped_pairs:
        done = np.fromiter(
            (_condensed_index(a, b, n) for (a, b) in state.flipped_pairs),
            dtype=np.int64, count=len(state.flipped_pairs))
        mask[done] = False
    return iu, ju, mask


def build_candidates(state: AttackState, a) -> list:
    """Top-a candidate pairs by importance score, over all feasible unflipped pairs.

    ``a`` may be an absolute count or the string 'all'.  Ranking uses the
    per-node neighborhood deficit sums as an upper bound (the overlap
    correction is non-negative) and only resolves exact scores for the top
    slice, so the result is the exact deterministic top-a with ties broken by
    canonical pair order.
    """
    iu, ju, mask = _feasible_pair_mask(state)
    if not np.any(mask):
        raise ValueError("no feasible candidate pairs remain")
    if a == "all":
        return list(zip(iu[mask].tolist(), ju[mask].tolist()))

    a = int(a)
    if a < 1:
        raise ValueError("candidate count must be >= 1, got %d" % a)

    deficit = node_deficits(state)
    hood = np.array([deficit[i] + sum(deficit[j] for j in state.adj[i])
                     for i in range(state.n)])
    ub = hood[iu[mask]] + hood[ju[mask]]
    cu, cv = iu[mask], ju[mask]
    order = np.argsort(-ub, kind="stable")

    # Lazy exact resolution: exact <= ub since the overlap deduction is >= 0,
    # so once the a-th best exact beats every remaining upper bound we stop.
    heap = []  # min-heap over exact scores, size capped at a
    collected = []
    hoods = [state.adj[i] | {i} for i in range(state.n)]
    for rank in range(order.size):
        if len(heap) == a and ub[order[rank]] < heap[0]:
            break
        u = int(cu[order[rank]])
        v = int(cv[order[rank]])
        overlap = hoods[u] & hoods[v]
        exact = ub[order[rank]] - (deficit[list(overlap)].sum() if overlap else 0.0)
        collected.append((exact, u, v))
        if len(heap) < a:
            heapq.heappush(heap, exact)
        elif exact > heap[0]:
            heapq.heapreplace(heap, exact)
    collected.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [(u, v) for (_, u, v) in collected[:a]]
