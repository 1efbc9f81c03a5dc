"""Undirected attributed graph: data model, on-disk formats, edge flips, feasibility.

The graph is stored as sorted neighbor lists plus a set of canonical (u < v)
edge pairs, so the attack loop gets both cheap neighbor iteration and O(1)
pair membership.  Graphs are treated as immutable after construction; every
mutation path (``flip_edge``, the attack engine's commit step) produces a new
object or goes through an explicitly single-writer state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

TRAIN, VAL, TEST = 0, 1, 2
_SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}
_SPLIT_STRINGS = {v: k for k, v in _SPLIT_NAMES.items()}


class GraphFormatError(ValueError):
    """Malformed graph file (reported with the offending line number)."""


class GraphInvariantError(ValueError):
    """A structural invariant of the graph data model is violated."""


@dataclass(frozen=True)
class EdgeFlip:
    """A single committed edge flip: ``kind`` is 'remove' iff (u, v) existed."""

    u: int
    v: int
    kind: str  # "add" | "remove"
    iteration: int = 0

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError("self-loop flip (%d, %d)" % (self.u, self.v))
        if self.u > self.v:
            object.__setattr__(self, "u", self.v)
            object.__setattr__(self, "v", self.u)
        if self.kind not in ("add", "remove"):
            raise ValueError("flip kind must be 'add' or 'remove', got %r" % (self.kind,))

    @property
    def pair(self) -> tuple[int, int]:
        return (self.u, self.v)


@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph with binary labels and sensitive groups.

    Fields
    ------
    n          : node count
    neighbors  : per-node sorted int arrays (no self entries)
    edges      : set of canonical (u, v) pairs with u < v
    x          : (n, d_x) float attribute matrix
    labels     : (n,) int array in {0, 1}; meaningful only where ``labeled``
    labeled    : (n,) bool mask (unlabeled nodes are explicit, not a magic value)
    sensitive  : (n,) int array in {0, 1}
    split      : (n,) int array with TRAIN / VAL / TEST codes
    """

    n: int
    neighbors: tuple
    edges: frozenset
    x: np.ndarray
    labels: np.ndarray
    labeled: np.ndarray
    sensitive: np.ndarray
    split: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def degree(self, u: int) -> int:
        return len(self.neighbors[u])

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges

    def split_index(self, which) -> np.ndarray:
        if isinstance(which, str):
            which = _SPLIT_NAMES[which]
        return np.flatnonzero(self.split == which)

    @property
    def train_index(self) -> np.ndarray:
        return self.split_index(TRAIN)

    @property
    def test_index(self) -> np.ndarray:
        return self.split_index(TEST)

    def group_index(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.sensitive == g)


def _build_neighbors(n: int, edges) -> tuple:
    adj = [[] for _ in range(n)]
    for (u, v) in edges:
        adj[u].append(v)
        adj[v].append(u)
    return tuple(np.array(sorted(a), dtype=np.int64) for a in adj)


def make_graph(x, labels, labeled, sensitive, split, edges) -> Graph:
    """Assemble and validate a Graph from raw arrays and a canonical edge set."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    canon = set()
    for (u, v) in edges:
        if u == v:
            raise GraphInvariantError("self-loop (%d, %d) not allowed" % (u, v))
        canon.add((min(u, v), max(u, v)))
    g = Graph(
        n=n,
        neighbors=_build_neighbors(n, canon),
        edges=frozenset(canon),
        x=x,
        labels=np.asarray(labels, dtype=np.int64),
        labeled=np.asarray(labeled, dtype=bool),
        sensitive=np.asarray(sensitive, dtype=np.int64),
        split=np.asarray(split, dtype=np.int64),
    )
    validate_graph(g)
    return g


def validate_graph(graph: Graph) -> None:
    """Validity sweep over the data-model invariants; raises GraphInvariantError."""
    n = graph.n
    for arr, name in (
        (graph.labels, "labels"),
        (graph.labeled, "labeled"),
        (graph.sensitive, "sensitive"),
        (graph.split, "split"),
    ):
        if arr.shape != (n,):
            raise GraphInvariantError("%s has shape %s, expected (%d,)" % (name, arr.shape, n))
    if graph.x.ndim != 2 or graph.x.shape[0] != n:
        raise GraphInvariantError("attribute matrix has shape %s" % (graph.x.shape,))
    for (u, v) in graph.edges:
        if not (0 <= u < v < n):
            raise GraphInvariantError("edge (%d, %d) out of range or not canonical" % (u, v))
    # symmetry + no self loops, cross-checked against the neighbor lists
    deg_from_edges = np.zeros(n, dtype=np.int64)
    for (u, v) in graph.edges:
        deg_from_edges[u] += 1
        deg_from_edges[v] += 1
    if not np.array_equal(deg_from_edges, graph.degrees):
        raise GraphInvariantError("neighbor lists inconsistent with edge set")
    for u in range(n):
        nb = graph.neighbors[u]
        if len(nb) and (np.any(nb == u) or np.any(np.diff(nb) <= 0)):
            raise GraphInvariantError("neighbor list of node %d has self entry or duplicates" % u)
        for v in nb:
            if not graph.has_edge(u, int(v)):
                raise GraphInvariantError("asymmetric adjacency at (%d, %d)" % (u, v))
    if not np.all(np.isin(graph.sensitive, (0, 1))):
        raise GraphInvariantError("sensitive values must be in {0, 1}")
    for g in (0, 1):
        if not np.any(graph.sensitive == g):
            raise GraphInvariantError("empty sensitive group %d" % g)
        if not np.any((graph.sensitive == g) & (graph.split == TEST)):
            raise GraphInvariantError("sensitive group %d has no test nodes" % g)
    train = graph.split == TRAIN
    if np.any(train & ~graph.labeled):
        bad = int(np.flatnonzero(train & ~graph.labeled)[0])
        raise GraphInvariantError("train node %d has no label" % bad)
    lab = graph.labels[graph.labeled]
    if lab.size and not np.all(np.isin(lab, (0, 1))):
        raise GraphInvariantError("labels must be in {0, 1}")
    if not np.all(np.isin(graph.split, (TRAIN, VAL, TEST))):
        raise GraphInvariantError("split codes must be train/val/test")
    if not np.all(np.isfinite(graph.x)):
        raise GraphInvariantError("attributes contain non-finite values")


def load_graph(nodes_path, edges_path) -> Graph:
    """Load a graph from the nodes CSV and edges TSV formats.

    Nodes file: header ``id,sensitive,label,split,f0,...,f{d-1}`` with
    label -1 meaning unlabeled.  Edges file: one ``u<TAB>v`` pair per line.
    Duplicate and reversed edge lines are deduplicated; self-loop lines are
    rejected with their line number.
    """
    rows = {}
    with open(nodes_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["id", "sensitive", "label", "split"]:
            raise GraphFormatError("%s:1: bad header %r" % (nodes_path, header))
        d_x = len(header) - 4
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 + d_x:
                raise GraphFormatError("%s:%d: expected %d fields, got %d"
                                       % (nodes_path, lineno, 4 + d_x, len(row)))
            try:
                nid = int(row[0])
                sens = int(row[1])
                label = int(row[2])
                feats = [float(f) for f in row[4:]]
            except ValueError as exc:
                raise GraphFormatError("%s:%d: %s" % (nodes_path, lineno, exc)) from exc
            if row[3] not in _SPLIT_NAMES:
                raise GraphFormatError("%s:%d: unknown split %r" % (nodes_path, lineno, row[3]))
            if label not in (-1, 0, 1):
                raise GraphFormatError("%s:%d: label must be -1, 0 or 1" % (nodes_path, lineno))
            if sens not in (0, 1):
                raise GraphFormatError("%s:%d: sensitive must be 0 or 1" % (nodes_path, lineno))
            if nid in rows:
                raise GraphFormatError("%s:%d: duplicate node id %d" % (nodes_path, lineno, nid))
            rows[nid] = (sens, label, _SPLIT_NAMES[row[3]], feats)
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise GraphFormatError("%s: node ids must be 0..%d" % (nodes_path, n - 1))

    x = np.array([rows[i][3] for i in range(n)], dtype=np.float64)
    labels_raw = np.array([rows[i][1] for i in range(n)], dtype=np.int64)
    labeled = labels_raw >= 0
    labels = np.where(labeled, labels_raw, 0)
    sensitive = np.array([rows[i][0] for i in range(n)], dtype=np.int64)
    split = np.array([rows[i][2] for i in range(n)], dtype=np.int64)

    edges = set()
    with open(edges_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError("%s:%d: expected 'u<TAB>v'" % (edges_path, lineno))
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphFormatError("%s:%d: %s" % (edges_path, lineno, exc)) from exc
            if u == v:
                raise GraphFormatError("%s:%d: self loop (%d, %d)" % (edges_path, lineno, u, v))
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError("%s:%d: node id out of range" % (edges_path, lineno))
            edges.add((min(u, v), max(u, v)))

    return make_graph(x, labels, labeled, sensitive, split, edges)


def save_graph(graph: Graph, nodes_path, edges_path) -> None:
    """Write the on-disk formats; attributes use 17 significant digits."""
    with open(nodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d_x = graph.x.shape[1]
        writer.writerow(["id", "sensitive", "label", "split"] + ["f%d" % j for j in range(d_x)])
        for i in range(graph.n):
            label = int(graph.labels[i]) if graph.labeled[i] else -1
            writer.writerow(
                [i, int(graph.sensitive[i]), label, _SPLIT_STRINGS[int(graph.split[i])]]
                + ["%.17g" % v for v in graph.x[i]]
            )
    with open(edges_path, "w") as fh:
        for (u, v) in sorted(graph.edges):
            fh.write("%d\t%d\n" % (u, v))


def flip_edge(graph: Graph, u: int, v: int) -> Graph:
    """Return a new graph with the (u, v) adjacency entry toggled (symmetrically)."""
    if u == v:
        raise ValueError("cannot flip self-loop (%d, %d)" % (u, v))
    a, b = (u, v) if u < v else (v, u)
    edges = set(graph.edges)
    neighbors = list(graph.neighbors)
    if (a, b) in edges:
        edges.remove((a, b))
        neighbors[a] = neighbors[a][neighbors[a] != b]
        neighbors[b] = neighbors[b][neighbors[b] != a]
    else:
        edges.add((a, b))
        neighbors[a] = np.sort(np.append(neighbors[a], b))
        neighbors[b] = np.sort(np.append(neighbors[b], a))
    return replace(graph, neighbors=tuple(neighbors), edges=frozenset(edges))


def check_feasible(graph: Graph, flip: EdgeFlip) -> bool:
    """False iff the flip is a removal that would leave an endpoint with degree 0."""
    if flip.kind == "add":
        return True
    return graph.degree(flip.u) >= 2 and graph.degree(flip.v) >= 2


def classify_edge_group(graph: Graph, u: int, v: int) -> str:
    """Classify a node pair: first letter E/D for same/different label, second for sensitive."""
    if not (graph.labeled[u] and graph.labeled[v]):
        raise ValueError("classify_edge_group needs labeled endpoints (%d, %d)" % (u, v))
    same_label = graph.labels[u] == graph.labels[v]
    same_sens = graph.sensitive[u] == graph.sensitive[v]
    return ("E" if same_label else "D") + ("E" if same_sens else "D")


def generate_sbm(n: int, d_x: int, homophily: float, label_noise: float, seed: int,
                 avg_degree: float = 8.0, group_shift: float = 0.5) -> Graph:
    """Two-block synthetic graph with sensitive blocks and attribute-driven labels.

    Blocks of sizes ceil(n/2) / floor(n/2) define the sensitive groups.  The
    intra-block edge probability is ``2 * homophily * p_bar`` and the
    inter-block probability ``2 * (1 - homophily) * p_bar`` with ``p_bar``
    calibrated to the requested average degree, so the expected intra-edge
    fraction is approximately ``homophily``.  Attributes are Gaussian with a
    small group mean shift; labels follow a random linear function of the
    attributes (thresholded at the median for balance) and are flipped with
    probability ``label_noise``.  Splits are 50/20/30 train/val/test per block.
    """
    if n < 8:
        raise ValueError("n must be >= 8, got %d" % n)
    if d_x < 1:
        raise ValueError("d_x must be >= 1, got %d" % d_x)
    if not (0.0 <= homophily <= 1.0):
        raise ValueError("homophily must lie in [0, 1], got %r" % homophily)
    if not (0.0 <= label_noise <= 1.0):
        raise ValueError("label_noise must lie in [0, 1], got %r" % label_noise)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B3]))
    n0 = (n + 1) // 2
    sensitive = np.zeros(n, dtype=np.int64)
    sensitive[n0:] = 1

    p_bar = min(1.0, avg_degree / max(n - 1, 1))
    p_intra = min(1.0, 2.0 * homophily * p_bar)
    p_inter = min(1.0, 2.0 * (1.0 - homophily) * p_bar)
    iu, ju = np.triu_indices(n, k=1)
    same_block = sensitive[iu] == sensitive[ju]
    prob = np.where(same_block, p_intra, p_inter)
    mask = rng.random(iu.size) < prob
    edges = {(int(a), int(b)) for a, b in zip(iu[mask], ju[mask])}

    shift_dir = rng.normal(size=d_x)
    shift_dir /= np.linalg.norm(shift_dir)
    x = rng.normal(size=(n, d_x))
    x += np.where(sensitive[:, None] == 0, group_shift, -group_shift) * shift_dir

    w = rng.normal(size=d_x)
    score = x @ w
    labels = (score >= np.median(score)).astype(np.int64)
    flip_mask = rng.random(n) < label_noise
    labels = np.where(flip_mask, 1 - labels, labels)

    split = np.empty(n, dtype=np.int64)
    for g in (0, 1):
        idx = np.flatnonzero(sensitive == g)
        idx = rng.permutation(idx)
        b = idx.size
        n_tr = int(0.5 * b)
        n_val = int(0.2 * b)
        split[idx[:n_tr]] = TRAIN
        split[idx[n_tr:n_tr + n_val]] = VAL
        split[idx[n_tr + n_val:]] = TEST

    return make_graph(x, labels, np.ones(n, dtype=bool), sensitive, split, edges)
