"""Dataset loading, adjacency normalization, splits, synthetic generators.

On-disk layout for a dataset directory:
    edges.txt       whitespace-separated "u v" pairs, one undirected edge/line
    features.csv    headerless CSV, row i = features of node i
    labels.csv      headerless, one integer label per line (optional)
    splits/{train,val,test}.txt   fixed node-index files (optional)
"""

from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp


class Graph:
    """Immutable graph: undirected dedup'd edges (no self-loops), features,
    optional labels, and the symmetric normalized adjacency with self-loops
    D^{-1/2} (A + I) D^{-1/2}."""

    def __init__(self, num_nodes, edges, features, labels=None):
        self.num_nodes = int(num_nodes)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if self.features.shape[0] != self.num_nodes:
            raise ValueError("feature rows (%d) != node count (%d)"
                             % (self.features.shape[0], self.num_nodes))
        if self.labels is not None and self.labels.shape[0] != self.num_nodes:
            raise ValueError("label rows != node count")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.num_nodes):
            raise ValueError("edge references a node id outside [0, N)")
        self.adj_norm = build_adj_norm(self.num_nodes, self.edges)
        self.degrees = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(self.degrees, self.edges[:, 0], 1)
        np.add.at(self.degrees, self.edges[:, 1], 1)

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def edge_set(self):
        return {(int(u), int(v)) for u, v in self.edges}


def dedup_edges(raw):
    """Canonicalize to (min, max), drop self-loops and duplicates."""
    raw = np.asarray(raw, dtype=np.int64).reshape(-1, 2)
    if raw.size == 0:
        return raw
    lo = raw.min(axis=1)
    hi = raw.max(axis=1)
    keep = lo != hi
    pairs = np.stack([lo[keep], hi[keep]], axis=1)
    return np.unique(pairs, axis=0)


def build_adj_norm(num_nodes, edges):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(num_nodes)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(num_nodes)])
    data = np.ones(rows.shape[0], dtype=np.float64)
    a_tilde = sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    D = sp.diags(d_inv_sqrt)
    return (D @ a_tilde @ D).tocsr()


def normalize_features(X):
    """Row-normalize to unit L1 norm; all-zero rows stay zero."""
    X = np.asarray(X, dtype=np.float64)
    s = np.abs(X).sum(axis=1, keepdims=True)
    return X / np.maximum(s, 1.0e-12)


def load_graph(edge_path, feature_path, label_path=None):
    features = np.loadtxt(feature_path, delimiter=",", dtype=np.float64, ndmin=2)
    n = features.shape[0]
    if Path(edge_path).stat().st_size == 0:
        raw = np.zeros((0, 2), dtype=np.int64)
    else:
        try:
            raw = np.loadtxt(edge_path, dtype=np.int64, ndmin=2)
        except ValueError as e:
            raise ValueError("cannot parse edge file %s: %s" % (edge_path, e))
    if raw.size and raw.shape[1] != 2:
        raise ValueError("edge file rows must be 'u v' pairs")
    edges = dedup_edges(raw)
    labels = None
    if label_path is not None and Path(label_path).exists():
        labels = np.loadtxt(label_path, dtype=np.int64)
        labels = np.atleast_1d(labels)
    return Graph(n, edges, features, labels)


def load_dataset(dataset_dir):
    d = Path(dataset_dir)
    return load_graph(d / "edges.txt", d / "features.csv", d / "labels.csv")


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

class NCSplit(NamedTuple):
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


class LPSplit(NamedTuple):
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    adj_train: sp.csr_matrix  # normalized adjacency of the train-edge graph


def read_split_files(dataset_dir):
    """Fixed NC split indices from splits/{train,val,test}.txt, or None."""
    d = Path(dataset_dir) / "splits"
    paths = [d / "train.txt", d / "val.txt", d / "test.txt"]
    if not all(p.exists() for p in paths):
        return None
    tr, va, te = (np.loadtxt(p, dtype=np.int64, ndmin=1) for p in paths)
    return NCSplit(tr, va, te)


def _apportion(total, quotas):
    """Integer counts summing to `total`, proportional to `quotas`
    (largest-remainder rounding, first-index tie break)."""
    quotas = np.asarray(quotas, dtype=np.float64)
    exact = total * quotas / quotas.sum()
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(quotas)), -(exact - counts)))
        counts[order[:short]] += 1
    return counts


def split_nc(g, fractions=(0.70, 0.15, 0.15), seed=0):
    """Stratified percentage split.

    Bucket sizes are apportioned globally (so 70/15/15 of 100 nodes is
    exactly 70/15/15), then each bucket's quota is spread over the classes
    by largest remainder, keeping every class within one node of its
    proportional share.
    """
    if g.labels is None:
        raise ValueError("NC split needs labels")
    fractions = np.asarray(fractions, dtype=np.float64)
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    classes = np.unique(g.labels)
    class_idx = []
    for cls in classes:
        idx = np.flatnonzero(g.labels == cls)
        rng.shuffle(idx)
        class_idx.append(idx)
    class_sizes = np.array([idx.size for idx in class_idx])
    bucket_sizes = _apportion(g.num_nodes, fractions)
    per_class = np.zeros((3, len(classes)), dtype=np.int64)
    per_class[0] = _apportion(bucket_sizes[0], class_sizes)
    per_class[1] = _apportion(bucket_sizes[1], class_sizes)
    per_class[2] = class_sizes - per_class[0] - per_class[1]
    for b in range(3):
        if fractions[b] > 0 and (per_class[b] <= 0).any():
            cls = classes[int(np.argmin(per_class[b]))]
            raise ValueError("class %d too small for the requested split"
                             % cls)
    buckets = ([], [], [])
    for c, idx in enumerate(class_idx):
        n_tr, n_va = per_class[0, c], per_class[1, c]
        buckets[0].append(idx[:n_tr])
        buckets[1].append(idx[n_tr:n_tr + n_va])
        buckets[2].append(idx[n_tr + n_va:])
    return NCSplit(*(np.sort(np.concatenate(b)) for b in buckets))


def sample_negatives(num_nodes, count, forbidden, rng):
    """`count` uniform non-edges (i<j) avoiding `forbidden` pairs."""
    n = int(num_nodes)
    pool = n * (n - 1) // 2 - len(forbidden)
    if pool < count:
        raise ValueError("graph too dense to sample %d negatives" % count)
    out = set()
    while len(out) < count:
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n))
        if i == j:
            continue
        pair = (i, j) if i < j else (j, i)
        if pair in forbidden or pair in out:
            continue
        out.add(pair)
    return np.array(sorted(out), dtype=np.int64)


def split_lp(g, ratios=(0.85, 0.05, 0.10), seed=0):
    """85/5/10 positive-edge split; val/test positives leave the training
    adjacency; fixed equal-count negatives for val/test."""
    if abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    rng = np.random.default_rng(seed)
    edges = g.edges.copy()
    perm = rng.permutation(edges.shape[0])
    edges = edges[perm]
    m = edges.shape[0]
    n_val = int(round(ratios[1] * m))
    n_test = int(round(ratios[2] * m))
    val_pos = edges[:n_val]
    test_pos = edges[n_val:n_val + n_test]
    train_pos = edges[n_val + n_test:]
    forbidden = g.edge_set()
    val_neg = sample_negatives(g.num_nodes, n_val, forbidden, rng)
    test_neg = sample_negatives(g.num_nodes, n_test,
                                forbidden | {tuple(p) for p in map(tuple, val_neg)},
                                rng)
    adj_train = build_adj_norm(g.num_nodes, train_pos)
    return LPSplit(train_pos, val_pos, test_pos, val_neg, test_neg, adj_train)


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------

class SyntheticSpec(NamedTuple):
    kind: str                  # "two-blob" | "uniform"
    n_points: int
    dim: int
    kappa: float
    seed: int
    center_dist: float = 2.0   # tangent-space distance between blob centers
    sigma: float = 0.5         # tangent-space spread of blob 0
    sigma2: Optional[float] = None  # spread of blob 1; defaults to sigma


class PointSet(NamedTuple):
    points: np.ndarray
    labels: Optional[np.ndarray]


def gen_synthetic(spec):
    from . import manifold

    rng = np.random.default_rng(spec.seed)
    c = abs(float(spec.kappa))
    if spec.n_points == 0:
        empty = np.zeros((0, spec.dim))
        return PointSet(empty, np.zeros(0, dtype=np.int64)
                        if spec.kind == "two-blob" else None)
    if spec.kind == "uniform":
        dirs = rng.normal(size=(spec.n_points, spec.dim))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
        radii = (0.9 / np.sqrt(c)) * rng.random((spec.n_points, 1)) ** (1.0 / spec.dim)
        return PointSet(manifold.clip(dirs * radii, spec.kappa), None)
    if spec.kind == "two-blob":
        n0 = spec.n_points - spec.n_points // 2
        n1 = spec.n_points // 2
        center = np.zeros(spec.dim)
        center[0] = spec.center_dist / 2.0
        s1 = spec.sigma if spec.sigma2 is None else spec.sigma2
        v0 = rng.normal(size=(n0, spec.dim)) * spec.sigma + center
        v1 = rng.normal(size=(n1, spec.dim)) * s1 - center
        pts = manifold.exp_map0(np.concatenate([v0, v1]), spec.kappa)
        labels = np.concatenate([np.zeros(n0, dtype=np.int64),
                                 np.ones(n1, dtype=np.int64)])
        return PointSet(manifold.clip(pts, spec.kappa), labels)
    raise ValueError("unknown synthetic kind %r" % (spec.kind,))
