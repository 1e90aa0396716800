"""Hyperbolic weighted means on the Poincare ball.

The gyromidpoint is the closed-form mean used by the network's message
aggregation; the tangential midpoint (log -> average -> exp at the origin)
and the iterative Frechet mean are here for benchmarking against it.
"""

from typing import NamedTuple

import numpy as np

from . import _accel, manifold


class FrechetResult(NamedTuple):
    point: np.ndarray
    iters: int
    converged: bool


def _as_set(points, weights):
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be an (N, d) array")
    if w.shape != (pts.shape[0],):
        raise ValueError("weights must be a length-N vector")
    return pts, w


def gyromidpoint(points, weights, k):
    """Weighted gyromidpoint: (1/2) (x) [sum w_i lam_i x_i / sum |w_i| (lam_i - 1)].

    0-homogeneous in the weights; with nonnegative weights the result lies
    in the geodesic convex hull of the points.
    """
    pts, w = _as_set(points, weights)
    if not np.any(w != 0.0):
        raise ValueError("gyromidpoint needs at least one nonzero weight")
    c = abs(float(k))
    lam = manifold.conformal_factor(pts, k)[:, 0]
    num = (w * lam) @ pts
    den = float(np.abs(w) @ (lam - 1.0))
    u = num / max(den, manifold.MIN_NORM)
    # (1/2) (x) u in closed form; safe since |u| <= 1/sqrt(c) for
    # same-sign weights and the root is clamped regardless
    u2 = float(u @ u)
    mid = u / (1.0 + np.sqrt(max(1.0 - c * u2, manifold.MIN_NORM)))
    return manifold._project(mid, k)


def tangential_midpoint(points, weights, k):
    """exp_0 of the weighted average of log_0 of the points."""
    pts, w = _as_set(points, weights)
    wsum = float(w.sum())
    if abs(wsum) < manifold.MIN_NORM:
        raise ValueError("tangential_midpoint needs a nonzero weight sum")
    v = (w @ manifold.log_map0(pts, k)) / wsum
    return manifold.exp_map0(v, k)


def frechet_mean_oracle(points, weights, k, max_iters=1000, tol=1e-12):
    """Karcher flow for the weighted Frechet mean; testing/benchmark oracle.

    Returns the best iterate plus iteration count and a convergence flag
    (tangent-step norm < tol before max_iters ran out).
    """
    pts, w = _as_set(points, weights)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if float(w.sum()) <= 0.0:
        raise ValueError("frechet_mean_oracle needs a positive weight sum")
    mu, iters, converged = _accel.karcher_flow(pts, w, k, max_iters, tol)
    return FrechetResult(np.asarray(mu), int(iters), bool(converged))


def aggregate(adj, H, k):
    """Row-wise gyromidpoint aggregation: out[i] = midpoint of H under adj[i].

    Accepts a dense or scipy-sparse nonnegative matrix; all-zero rows map
    to the origin. Fast non-differentiable path (diagnostics, benchmarks);
    training assembles the same formula from autodiff primitives.
    """
    csr = _accel.as_csr(adj)
    H = np.asarray(H, dtype=np.float64)
    if csr.shape[1] != H.shape[0]:
        raise ValueError("adjacency columns must match the point count")
    return _accel.aggregate_rows(csr, H, k)
