"""JIT-compiled hot kernels with a no-JIT fallback.

Two kernels are worth compiling: the CSR sparse-dense matmul that drives
message aggregation, and the Karcher-flow loop behind the Frechet-mean
oracle (a sequential per-trial iteration that vectorized numpy handles
poorly). Everything else in the package is BLAS-bound already.

Set GYROGNN_NO_NUMBA=1 to force the fallback path (scipy CSR matmul and a
vectorized numpy Karcher loop). Both paths are importable side by side so
benchmarks/kernels.py can time them against each other; the module-level
``spmm``, ``aggregate_rows`` and ``karcher_flow`` names dispatch on the flag.
"""

import os

import numpy as np
import scipy.sparse as sp

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("GYROGNN_NO_NUMBA", "") != "1"

_MIN = 1e-15
# same boundary margin the manifold ops project into; the kernels must
# agree with them bit-for-bit on where the representable ball ends
_BAND = 1.0 - 1e-5


# ---------------------------------------------------------------------------
# CSR sparse-dense product
# ---------------------------------------------------------------------------

@njit(cache=True)
def _spmm_kernel(indptr, indices, data, B, out):
    n = indptr.shape[0] - 1
    d = B.shape[1]
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for t in range(d):
                out[i, t] += w * B[j, t]
    return out


def spmm_numba(adj_csr, B):
    out = np.zeros((adj_csr.shape[0], B.shape[1]), dtype=np.float64)
    return _spmm_kernel(adj_csr.indptr, adj_csr.indices, adj_csr.data,
                        np.ascontiguousarray(B), out)


def spmm_scipy(adj_csr, B):
    return np.asarray(adj_csr @ B)


# ---------------------------------------------------------------------------
# fused gyromidpoint row aggregation (non-differentiable fast path)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _aggregate_kernel(indptr, indices, data, H, c, out):
    n, d = H.shape
    lam = np.empty(n)
    for i in range(n):
        s = 0.0
        for t in range(d):
            s += H[i, t] * H[i, t]
        lam[i] = 2.0 / (1.0 - c * s)
    for i in range(n):
        den = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            den += abs(w) * (lam[j] - 1.0)
            for t in range(d):
                out[i, t] += w * lam[j] * H[j, t]
        if den < _MIN:
            # all-zero adjacency row: park the node at the origin
            for t in range(d):
                out[i, t] = 0.0
            continue
        u2 = 0.0
        for t in range(d):
            out[i, t] /= den
            u2 += out[i, t] * out[i, t]
        root = 1.0 - c * u2
        if root < _MIN:
            root = _MIN
        scale = 1.0 / (1.0 + np.sqrt(root))
        maxn = _BAND / np.sqrt(c)
        mn2 = 0.0
        for t in range(d):
            out[i, t] *= scale
            mn2 += out[i, t] * out[i, t]
        mn = np.sqrt(mn2)
        if mn > maxn:
            for t in range(d):
                out[i, t] *= maxn / mn
    return out


def aggregate_rows_numba(adj_csr, H, k):
    out = np.zeros_like(np.ascontiguousarray(H))
    return _aggregate_kernel(adj_csr.indptr, adj_csr.indices, adj_csr.data,
                             np.ascontiguousarray(H), abs(float(k)), out)


def aggregate_rows_numpy(adj_csr, H, k):
    c = abs(float(k))
    lam = 2.0 / (1.0 - c * np.sum(H * H, axis=1, keepdims=True))
    num = np.asarray(adj_csr @ (lam * H))
    den = np.asarray(abs(adj_csr) @ (lam - 1.0))
    zero_row = den[:, 0] < _MIN
    u = num / np.maximum(den, _MIN)
    scale = 1.0 / (1.0 + np.sqrt(np.maximum(1.0 - c * np.sum(u * u, axis=1, keepdims=True), _MIN)))
    out = u * scale
    maxn = _BAND / np.sqrt(c)
    on = np.linalg.norm(out, axis=1, keepdims=True)
    out = np.where(on > maxn, out * (maxn / np.maximum(on, _MIN)), out)
    out[zero_row] = 0.0
    return out


# ---------------------------------------------------------------------------
# Karcher flow (iterative weighted Frechet mean)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grad_step(X, w, c, wsum, mu, step):
    # step <- sum_i w_i log_mu(x_i) / wsum ; returns |step|
    n, d = X.shape
    sqc = np.sqrt(c)
    mu2 = 0.0
    for t in range(d):
        mu2 += mu[t] * mu[t]
    lam_mu = 2.0 / (1.0 - c * mu2)
    for t in range(d):
        step[t] = 0.0
    m = np.empty(d)
    for i in range(n):
        # m = (-mu) (+) x_i
        x2 = 0.0
        xm = 0.0
        for t in range(d):
            x2 += X[i, t] * X[i, t]
            xm += -mu[t] * X[i, t]
        numa = 1.0 + 2.0 * c * xm + c * x2
        numb = 1.0 - c * mu2
        den = 1.0 + 2.0 * c * xm + c * c * mu2 * x2
        if den < _MIN:
            den = _MIN
        mn2 = 0.0
        for t in range(d):
            m[t] = (numa * (-mu[t]) + numb * X[i, t]) / den
            mn2 += m[t] * m[t]
        mn = np.sqrt(mn2)
        if mn < 1e-12:
            continue
        # project the Mobius sum into the boundary band exactly as
        # manifold.mobius_add does before taking atanh
        mn_eff = mn
        if sqc * mn_eff > _BAND:
            mn_eff = _BAND / sqc
        coef = (2.0 / (sqc * lam_mu)) * np.arctanh(sqc * mn_eff) / mn
        for t in range(d):
            step[t] += w[i] * coef * m[t] / wsum
    sn2 = 0.0
    for t in range(d):
        sn2 += step[t] * step[t]
    return np.sqrt(sn2)


@njit(cache=True)
def _exp_at(mu, v, c, out):
    # out = mu (+) tanh(sqrt(c)*lam*|v|/2) * v / (sqrt(c)*|v|)
    d = mu.shape[0]
    mu2 = 0.0
    for t in range(d):
        mu2 += mu[t] * mu[t]
    lam_mu = 2.0 / (1.0 - c * mu2)
    sqc = np.sqrt(c)
    vn2 = 0.0
    for t in range(d):
        vn2 += v[t] * v[t]
    vn = np.sqrt(vn2)
    if vn < 1e-300:
        for t in range(d):
            out[t] = mu[t]
        return
    th = np.tanh(sqc * lam_mu * vn / 2.0)
    g2 = 0.0
    gm = 0.0
    for t in range(d):
        out[t] = th * v[t] / (sqc * vn)
        g2 += out[t] * out[t]
        gm += mu[t] * out[t]
    numa = 1.0 + 2.0 * c * gm + c * g2
    numb = 1.0 - c * mu2
    den = 1.0 + 2.0 * c * gm + c * c * mu2 * g2
    if den < _MIN:
        den = _MIN
    on2 = 0.0
    for t in range(d):
        out[t] = (numa * mu[t] + numb * out[t]) / den
        on2 += out[t] * out[t]
    on = np.sqrt(on2)
    maxn = _BAND / sqc
    if on > maxn:
        for t in range(d):
            out[t] *= maxn / on


@njit(cache=True)
def _karcher_kernel(X, w, c, max_iters, tol):
    n, d = X.shape
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    mu = np.zeros(d)
    for i in range(n):
        for t in range(d):
            mu[t] += w[i] * X[i, t] / wsum
    step = np.empty(d)
    step2 = np.empty(d)
    cand = np.empty(d)
    scaled = np.empty(d)
    sn = _grad_step(X, w, c, wsum, mu, step)
    eta = 1.0
    iters = 0
    converged = False
    for _ in range(max_iters):
        iters += 1
        if sn < tol:
            converged = True
            break
        # the unit step 2-cycles for wide near-boundary spreads: the step
        # norm may still creep down while the iterate ping-pongs, so halve
        # eta both on norm growth and on step-direction reversal
        accepted = False
        for _ in range(60):
            for t in range(d):
                scaled[t] = eta * step[t]
            _exp_at(mu, scaled, c, cand)
            sn_new = _grad_step(X, w, c, wsum, cand, step2)
            if sn_new <= sn:
                dot = 0.0
                for t in range(d):
                    dot += step[t] * step2[t]
                    mu[t] = cand[t]
                    step[t] = step2[t]
                sn = sn_new
                if dot < 0.0:
                    eta *= 0.5
                elif eta < 1.0:
                    eta *= 2.0
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
    return mu, iters, converged


def karcher_flow_numba(X, w, k, max_iters, tol):
    mu, iters, converged = _karcher_kernel(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        abs(float(k)), int(max_iters), float(tol),
    )
    return mu, iters, converged


def karcher_flow_numpy(X, w, k, max_iters, tol):
    from . import manifold

    w = np.asarray(w, dtype=np.float64)
    wsum = w.sum()
    mu = (w[:, None] * X).sum(axis=0) / wsum

    def grad_step(m):
        logs = manifold.log_map(m[None, :], X, k)
        s = (w[:, None] * logs).sum(axis=0) / wsum
        return s, np.linalg.norm(s)

    step, sn = grad_step(mu)
    eta = 1.0
    iters = 0
    converged = False
    for _ in range(int(max_iters)):
        iters += 1
        if sn < tol:
            converged = True
            break
        accepted = False
        for _ in range(60):
            cand = manifold.exp_map(mu, eta * step, k)
            step2, sn_new = grad_step(cand)
            if sn_new <= sn:
                if float(step @ step2) < 0.0:
                    eta *= 0.5
                else:
                    eta = min(1.0, eta * 2.0)
                mu, step, sn = cand, step2, sn_new
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
    return mu, iters, converged


if USE_NUMBA:
    spmm = spmm_numba
    aggregate_rows = aggregate_rows_numba
    karcher_flow = karcher_flow_numba
else:
    spmm = spmm_scipy
    aggregate_rows = aggregate_rows_numpy
    karcher_flow = karcher_flow_numpy


def as_csr(adj):
    """Accept dense arrays or any scipy sparse matrix; return float64 CSR."""
    if sp.issparse(adj):
        return adj.tocsr().astype(np.float64)
    return sp.csr_matrix(np.asarray(adj, dtype=np.float64))
