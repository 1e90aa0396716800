"""Differentiable Poincare-ball layers built on the autodiff engine.

The efficient FC transform maps through the hyperboloid implicitly: a
Euclidean map phi produces the spatial part omega, and the closed-form
normalization omega/(1+sqrt(|k| |omega|^2 + 1)) lands the result back in
the ball with norm < 1/sqrt(|k|) for ANY real omega — which is what makes
dropout directly on omega safe.

Residual connections are two-point gyromidpoints; weight alignment blends
a layer's FC output with its input under the decaying schedule
beta_l = ln(lambda/l + 1).
"""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MIN_DEN = 1e-15
BALL_EPS = 1e-5


def beta_schedule(lam, layer):
    """Alignment strength for 1-based layer index: ln(lambda/layer + 1)."""
    if layer < 1:
        raise ValueError("layer index is 1-based")
    return math.log(lam / layer + 1.0)


class FcParams:
    """Euclidean parameters of one ball FC layer: W (d_out x d_in), b1, b2."""

    def __init__(self, d_in, d_out, rng, name=""):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.W = Tensor(rng.uniform(-limit, limit, size=(d_out, d_in)),
                        requires_grad=True, name=name + ".W")
        self.b1 = Tensor(np.zeros(d_out), requires_grad=True, name=name + ".b1")
        self.b2 = Tensor(np.zeros(d_out), requires_grad=True, name=name + ".b2")

    def params(self):
        return [self.W, self.b1, self.b2]


def _sqnorm(x):
    return ad.sum(ad.mul(x, x), axis=1, keepdims=True)


def _project_rail(x, k):
    """Scale rows back into the boundary band; the factor is detached so
    gradients pass straight through the safety rail."""
    c = abs(float(k))
    maxn = (1.0 - BALL_EPS) / math.sqrt(c)
    n = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if not np.any(n > maxn):
        return x
    scale = np.where(n > maxn, maxn / np.maximum(n, MIN_DEN), 1.0)
    return ad.mul(x, Tensor(scale))


# ---------------------------------------------------------------------------
# differentiable ball primitives
# ---------------------------------------------------------------------------

def mobius_add(x, y, k):
    c = abs(float(k))
    xy = ad.sum(ad.mul(x, y), axis=1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = ad.add(ad.mul(ad.add(ad.add(1.0, ad.mul(2.0 * c, xy)), ad.mul(c, y2)), x),
                 ad.mul(ad.sub(1.0, ad.mul(c, x2)), y))
    den = ad.add(ad.add(1.0, ad.mul(2.0 * c, xy)),
                 ad.mul(c * c, ad.mul(x2, y2)))
    return ad.div(num, ad.clamp(den, MIN_DEN, None))


def exp0(v, k):
    c = abs(float(k))
    sq = math.sqrt(c)
    vn = ad.clamp(ad.norm2(v), MIN_DEN, None)
    return ad.mul(ad.div(ad.tanh(ad.mul(sq, vn)), ad.mul(sq, vn)), v)


def log0(y, k):
    c = abs(float(k))
    sq = math.sqrt(c)
    yn = ad.clamp(ad.norm2(y), MIN_DEN, None)
    return ad.mul(ad.div(ad.atanh(ad.mul(sq, yn)), ad.mul(sq, yn)), y)


def distance(x, y, k):
    """Rowwise geodesic distance 2/sqrt(c) atanh(sqrt(c) |(-x) (+) y|)."""
    c = abs(float(k))
    sq = math.sqrt(c)
    m = mobius_add(ad.mul(x, -1.0), y, k)
    mn = ad.norm2(m)
    return ad.mul(2.0 / sq, ad.atanh(ad.mul(sq, mn)))


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def phi(h, p, k):
    """Euclidean stage of the FC transform (the hyperboloid spatial slot)."""
    c = abs(float(k))
    sq = math.sqrt(c)
    if p.W.shape[1] != h.shape[1]:
        raise ValueError("phi: W columns must match input dim")
    h2 = _sqnorm(h)
    num = ad.add(ad.mul(2.0 * sq, ad.matmul(h, ad.transpose(p.W))),
                 ad.mul(p.b1, ad.add(1.0, ad.mul(c, h2))))
    den = ad.mul(sq, ad.sub(1.0, ad.mul(c, h2)))
    return ad.add(ad.div(num, den), p.b2)


def fc_transform(h, p, k, dropout_p=0.0, training=False, rng=None):
    """Ball FC layer: omega = phi(h) (dropout here), then the closed-form
    normalization whose output norm is < 1/sqrt(|k|) unconditionally.

    Runs as one fused graph node (ad.ball_fc); phi() above spells out the
    Euclidean stage the fused kernel computes."""
    c = abs(float(k))
    if p.W.shape[1] != h.shape[1]:
        raise ValueError("fc_transform: W columns must match input dim")
    mask = None
    if training and dropout_p > 0.0:
        if rng is None:
            raise ValueError("training dropout needs an rng")
        keep = 1.0 - dropout_p
        mask = (rng.random((h.shape[0], p.W.shape[0])) < keep) / keep
    return ad.ball_fc(h, p.W, p.b1, p.b2, c, mask)


def hnn_transform(h, W, b, k):
    """Baseline transform exp_0(W log_0(h)) (+) b."""
    if W.shape[1] != h.shape[1]:
        raise ValueError("hnn_transform: W columns must match input dim")
    y = exp0(ad.matmul(log0(h, k), ad.transpose(W)), k)
    bb = ad.broadcast(b, (1, b.shape[0])) if b.ndim == 1 else b
    return _project_rail(mobius_add(y, bb, k), k)


# ---------------------------------------------------------------------------
# residuals and regularization
# ---------------------------------------------------------------------------

def _half_scalar_mul(u, k):
    # (1/2) (x) u = u / (1 + sqrt(1 - c|u|^2)), closed form
    c = abs(float(k))
    u2 = _sqnorm(u)
    root = ad.sqrt(ad.clamp(ad.sub(1.0, ad.mul(c, u2)), MIN_DEN, None))
    return ad.div(u, ad.add(1.0, root))


def _lambda(x, k):
    c = abs(float(k))
    return ad.div(2.0, ad.clamp(ad.sub(1.0, ad.mul(c, _sqnorm(x))), MIN_DEN, None))


def aggregate(adj, h, k):
    """Differentiable neighborhood aggregation: rowwise gyromidpoint of h
    under the nonnegative sparse weights adj (normalized adjacency)."""
    lam = _lambda(h, k)
    num = ad.spmm(adj, ad.mul(lam, h))
    den = ad.spmm(adj, ad.sub(lam, 1.0))
    u = ad.div(num, ad.clamp(den, MIN_DEN, None))
    return _project_rail(_half_scalar_mul(u, k), k)


def residual(h1, h2, w1, w2, k):
    """Rowwise two-point gyromidpoint of (h1, h2) with weights (w1, w2)."""
    if w1 == 0.0 and w2 == 0.0:
        raise ValueError("residual weights cannot both be zero")
    if h1.shape != h2.shape:
        raise ValueError("residual inputs must share a shape")
    lam1 = _lambda(h1, k)
    lam2 = _lambda(h2, k)
    num = ad.add(ad.mul(w1, ad.mul(lam1, h1)), ad.mul(w2, ad.mul(lam2, h2)))
    den = ad.add(ad.mul(abs(w1), ad.sub(lam1, 1.0)),
                 ad.mul(abs(w2), ad.sub(lam2, 1.0)))
    u = ad.div(num, ad.clamp(den, MIN_DEN, None))
    return _project_rail(_half_scalar_mul(u, k), k)


def initial_residual(h0, h_agg, alpha, k):
    """Blend the first-layer embedding back in: f_HR(h0, h_agg; a, 1-a)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return residual(h0, h_agg, alpha, 1.0 - alpha, k)


def weight_alignment(h_hat, p, beta, k, dropout_p=0.0, training=False, rng=None):
    """f_HR(fc(h_hat), h_hat; beta, 1-beta): beta -> 0 turns the layer into
    the identity, so deep stacks stay well-conditioned."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    fc = fc_transform(h_hat, p, k, dropout_p, training, rng)
    return residual(fc, h_hat, beta, 1.0 - beta, k)


def root_node(H, k):
    """Unweighted gyromidpoint of all rows, shape (1, d)."""
    if H.shape[0] < 1:
        raise ValueError("root_node needs at least one row")
    lam = _lambda(H, k)
    num = ad.sum(ad.mul(lam, H), axis=0, keepdims=True)
    den = ad.clamp(ad.sum(ad.sub(lam, 1.0), axis=0, keepdims=True), MIN_DEN, None)
    return _project_rail(_half_scalar_mul(ad.div(num, den), k), k)


def feature_reg_loss(H, k):
    """1 / sqrt(mean_i |h_i (-) root|^2), capped at 1e8 when every point
    collapses onto the root; small when embeddings spread outward."""
    root = root_node(H, k)
    aligned = mobius_add(H, ad.mul(root, -1.0), k)
    msq = ad.mean(ad.sum(ad.mul(aligned, aligned), axis=1))
    # flooring the mean square at 1e-16 is exactly the 1e8 cap
    return ad.div(1.0, ad.sqrt(ad.clamp(msq, 1e-16, None)))
