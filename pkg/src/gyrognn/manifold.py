"""Poincare ball and Lorentz (hyperboloid) model primitives, curvature k < 0.

Conventions used throughout the package:

  * arrays are batch-first: the last axis is the coordinate axis, any number
    of leading axes is allowed and broadcast like numpy.
  * the ball of curvature k has radius 1/sqrt(|k|); points are kept strictly
    inside the boundary band ``norm <= (1 - BALL_EPS)/sqrt(|k|)``.
  * Lorentz points are (n+1)-vectors ``[time, space...]`` with
    ``<x,x>_L = 1/k`` and time > 0.
  * all functions are pure; nothing is mutated in place.

Everything here is plain float64 numpy. The differentiable re-implementations
used inside the training graph live in ``layers``; this module is the
numerically hardened ground truth that the tests and benchmarks rely on.
"""

import numpy as np

# boundary band for 64-bit floats; the lower bound guards 0/0 in downstream
# formulas, the upper bound keeps atanh/div arguments finite
BALL_EPS = 1e-5
MIN_NORM = 1e-15
ZERO_TOL = 1e-12
# atanh is only defined on (-1, 1); clamp just inside
ATANH_CLAMP = 1.0 - 1e-15


def _check_curvature(k):
    if not np.isfinite(k) or k >= 0:
        raise ValueError("curvature must be a finite negative scalar, got %r" % (k,))
    return float(k)


def ball_radius(k):
    """Radius 1/sqrt(|k|) of the Poincare ball of curvature k."""
    return 1.0 / np.sqrt(abs(_check_curvature(k)))


def norm(x):
    return np.linalg.norm(x, axis=-1, keepdims=True)


def conformal_factor(x, k):
    """lambda_x = 2 / (1 + k ||x||^2); equals 2 at the origin, grows to
    infinity at the boundary for k < 0."""
    k = _check_curvature(k)
    return 2.0 / (1.0 + k * np.sum(x * x, axis=-1, keepdims=True))


def _project(x, k):
    # upper-boundary clip only: rescale points that drifted onto/over the
    # boundary back to norm (1 - BALL_EPS)/sqrt(|k|), direction preserved
    maxnorm = (1.0 - BALL_EPS) / np.sqrt(abs(k))
    n = norm(x)
    scale = np.where(n >= maxnorm, maxnorm / np.maximum(n, MIN_NORM), 1.0)
    return x * scale


def clip(x, k, a=MIN_NORM, eps=BALL_EPS):
    """Band clipping: rescale to norm a when 0 < ||x|| < a and to
    (1-eps)/sqrt(|k|) when ||x|| >= (1-eps)/sqrt(|k|); otherwise unchanged.

    Exact zero vectors have no direction to preserve and pass through
    untouched (the origin is a valid ball point).
    """
    k = _check_curvature(k)
    if a <= 0:
        raise ValueError("lower clip bound must be positive")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite components in clip input")
    maxnorm = (1.0 - eps) / np.sqrt(abs(k))
    n = norm(x)
    nonzero = np.where(n > 0, n, 1.0)
    scale = np.ones_like(n)
    scale = np.where((n > 0) & (n < a), a / nonzero, scale)
    scale = np.where(n >= maxnorm, maxnorm / nonzero, scale)
    return x * scale


def mobius_add(x, y, k):
    """Mobius addition

        x (+) y = ((1 - 2k<x,y> - k||y||^2) x + (1 + k||x||^2) y)
                  / (1 - 2k<x,y> + k^2 ||x||^2 ||y||^2)
    """
    k = _check_curvature(k)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    num = (1.0 - 2.0 * k * xy - k * y2) * x + (1.0 + k * x2) * y
    den = 1.0 - 2.0 * k * xy + k * k * x2 * y2
    return _project(num / np.maximum(den, MIN_NORM), k)


def mobius_sub(x, y, k):
    """x (-) y = x (+) (-y)."""
    return mobius_add(x, -np.asarray(y), k)


def exp_map(x, v, k):
    """exp_x(v) = x (+) ( tanh(sqrt(|k|) lambda_x ||v|| / 2) v / (sqrt(|k|)||v||) ).

    Zero tangent vectors (norm < ZERO_TOL) return x: the closed form is 0/0
    there but the limit is the base point.
    """
    k = _check_curvature(k)
    c = abs(k)
    vn = norm(v)
    lam = conformal_factor(x, k)
    t = np.tanh(np.sqrt(c) * lam * vn / 2.0)
    second = t * v / np.maximum(np.sqrt(c) * vn, MIN_NORM)
    out = mobius_add(x, second, k)
    return np.where(vn < ZERO_TOL, np.broadcast_to(x, out.shape), out)


def log_map(x, y, k):
    """log_x(y) = (2 / (sqrt(|k|) lambda_x)) atanh(sqrt(|k|) ||-x (+) y||)
                  (-x (+) y) / ||-x (+) y||

    Returns the zero vector when y coincides with x (norm < ZERO_TOL).
    """
    k = _check_curvature(k)
    c = abs(k)
    d = mobius_add(-np.asarray(x), y, k)
    dn = norm(d)
    lam = conformal_factor(x, k)
    arg = np.minimum(np.sqrt(c) * dn, ATANH_CLAMP)
    out = (2.0 / (np.sqrt(c) * lam)) * np.arctanh(arg) * d / np.maximum(dn, MIN_NORM)
    return np.where(dn < ZERO_TOL, np.zeros_like(out), out)


def exp_map0(v, k):
    """exp map based at the origin: tanh(sqrt(|k|)||v||) v / (sqrt(|k|)||v||)."""
    k = _check_curvature(k)
    c = abs(k)
    vn = norm(v)
    t = np.tanh(np.sqrt(c) * vn)
    out = _project(t * v / np.maximum(np.sqrt(c) * vn, MIN_NORM), k)
    return np.where(vn < ZERO_TOL, np.broadcast_to(np.zeros_like(v), out.shape), out)


def log_map0(y, k):
    """log map based at the origin: atanh(sqrt(|k|)||y||) y / (sqrt(|k|)||y||)."""
    k = _check_curvature(k)
    c = abs(k)
    yn = norm(y)
    arg = np.minimum(np.sqrt(c) * yn, ATANH_CLAMP)
    out = np.arctanh(arg) * y / np.maximum(np.sqrt(c) * yn, MIN_NORM)
    return np.where(yn < ZERO_TOL, np.zeros_like(y), out)


def scalar_mul(r, x, k):
    """Mobius scalar multiplication r (x) x = exp_0(r log_0(x))."""
    k = _check_curvature(k)
    r = np.asarray(r, dtype=np.float64)
    if r.ndim > 0:
        r = r[..., None]
    return exp_map0(r * log_map0(x, k), k)


def matvec_mul(M, x, k):
    """Mobius matrix-vector multiplication M (x) x = exp_0(M log_0(x)).

    M has shape (d_out, d_in); a zero image M log_0(x) maps to the origin.
    """
    k = _check_curvature(k)
    v = log_map0(x, k) @ np.asarray(M).T
    return exp_map0(v, k)


def poincare_distance(x, y, k):
    """d(x, y) = (2/sqrt(|k|)) atanh(sqrt(|k|) || -x (+) y ||)."""
    k = _check_curvature(k)
    c = abs(k)
    dn = norm(mobius_add(-np.asarray(x), y, k))
    arg = np.minimum(np.sqrt(c) * dn, ATANH_CLAMP)
    return (2.0 / np.sqrt(c)) * np.arctanh(arg)[..., 0]


def gyration(a, b, v, k):
    """gyr[a, b] v = -(a (+) b) (+) (a (+) (b (+) v)).

    gyr[a, b] is a linear (orthogonal) map in v, but the Mobius composition
    above is only clip-safe for v inside the ball; arbitrary vectors are
    scaled in, gyrated, and scaled back out.
    """
    v = np.asarray(v, dtype=np.float64)
    vn = norm(v)
    s = np.minimum(0.1 * ball_radius(k) / np.maximum(vn, MIN_NORM), 1.0)
    inner = mobius_add(b, s * v, k)
    out = mobius_add(-mobius_add(a, b, k), mobius_add(a, inner, k), k)
    return out / s


def parallel_transport(x, y, v, k):
    """PT_{x->y}(v) = (lambda_x / lambda_y) gyr[y, -x] v.

    v is a tangent vector at x (an unconstrained d-vector in the ball
    model); the result is tangent at y with the same Riemannian norm.
    """
    k = _check_curvature(k)
    lam_x = conformal_factor(x, k)
    lam_y = conformal_factor(y, k)
    return (lam_x / lam_y) * gyration(y, -np.asarray(x), v, k)


def manifold_relu(x):
    """Componentwise max(x, 0); never increases the norm, so ball membership
    is preserved."""
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# Lorentz model
# ---------------------------------------------------------------------------

def lorentz_inner(u, v):
    """Lorentzian inner product -u_t v_t + <u_s, v_s>."""
    uv = np.sum(u * v, axis=-1, keepdims=True)
    return (uv - 2.0 * u[..., :1] * v[..., :1])[..., 0]


def lorentz_origin(n, k):
    """Hyperboloid pole (1/sqrt(|k|), 0, ..., 0) as an (n+1)-vector."""
    k = _check_curvature(k)
    o = np.zeros(n + 1)
    o[0] = 1.0 / np.sqrt(abs(k))
    return o


def lorentz_distance(u, v, k):
    """d_L(u, v) = (1/sqrt(|k|)) arccosh(k <u, v>_L).

    The argument is floored at exactly 1.0: that is enough to absorb the
    round-off that puts k<u,v>_L marginally below 1 for near-identical
    points, and unlike a 1+1e-12 floor it keeps d(x, x) = 0 exact.
    """
    k = _check_curvature(k)
    arg = np.maximum(k * lorentz_inner(u, v), 1.0)
    return np.arccosh(arg) / np.sqrt(abs(k))


def lorentz_exp_map(x, v, k):
    """exp_x(v) = cosh(sqrt(|k|)||v||_L) x + v sinh(sqrt(|k|)||v||_L) / (sqrt(|k|)||v||_L)."""
    k = _check_curvature(k)
    c = abs(k)
    vn2 = lorentz_inner(v, v)[..., None]
    vn = np.sqrt(np.maximum(vn2, 0.0))
    a = np.sqrt(c) * vn
    out = np.cosh(a) * x + v * np.sinh(a) / np.maximum(a, MIN_NORM)
    return np.where(vn < ZERO_TOL, np.broadcast_to(x, out.shape), out)


def lorentz_log_map(x, y, k):
    """log_x(y) = (arccosh(k<x,y>_L) / sinh(arccosh(k<x,y>_L))) (y - k<x,y>_L x)."""
    k = _check_curvature(k)
    xy = lorentz_inner(x, y)[..., None]
    t = np.arccosh(np.maximum(k * xy, 1.0))
    coef = t / np.maximum(np.sinh(t), MIN_NORM)
    return coef * (y - k * xy * x)


def lorentz_parallel_transport(x, y, v, k):
    """PT_{x->y}(v) = v - (k <y, v>_L / (1 + k <x, y>_L)) (x + y)."""
    k = _check_curvature(k)
    yv = lorentz_inner(y, v)[..., None]
    xy = lorentz_inner(x, y)[..., None]
    return v - (k * yv / (1.0 + k * xy)) * (x + y)


def project_D_to_L(x, k):
    """Stereographic lift of a ball point to the hyperboloid:

        time  = (1 - k||x||^2) / (sqrt(|k|)(1 + k||x||^2))
        space = 2x / (1 + k||x||^2)
    """
    k = _check_curvature(k)
    c = np.sqrt(abs(k))
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    den = 1.0 + k * x2
    time = (1.0 - k * x2) / (c * den)
    space = 2.0 * x / den
    return np.concatenate([time, space], axis=-1)


def project_L_to_D(z, k):
    """Inverse stereographic projection z_s / (1 + sqrt(|k|) z_t)."""
    k = _check_curvature(k)
    c = np.sqrt(abs(k))
    return _project(z[..., 1:] / (1.0 + c * z[..., :1]), k)


# ---------------------------------------------------------------------------
# membership checks used by tests and assertion hooks
# ---------------------------------------------------------------------------

def in_ball(x, k, slack=1e-12):
    k = _check_curvature(k)
    bound = (1.0 - BALL_EPS) / np.sqrt(abs(k)) + slack
    return bool(np.all(norm(x) <= bound) and np.all(np.isfinite(x)))


def on_hyperboloid(z, k, tol=1e-9):
    k = _check_curvature(k)
    constraint = np.abs(lorentz_inner(z, z) - 1.0 / k)
    return bool(np.all(constraint <= tol) and np.all(z[..., 0] > 0))
