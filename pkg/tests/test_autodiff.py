"""Engine tests: primitive gradients, the fused FC node, Adam, memory."""

import numpy as np
import pytest
import scipy.sparse as sp

from gyrognn import autodiff as ad
from gyrognn import layers
from gyrognn.autodiff import Tensor

# central-difference step: sqrt-ish of double precision, the usual sweet spot
FD_EPS = 1e-6


def numeric_grad(f, x, eps=FD_EPS):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return g


def check_op(make_loss, *leaves, tol=1e-6):
    """Gradcheck an op: analytic vs central differences on every leaf."""
    loss = make_loss()
    loss.backward()
    for leaf in leaves:
        num = numeric_grad(lambda: make_loss().item(), leaf.data)
        rel = np.abs(leaf.grad - num) / np.maximum(np.abs(num), 1e-4)
        assert rel.max() <= tol, rel.max()


# ---------------------------------------------------------------------------
# forward identities
# ---------------------------------------------------------------------------

def test_add_identity(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(ad.add(x, 0.0).data, x.data)


def test_matmul_identity(rng):
    x = Tensor(rng.normal(size=(4, 4)))
    np.testing.assert_allclose(ad.matmul(Tensor(np.eye(4)), x).data, x.data)


def test_tanh_atanh_inverse(rng):
    x = rng.uniform(-0.999, 0.999, size=200)
    out = ad.tanh(ad.atanh(Tensor(x)))
    assert np.abs(out.data - x).max() <= 1e-12


def test_square_derivative_at_three():
    x = Tensor(np.array(3.0), requires_grad=True)
    ad.mul(x, x).backward()
    assert x.grad == pytest.approx(6.0, abs=1e-12)


def test_matmul_norm_gradient_formula(rng):
    W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    h = rng.normal(size=(2, 1))
    y = ad.matmul(W, Tensor(h))
    ad.sum(ad.mul(y, y)).backward()
    np.testing.assert_allclose(W.grad, 2.0 * (W.data @ h) @ h.T, atol=1e-12)


# ---------------------------------------------------------------------------
# per-op gradchecks
# ---------------------------------------------------------------------------

def test_elementwise_op_gradients(rng):
    x = Tensor(rng.uniform(0.2, 0.8, size=(4, 3)), requires_grad=True)
    y = Tensor(rng.uniform(0.2, 0.8, size=(4, 3)), requires_grad=True)
    w = rng.normal(size=(4, 3))

    def loss():
        t = ad.div(ad.mul(ad.add(x, y), ad.sub(x, 0.1)), ad.add(y, 1.0))
        t = ad.add(ad.exp(ad.mul(t, 0.3)), ad.log(ad.add(x, 0.5)))
        t = ad.add(t, ad.sqrt(ad.add(ad.mul(x, x), 0.1)))
        t = ad.add(t, ad.tanh(y))
        t = ad.add(t, ad.atanh(ad.mul(x, 0.5)))
        return ad.sum(ad.mul(t, Tensor(w)))

    check_op(loss, x, y)


def test_reduction_and_broadcast_gradients(rng):
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    w = rng.normal(size=(5, 1))

    def loss():
        t = ad.add(x, b)
        t = ad.sub(t, ad.mean(t, axis=1, keepdims=True))
        s = ad.sum(ad.mul(t, t), axis=1, keepdims=True)
        return ad.sum(ad.mul(ad.sqrt(ad.add(s, 0.5)), Tensor(w)))

    check_op(loss, x, b)


def test_relu_and_clamp_gradients(rng):
    # keep samples away from the kink so finite differences are valid
    x = Tensor(rng.choice([-1.5, -0.7, 0.4, 1.2], size=(6, 4)),
               requires_grad=True)
    w = rng.normal(size=(6, 4))

    def loss():
        t = ad.add(ad.relu(x), ad.clamp(x, -1.0, 1.0))
        return ad.sum(ad.mul(t, Tensor(w)))

    check_op(loss, x)


def test_norm2_gradient(rng):
    x = Tensor(rng.uniform(0.2, 0.9, size=(5, 3)), requires_grad=True)
    w = rng.normal(size=(5, 1))
    check_op(lambda: ad.sum(ad.mul(ad.norm2(x), Tensor(w))), x)


def test_take_gradient_scatters_duplicates(rng):
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    idx = (np.array([0, 0, 2]), np.array([1, 1, 0]))
    ad.sum(ad.take(x, idx)).backward()
    expect = np.zeros((4, 3))
    expect[0, 1] = 2.0
    expect[2, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expect)


def test_spmm_matches_dense_and_gradients(rng):
    A = sp.random(6, 6, density=0.4, random_state=0, format="csr")
    A = ((A + A.T) * 0.5).tocsr()
    x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    out = ad.spmm(A, x)
    np.testing.assert_allclose(out.data, A.toarray() @ x.data, atol=1e-12)
    w = rng.normal(size=(6, 3))
    ad.sum(ad.mul(out, Tensor(w))).backward()
    np.testing.assert_allclose(x.grad, A.toarray().T @ w, atol=1e-12)


def test_fused_fc_matches_composed_path(rng):
    c = 1.0
    h = Tensor(rng.uniform(-0.4, 0.4, size=(6, 5)), requires_grad=True)
    p = layers.FcParams(5, 4, rng, name="t")
    p.b1.data[:] = rng.normal(0, 0.3, size=4)
    p.b2.data[:] = rng.normal(0, 0.3, size=4)
    fused = ad.ball_fc(h, p.W, p.b1, p.b2, c)
    omega = layers.phi(Tensor(h.data), p, -c)
    s = ad.sum(ad.mul(omega, omega), axis=1, keepdims=True)
    ref = ad.div(omega, ad.add(1.0, ad.sqrt(ad.add(ad.mul(c, s), 1.0))))
    np.testing.assert_array_equal(fused.data, ref.data)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_fused_fc_gradients(c, rng):
    h = Tensor(rng.uniform(-0.4, 0.4, size=(6, 5)) / np.sqrt(c),
               requires_grad=True)
    p = layers.FcParams(5, 4, rng, name="t")
    p.b1.data[:] = rng.normal(0, 0.3, size=4)
    p.b2.data[:] = rng.normal(0, 0.3, size=4)
    w = rng.normal(size=(6, 4))

    def loss():
        return ad.sum(ad.mul(ad.ball_fc(h, p.W, p.b1, p.b2, c), Tensor(w)))

    check_op(loss, h, p.W, p.b1, p.b2, tol=1e-5)


def test_fused_fc_dropout_mask_gradient(rng):
    c = 1.0
    h = Tensor(rng.uniform(-0.3, 0.3, size=(5, 4)), requires_grad=True)
    p = layers.FcParams(4, 3, rng, name="t")
    mask = (rng.random((5, 3)) < 0.5) / 0.5

    def loss():
        return ad.sum(ad.ball_fc(h, p.W, p.b1, p.b2, c, mask))

    check_op(loss, h, p.W, tol=1e-5)


def test_atanh_boundary_gradient_is_finite():
    x = Tensor(np.array([1.0 - 1e-15]), requires_grad=True)
    out = ad.atanh(x)
    out.backward()
    assert np.isfinite(out.data).all()
    assert np.isfinite(x.grad).all()


# ---------------------------------------------------------------------------
# composite gradchecks
# ---------------------------------------------------------------------------

def test_linear_model_gradient(rng):
    W = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    x = rng.normal(size=(8, 4))
    y = rng.normal(size=(8, 3))

    def loss():
        pred = ad.add(ad.matmul(Tensor(x), ad.transpose(W)), b)
        diff = ad.sub(pred, Tensor(y))
        return ad.mean(ad.mul(diff, diff))

    loss_t = loss()
    loss_t.backward()
    for leaf in (W, b):
        # the loss is quadratic, so central differences carry no truncation
        # error and a wide step drives round-off below 1e-9
        num = numeric_grad(lambda: loss().item(), leaf.data, eps=1e-4)
        rel = np.abs(leaf.grad - num) / np.maximum(np.abs(num), 1e-3)
        assert rel.max() <= 1e-9


def test_fc_distance_loss_gradient(rng):
    k = -1.0
    h = Tensor(rng.uniform(-0.3, 0.3, size=(6, 4)), requires_grad=True)
    p = layers.FcParams(4, 4, rng, name="t")
    target = rng.uniform(-0.3, 0.3, size=(6, 4))

    def loss():
        out = layers.fc_transform(h, p, k)
        return ad.mean(ad.mul(layers.distance(out, Tensor(target), k),
                              layers.distance(out, Tensor(target), k)))

    loss_t = loss()
    loss_t.backward()
    for leaf in (h, p.W, p.b1, p.b2):
        num = numeric_grad(lambda: loss().item(), leaf.data)
        rel = np.abs(leaf.grad - num) / np.maximum(np.abs(num), 1e-4)
        assert rel.max() <= 1e-4


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = ad.Adam([w], lr=0.1)
    w.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_adam_step_descends():
    w = Tensor(np.array(1.0), requires_grad=True)
    opt = ad.Adam([w], lr=0.1)
    ad.mul(w, w).backward()
    opt.step()
    assert w.data < 1.0


def test_adam_converges_on_quadratic_bowl():
    w = Tensor(np.array([3.0, -2.0, 0.5]), requires_grad=True)
    target = np.array([-1.0, 0.5, 2.0])
    opt = ad.Adam([w], lr=0.05)
    for step in range(5000):
        opt.zero_grad()
        diff = ad.sub(w, Tensor(target))
        ad.sum(ad.mul(diff, diff)).backward()
        opt.step()
        if np.abs(w.data - target).max() <= 1e-6:
            break
    assert np.abs(w.data - target).max() <= 1e-6
    assert step < 4999


def test_adam_decay_hits_only_listed_params():
    w = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = ad.Adam([w, b], lr=0.1, weight_decay=0.5, decay_params=[w])
    w.grad = np.zeros(1)
    b.grad = np.zeros(1)
    opt.step()
    assert w.data[0] == pytest.approx(1.0 - 0.1 * 0.5)
    assert b.data[0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# graph memory and checks
# ---------------------------------------------------------------------------

def test_backward_severs_graph_links(rng):
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    out = ad.sum(ad.mul(ad.add(x, 1.0), x))
    mid = out._prev
    assert mid
    out.backward()
    assert out._prev == () and out._backward is None


def test_release_severs_graph_without_grads(rng):
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    out = ad.sum(ad.mul(ad.add(x, 1.0), x))
    out.release()
    assert out._prev == () and out._backward is None
    assert x.grad is None
    assert np.isfinite(out.data)


def test_finite_check_raises_and_names_op():
    x = Tensor(np.array([-1.0]))
    with pytest.raises(FloatingPointError, match="log"):
        ad.log(x)


def test_atanh_clamps_out_of_domain_inputs():
    # atanh treats anything within 1e-12 of +-1 (or beyond) as a boundary
    # value instead of producing non-finite output
    out = ad.atanh(Tensor(np.array([2.0])))
    assert out.data[0] == pytest.approx(np.arctanh(1.0 - 1e-12))


def test_finite_check_toggle():
    ad.set_finite_checks(False)
    try:
        out = ad.log(Tensor(np.array([-1.0])))
        assert np.isnan(out.data).all()
    finally:
        ad.set_finite_checks(True)
