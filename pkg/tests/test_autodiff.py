import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kneeattn import _kernels
from kneeattn import autodiff as ad
from kneeattn.autodiff import ShapeError, Tensor, check_gradients

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_and_hand_values():
    m = np.array([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    assert ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_gradient_against_finite_differences():
    a, b = leaf([[1.0, 2.0]]), leaf([[3.0], [4.0]])
    ad.sum(ad.matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, [[3.0, 4.0]], rtol=1e-12)
    num = ad.numerical_gradient(lambda: ad.sum(ad.matmul(a, b)), a)
    np.testing.assert_allclose(a.grad, num, rtol=1e-8)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# -- softmax ----------------------------------------------------------------

def test_softmax_hand_cases():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, np.log(2)]])).data, [[1 / 3, 2 / 3]], rtol=1e-14)
    y = ad.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [[1.0, 0.0]], atol=1e-12)


def test_softmax_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        ad.softmax_rows(Tensor([[1.0, 2.0]]), scale=0.0)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=7), elements=st.floats(-1e6, 1e6)),
       st.floats(0.01, 100))
def test_softmax_rows_are_distributions(x, scale):
    y = ad.softmax_rows(Tensor(x), scale).data
    assert np.all((y >= 0) & (y <= 1))
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)


# -- elementwise ------------------------------------------------------------

def test_tanh_sigmoid_at_zero():
    for op, value, slope in ((ad.tanh, 0.0, 1.0), (ad.sigmoid, 0.5, 0.25)):
        x = leaf([0.0])
        y = op(x)
        assert y.data[0] == value
        ad.sum(y).backward()
        assert x.grad[0] == pytest.approx(slope, abs=1e-15)


def test_concat_cols_shape():
    out = ad.concat_cols([Tensor(np.ones((3, 2))), Tensor(np.zeros((3, 5)))])
    assert out.shape == (3, 7)
    with pytest.raises(ShapeError):
        ad.concat_cols([Tensor(np.ones((3, 2))), Tensor(np.zeros((4, 5)))])


def test_broadcast_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "exp", "square", "add", "sub", "mul", "scale",
                                  "concat", "index", "transpose", "sum", "mean", "sqrt", "reshape"])
def test_elementwise_gradients(name):
    rng = np.random.default_rng(3)
    a = leaf(rng.normal(size=(3, 4)))
    b = leaf(rng.normal(size=(3, 4)))
    pos = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))
    w = rng.normal(size=(3, 4))
    fns = {
        "tanh": lambda: ad.tanh(a), "sigmoid": lambda: ad.sigmoid(a), "exp": lambda: ad.exp(a),
        "square": lambda: ad.square(a), "add": lambda: ad.add(a, b), "sub": lambda: ad.sub(a, b),
        "mul": lambda: ad.mul(a, b), "scale": lambda: ad.scale(a, -2.5), "sqrt": lambda: ad.sqrt(pos),
        "concat": lambda: ad.concat([a, b], axis=0)[:3] * 2.0 + ad.concat([a, b], axis=1)[:, 4:],
        "index": lambda: ad.index(a, (slice(None), [0, 0, 2, 3])).reshape(3, 4),
        "transpose": lambda: ad.transpose(ad.matmul(a, ad.transpose(b))).reshape(3, 3)[:, :1] * a,
        "sum": lambda: ad.sum(a, axis=0, keepdims=True) * b, "mean": lambda: ad.mean(a, axis=1, keepdims=True) * b,
        "reshape": lambda: ad.reshape(a, (4, 3)).reshape(3, 4) * b,
    }
    loss = lambda: ad.sum(ad.mul(fns[name](), Tensor(w)))  # noqa: E731
    errs = check_gradients(loss, {"a": a, "b": b, "pos": pos})
    assert max(errs.values()) < 1e-6


# -- conv and pooling ---------------------------------------------------------

def test_conv1d_hand_values():
    x = Tensor([[1.0, 2.0, 3.0, 4.0]])
    np.testing.assert_array_equal(ad.conv1d(x, Tensor([[[1.0, 1.0]]])).data, [[3.0, 5.0, 7.0]])
    np.testing.assert_array_equal(ad.conv1d(x, Tensor([[[1.0, 0.0]]]), stride=2).data, [[1.0, 3.0]])


def test_conv1d_too_short():
    with pytest.raises(ShapeError):
        ad.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 3))))


def test_conv1d_matches_brute_force_and_gradients():
    rng = np.random.default_rng(0)
    x, k, b = leaf(rng.normal(size=(2, 8))), leaf(rng.normal(size=(3, 2, 3))), leaf(rng.normal(size=3))
    for stride in (1, 2, 3):
        out = ad.conv1d(x, k, b, stride=stride).data
        l_out = (8 - 3) // stride + 1
        brute = np.array([[sum(k.data[o, c, j] * x.data[c, i * stride + j] for c in range(2) for j in range(3))
                           + b.data[o] for i in range(l_out)] for o in range(3)])
        np.testing.assert_allclose(out, brute, rtol=1e-13)
        w = rng.normal(size=out.shape)
        errs = check_gradients(lambda: ad.sum(ad.conv1d(x, k, b, stride=stride) * Tensor(w)), {"x": x, "k": k, "b": b})
        assert max(errs.values()) < 1e-6


def test_max_pool_examples():
    np.testing.assert_array_equal(ad.max_pool1d(Tensor([[1.0, 3.0, 2.0, 2.0]]), 2).data, [[3.0, 2.0]])
    x = leaf([[5.0, 5.0]])
    ad.sum(ad.max_pool1d(x, 2)).backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0]])


@given(hnp.arrays(np.float64, (2, 12), elements=finite), st.integers(1, 5))
def test_max_pool_equals_brute_force(x, window):
    out = ad.max_pool1d(Tensor(x), window).data
    n = 12 // window
    brute = np.array([[max(row[i * window:(i + 1) * window]) for i in range(n)] for row in x])
    np.testing.assert_array_equal(out, brute)


# -- backward semantics -------------------------------------------------------

def test_backward_sum_and_square():
    w = leaf(np.arange(6.0).reshape(2, 3))
    ad.sum(w).backward()
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))
    v = leaf([1.0, -2.0])
    ad.sum(v * v).backward()
    np.testing.assert_array_equal(v.grad, [2.0, -4.0])


def test_backward_accumulates_and_requires_scalar():
    v = leaf([1.0, -2.0])
    for _ in range(2):
        ad.sum(v * v).backward()
    np.testing.assert_array_equal(v.grad, [4.0, -8.0])
    v.zero_grad()
    assert not v.grad.any()
    with pytest.raises(ShapeError):
        (v * v).backward()


def test_diamond_graph_sums_path_contributions():
    # x -> a = x^2, b = 3x, loss = a*b = 3x^3; paths: d(a)/dx*b + a*d(b)/dx
    x = leaf([1.7])
    a, b = x * x, ad.scale(x, 3.0)
    grads = ad.sum(a * b).backward()
    per_path = 2 * 1.7 * (3 * 1.7) + 1.7 ** 2 * 3
    assert grads[x][0] == pytest.approx(per_path, rel=1e-14)
    assert x.grad[0] == pytest.approx(9 * 1.7 ** 2, rel=1e-14)


def test_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    run = lambda: ad.softmax_rows(ad.tanh(ad.matmul(Tensor(x), Tensor(w))), 0.7).data  # noqa: E731
    assert run().tobytes() == run().tobytes()


def test_grad_shape_matches_value():
    rng = np.random.default_rng(2)
    p = leaf(rng.normal(size=(3, 2, 4)))
    ad.sum(ad.tanh(p)).backward()
    assert p.grad.shape == p.data.shape


# -- fused GRU and its kernels -------------------------------------------------

def _gru_case(rng, b=3, t=5, n_in=4, h=3):
    return (leaf(rng.normal(size=(b, t, n_in))), leaf(rng.uniform(-0.6, 0.6, (n_in, 3 * h))),
            leaf(rng.uniform(-0.6, 0.6, (h, 3 * h))), leaf(rng.uniform(-0.6, 0.6, 3 * h)),
            leaf(rng.normal(size=(1, h))))


@pytest.mark.parametrize("backend", _kernels.available_backends())
def test_gru_sequence_gradients(backend):
    prev = _kernels.get_backend()
    _kernels.set_backend(backend)
    try:
        rng = np.random.default_rng(5)
        x, wi, wh, bias, h0 = _gru_case(rng)
        w = Tensor(rng.normal(size=(3, 5, 3)))
        errs = check_gradients(lambda: ad.sum(ad.gru_sequence(x, wi, wh, bias, h0) * w),
                               {"x": x, "w_in": wi, "w_hid": wh, "bias": bias, "h0": h0})
        assert max(errs.values()) < 1e-6
    finally:
        _kernels.set_backend(prev)


def test_backends_agree():
    if "cython" not in _kernels.available_backends():
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(9)
    ax = rng.normal(size=(6, 11, 12))
    wh = rng.normal(size=(4, 12)) * 0.5
    h0 = rng.normal(size=(6, 4))
    dhs = rng.normal(size=(6, 11, 4))
    py, cy = _kernels._BACKENDS["python"], _kernels._BACKENDS["cython"]
    hp, cp = py.gru_forward(ax, wh, h0)
    hc, cc = cy.gru_forward(ax, wh, h0)
    np.testing.assert_allclose(hc, hp, atol=1e-13)
    for a, b in zip(cy.gru_backward(dhs, wh, h0, hc, cc), py.gru_backward(dhs, wh, h0, hp, cp)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.set_backend("fortran")


def test_gru_shape_errors():
    with pytest.raises(ShapeError):
        ad.gru_sequence(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 6))), Tensor(np.ones((2, 6))), Tensor(np.ones(6)))
    with pytest.raises(ShapeError):
        ad.gru_sequence(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((3, 6))), Tensor(np.ones((3, 6))),
                        Tensor(np.ones(6)))


def test_rmse_loss_value():
    assert ad.rmse_loss(Tensor([1.0, 2.0, 3.0]), [1.0, 2.0, 6.0]).item() == pytest.approx(np.sqrt(3.0))
