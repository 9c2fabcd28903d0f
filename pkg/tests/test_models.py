import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kneeattn import autodiff as ad
from kneeattn.autodiff import ShapeError, Tensor, check_gradients
from kneeattn.models import (
    ARCHITECTURES, CnnConfig, ConfigError, GruParams, KneeModel, MhaParams, ModelConfig, cnn_head,
    gru_composed, gru_forward, multi_head_attention, self_attention, temporal_attention,
)
from kneeattn.train import standard_grid

E = math.e


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def rand_gru(rng, n_v, h, s=0.6):
    return GruParams(leaf(rng.uniform(-s, s, (n_v, 3 * h))), leaf(rng.uniform(-s, s, (h, 3 * h))),
                     leaf(rng.uniform(-s, s, 3 * h)))


# -- GRU --------------------------------------------------------------------------

def test_gru_zero_fixed_point():
    p = GruParams(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))), Tensor(np.zeros(6)))
    assert not gru_forward(p, Tensor(np.zeros((2, 5)))).data.any()


def test_scalar_gru_hand_evaluation():
    # gates z, r, n with input weights (0.5, -1, 2), hidden (0.3, 0.7, -0.4), biases (0.1, 0.2, -0.3)
    p = GruParams(Tensor([[0.5, -1.0, 2.0]]), Tensor([[0.3, 0.7, -0.4]]), Tensor([0.1, 0.2, -0.3]))
    x, h0 = 0.8, 0.25
    sig = lambda v: 1 / (1 + math.exp(-v))  # noqa: E731
    z = sig(0.5 * x + 0.3 * h0 + 0.1)
    r = sig(-1.0 * x + 0.7 * h0 + 0.2)
    n = math.tanh(2.0 * x + -0.4 * (r * h0) - 0.3)
    expected = (1 - z) * n + z * h0
    out = gru_forward(p, Tensor([[x]]), Tensor([h0])).data
    assert out[0, 0] == pytest.approx(expected, abs=1e-15)


def test_gru_fused_matches_composed_and_gradients():
    rng = np.random.default_rng(0)
    p = rand_gru(rng, 5, 3)
    x = leaf(rng.normal(size=(5, 4)))
    h0 = leaf(rng.normal(size=3))
    np.testing.assert_allclose(gru_forward(p, x, h0).data, gru_composed(p, x, h0).data, atol=1e-14)
    w = Tensor(rng.normal(size=(4, 3)))
    params = {"w_in": p.w_in, "w_hid": p.w_hid, "bias": p.bias, "x": x, "h0": h0}
    for fn in (gru_forward, gru_composed):
        errs = check_gradients(lambda: ad.sum(fn(p, x, h0) * w), params)
        assert max(errs.values()) < 1e-5


# -- temporal attention ---------------------------------------------------------------

def test_ta_identical_states_are_uniform():
    hs = Tensor(np.tile([0.3, -0.2, 0.9], (7, 1)))
    ctx, alpha = temporal_attention(hs, Tensor([1.0, 2.0, -1.0]))
    np.testing.assert_allclose(alpha.data, np.full(7, 1 / 7), atol=1e-15)
    np.testing.assert_allclose(ctx.data, [0.3, -0.2, 0.9], atol=1e-15)


def test_ta_hand_case():
    ctx, alpha = temporal_attention(Tensor([[0.0], [math.log(2)], [0.0]]), Tensor([1.0]))
    np.testing.assert_allclose(alpha.data, [0.25, 0.5, 0.25], atol=1e-15)
    np.testing.assert_allclose(ctx.data, [0.5 * math.log(2)], atol=1e-15)


def test_ta_fixed_modes():
    hs = Tensor(np.random.default_rng(1).normal(size=(2, 5, 3)))
    ctx, alpha = temporal_attention(hs, Tensor(np.ones(3)), "uniform")
    np.testing.assert_allclose(ctx.data, hs.data.mean(axis=1), atol=1e-15)
    ctx, alpha = temporal_attention(hs, Tensor(np.ones(3)), "last")
    np.testing.assert_array_equal(ctx.data, hs.data[:, -1])
    with pytest.raises(ConfigError):
        temporal_attention(hs, Tensor(np.ones(3)), "first")


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (6, 3), elements=st.floats(-5, 5)), hnp.arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_ta_context_is_convex_combination(h, w):
    ctx, alpha = temporal_attention(Tensor(h), Tensor(w))
    assert np.all(alpha.data >= 0)
    assert abs(alpha.data.sum() - 1) < 1e-9
    tol = 1e-12 * (1 + np.abs(h).max())
    assert np.all(ctx.data >= h.min(axis=0) - tol) and np.all(ctx.data <= h.max(axis=0) + tol)


# -- self / multi-head attention --------------------------------------------------------

def test_sa_hand_case():
    one = Tensor([[1.0]])
    he, a = self_attention(Tensor([[1.0], [0.0]]), one, one, one)
    np.testing.assert_allclose(a.data, [[E / (E + 1), 1 / (E + 1)], [0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(he.data, [[E / (E + 1)], [0.5]], atol=1e-15)


def test_sa_equal_rows_uniform():
    rng = np.random.default_rng(2)
    x = Tensor(np.tile(rng.normal(size=4), (5, 1)))
    wq, wk, wv = (Tensor(rng.normal(size=(4, 3))) for _ in range(3))
    he, a = self_attention(x, wq, wk, wv)
    np.testing.assert_allclose(a.data, np.full((5, 5), 0.2), atol=1e-15)
    np.testing.assert_allclose(he.data, np.tile((x.data @ wv.data).mean(axis=0), (5, 1)), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 8))
def test_sa_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    ws = [Tensor(rng.normal(size=(3, 2))) for _ in range(3)]
    perm = rng.permutation(n)
    he, a = self_attention(Tensor(x), *ws)
    he_p, a_p = self_attention(Tensor(x[perm]), *ws)
    np.testing.assert_allclose(he_p.data, he.data[perm], atol=1e-12)
    np.testing.assert_allclose(a_p.data, a.data[np.ix_(perm, perm)], atol=1e-12)


def test_mha_single_head_identity_is_sa():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 3)))
    wq, wk, wv = (Tensor(rng.normal(size=(3, 3))) for _ in range(3))
    out, maps = multi_head_attention(x, MhaParams([wq], [wk], [wv], Tensor(np.eye(3))))
    he, a = self_attention(x, wq, wk, wv)
    assert out.data.tobytes() == he.data.tobytes()
    assert maps[0].data.tobytes() == a.data.tobytes()


def test_mha_shapes():
    rng = np.random.default_rng(4)
    ws = [[Tensor(rng.normal(size=(5, 2))) for _ in range(3)] for _ in range(3)]
    out, maps = multi_head_attention(Tensor(rng.normal(size=(4, 5))), MhaParams(*ws, Tensor(rng.normal(size=(2, 6)))))
    assert out.shape == (4, 2)
    assert len(maps) == 3 and all(m.shape == (4, 4) for m in maps)


def test_mha_zero_head_is_uniform_mean():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))
    w1 = [Tensor(rng.normal(size=(3, 2))) for _ in range(3)]
    wv2 = rng.normal(size=(3, 2))
    zeros = Tensor(np.zeros((3, 2)))
    w_o = rng.normal(size=(2, 4))
    out, maps = multi_head_attention(Tensor(x), MhaParams([w1[0], zeros], [w1[1], zeros], [w1[2], Tensor(wv2)],
                                                          Tensor(w_o)))
    np.testing.assert_allclose(maps[1].data, np.full((4, 4), 0.25), atol=1e-15)
    he1, _ = self_attention(Tensor(x), *w1)
    mean_v2 = np.tile((x @ wv2).mean(axis=0), (4, 1))
    np.testing.assert_allclose(out.data, np.hstack([he1.data, mean_v2]) @ w_o.T, atol=1e-13)


# -- CNN head -----------------------------------------------------------------------------

def test_cnn_closed_form():
    cfg = CnnConfig(filters=1, kernel=3, n_pool=0, n_nonpool=1)
    ch, n_cy, c = 2, 6, 0.1
    convs = [(Tensor(np.ones((1, ch, 3))), Tensor(np.zeros(1)))]
    dense = [(Tensor(np.ones((n_cy - 2, 1))), Tensor(np.zeros(1)))]
    out = cnn_head(Tensor(np.full((1, n_cy, ch), c)), convs, dense, cfg)
    assert out.data[0] == pytest.approx((n_cy - 2) * math.tanh(ch * 3 * c), abs=1e-15)


@pytest.mark.parametrize("arch", ["rnn_1dcnn", "rnn_ta_ca_1dcnn"])
def test_every_grid_point_builds_at_30_cycles(arch):
    x = np.random.default_rng(0).uniform(size=(1, 30, 2, 5))
    for point in standard_grid(arch, heads=(1, 3)):
        cfg = ModelConfig(arch, h_size=point["h_size"], n_he=point["n_he"], n_cy=30, n_ts=2,
                          cnn=CnnConfig(point["filters"], point["kernel"], point["n_pool"], point["n_nonpool"]))
        assert KneeModel(cfg).forward(x).pred.shape == (1,)


def test_cnn_underflow_is_config_error():
    with pytest.raises(ConfigError):
        ModelConfig("rnn_1dcnn", n_cy=4, cnn=CnnConfig(kernel=3, n_pool=2, n_nonpool=1))


def test_cnn_gradients():
    rng = np.random.default_rng(6)
    cfg = CnnConfig(3, 3, 1, 1)
    plan, flat = cfg.layer_plan(2, 10)
    convs = [(leaf(rng.normal(size=(co, ci, 3)) * 0.5), leaf(rng.normal(size=co) * 0.5)) for ci, co, _ in plan]
    dense = [(leaf(rng.normal(size=(flat, 1))), leaf(rng.normal(size=1)))]
    x = leaf(rng.normal(size=(2, 10, 2)))
    params = {"x": x, **{f"c{i}{j}": t for i, pair in enumerate(convs) for j, t in enumerate(pair)},
              "dw": dense[0][0], "db": dense[0][1]}
    errs = check_gradients(lambda: ad.sum(ad.square(cnn_head(x, convs, dense, cfg))), params)
    assert max(errs.values()) < 1e-4


# -- assembled models ----------------------------------------------------------------------

TOY = dict(h_size=3, n_cy=5, n_ts=6, cnn=CnnConfig(3, 2, 1, 1))


def toy_input(seed=0, n=2):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(n, 5, 6, 5)) + rng.normal(size=(n, 5, 1, 1))


def test_last_mode_ta_equals_no_ta():
    base = KneeModel(ModelConfig("rnn_1dcnn", **TOY))
    ta = KneeModel(ModelConfig("rnn_ta_1dcnn", ta_mode="last", **TOY))
    for k, v in base.params.items():
        ta.params[k].data = v.data.copy()
    x = toy_input()
    np.testing.assert_allclose(ta.forward(x).pred.data, base.forward(x).pred.data, atol=1e-15)


def test_uniform_ca_collapse():
    cfg = ModelConfig("rnn_ta_ca_1dcnn", n_he=1, **TOY)
    full = KneeModel(cfg)
    full.params["ca.w_o"].data = np.eye(3)
    full.params["ca.0.w_v"].data = np.eye(3)
    ta = KneeModel(ModelConfig("rnn_ta_1dcnn", **TOY))
    for k in ta.params:
        ta.params[k].data = full.params[k].data.copy()
    one = np.random.default_rng(1).uniform(size=(1, 1, 6, 5))
    x = np.repeat(one, 5, axis=1)
    res = full.forward(x)
    np.testing.assert_allclose(res.ca[0][0], np.full((5, 5), 0.2), atol=1e-15)
    np.testing.assert_allclose(res.pred.data, ta.forward(x).pred.data, atol=1e-14)


def _sig(v):
    return 1 / (1 + np.exp(-v))


def straight_line_forward(p, x, cfg):
    """Plain-numpy re-implementation of rnn_ta_ca_1dcnn for one cell."""
    h = cfg.h_size
    ctx = []
    for cyc in x:
        hp = np.zeros(h)
        states = []
        for xt in cyc:
            a = xt @ p["gru.w_in"] + p["gru.bias"]
            z = _sig(a[:h] + hp @ p["gru.w_hid"][:, :h])
            r = _sig(a[h:2 * h] + hp @ p["gru.w_hid"][:, h:2 * h])
            n = np.tanh(a[2 * h:] + (r * hp) @ p["gru.w_hid"][:, 2 * h:])
            hp = (1 - z) * n + z * hp
            states.append(hp)
        states = np.array(states)
        e = np.exp(states @ p["ta.w_b"])
        ctx.append((e / e.sum()) @ states)
    c = np.array(ctx)
    heads = []
    for j in range(cfg.n_he):
        q, k, v = (c @ p[f"ca.{j}.{w}"] for w in ("w_q", "w_k", "w_v"))
        s = np.exp(q @ k.T / math.sqrt(k.shape[1]))
        heads.append((s / s.sum(axis=1, keepdims=True)) @ v)
    y = np.hstack(heads) @ p["ca.w_o"].T  # (n_cy, he)
    feat = y.T
    layers = [(False, i) for i in range(cfg.cnn.n_nonpool)] + [(True, cfg.cnn.n_nonpool + i) for i in range(cfg.cnn.n_pool)]
    for pool, i in layers:
        w, b = p[f"cnn.{i}.w"], p[f"cnn.{i}.b"]
        k = w.shape[2]
        out = np.array([[sum(w[o, ci, t] * feat[ci, s + t] for ci in range(w.shape[1]) for t in range(k)) + b[o]
                         for s in range(feat.shape[1] - k + 1)] for o in range(w.shape[0])])
        feat = np.tanh(out)
        if pool:
            m = feat.shape[1] // 2
            feat = np.array([[max(row[2 * s], row[2 * s + 1]) for s in range(m)] for row in feat])
    return float(feat.reshape(-1) @ p["dense.0.w"][:, 0] + p["dense.0.b"][0])


def test_forward_matches_straight_line_oracle():
    cfg = ModelConfig("rnn_ta_ca_1dcnn", n_he=2, **TOY)
    model = KneeModel(cfg)
    x = toy_input(3, n=3)
    p = {k: v.data for k, v in model.params.items()}
    expected = [straight_line_forward(p, xi, cfg) for xi in x]
    np.testing.assert_allclose(model.forward(x).pred.data, expected, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_model_gradients(arch):
    cfg = ModelConfig(arch, n_he=3 if "_ca" in arch else 1, **TOY)
    model = KneeModel(cfg)
    for p in model.parameters():
        p.data *= 2.0
    x = toy_input(7)
    y = np.array([0.2, 0.8])
    errs = check_gradients(lambda: ad.rmse_loss(model.forward(x).pred, y), model.params)
    assert max(errs.values()) < 1e-4


def test_attention_maps_are_distributions_and_deterministic():
    model = KneeModel(ModelConfig("rnn_ta_ca_1dcnn", n_he=3, **TOY))
    x = toy_input(8)
    a, b = model.forward(x), model.forward(x)
    assert a.pred.data.tobytes() == b.pred.data.tobytes()
    np.testing.assert_allclose(a.ta.sum(axis=-1), 1.0, atol=1e-9)
    for m in a.ca:
        assert m.shape == (2, 5, 5)
        np.testing.assert_allclose(m.sum(axis=-1), 1.0, atol=1e-9)


def test_input_shape_checked():
    model = KneeModel(ModelConfig("rnn_1dcnn", **TOY))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 4, 6, 5)))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig("rnn_ta_1dcnn", n_he=2)
    with pytest.raises(ConfigError):
        ModelConfig("transformer")
    with pytest.raises(ConfigError):
        ModelConfig(variant="both")


def test_checkpoint_round_trip(tmp_path):
    model = KneeModel(ModelConfig("rnn_ta_ca_1dcnn", n_he=2, **TOY), target_range=(100.0, 900.0),
                      normalizer={"variant": "combined", "var_min": [0] * 5, "var_max": [1] * 5})
    back = KneeModel.load(model.save(tmp_path / "m.json"))
    x = toy_input()
    assert back.predict(x).tobytes() == model.predict(x).tobytes()
    assert back.checkpoint_id() == model.checkpoint_id()
    doc = model.to_dict()
    doc["params"]["ca.w_o"]["shape"] = [1, 12]
    doc["params"]["ca.w_o"]["data"] = [0.0] * 12
    with pytest.raises(ValueError):
        KneeModel.from_dict(doc)


def test_target_scaling_round_trip():
    model = KneeModel(ModelConfig("rnn_1dcnn", **TOY), target_range=(200.0, 1000.0))
    y = np.array([200.0, 600.0, 1000.0])
    np.testing.assert_allclose(model.scale_target(y), [0.0, 0.5, 1.0])
    np.testing.assert_allclose(model.unscale_target(model.scale_target(y)), y)
