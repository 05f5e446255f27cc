import numpy as np
import pytest

from lfgnn import nn
from lfgnn.graphs import degree_transitions
from lfgnn.rng import CounterRNG


def _graph(r, B, n, density=0.6):
    A = r.uniform((B, n, n)) * (r.uniform((B, n, n)) < density)
    return (A,) + degree_transitions(A)


def _check(fn, inputs, seed):
    rep = nn.grad_check(fn, inputs, tolerance=1e-5, max_per_tensor=12, seed=seed)
    assert rep.passed, rep.per_tensor


def test_dconv_gradients():
    for seed in range(3):
        r = CounterRNG(seed)
        A, P, Q = _graph(r, 2, 5)
        X, th = r.normal((2, 5, 3)), r.normal((3, 2, 3, 4)) * 0.5
        G = r.normal((2, 5, 4))

        def fn(p):
            out, back = nn.dconv_forward(p["X"], P, Q, p["theta"])
            dX, g = back(G)
            return float((out * G).sum()), {"X": dX, "theta": g["theta"]}

        _check(fn, {"X": X, "theta": th}, seed)


def test_dconv_low_orders():
    r = CounterRNG(1)
    A, P, Q = _graph(r, 1, 4)
    X = r.normal((1, 4, 2))
    th1 = r.normal((1, 2, 2, 3))
    out, _ = nn.dconv_forward(X, P, Q, th1, activation="linear")
    # one hop keeps only the identity term in each direction
    assert np.allclose(out, X @ th1[0, 0] + X @ th1[0, 1])
    th2 = r.normal((2, 2, 2, 3))
    out, _ = nn.dconv_forward(X, P, Q, th2, activation="linear")
    expect = X @ (th2[0, 0] + th2[0, 1]) + (P @ X) @ th2[1, 0] + (Q @ X) @ th2[1, 1]
    assert np.allclose(out, expect)


def test_diffpool_gradients_and_rows():
    for seed in range(3):
        r = CounterRNG(10 + seed)
        A, P, Q = _graph(r, 2, 6)
        X = r.normal((2, 6, 3))
        par = {"pool": r.normal((1, 2, 3, 3)) * 0.5, "embed": r.normal((2, 2, 3, 4)) * 0.5}
        G1, G2 = r.normal((2, 3, 4)), r.normal((2, 3, 3))

        def fn(p):
            (Xp, Ap, S, ent), back = nn.diffpool_forward(p["X"], P, Q, A, {"pool": p["pool"], "embed": p["embed"]})
            dX, g = back(G1, G2)
            return float((Xp * G1).sum() + (Ap * G2).sum()), {"X": dX, **g}

        _check(fn, {"X": X, **par}, seed)
        (_, _, S, _), _ = nn.diffpool_forward(X, P, Q, A, par)
        assert np.max(np.abs(S.sum(axis=-1) - 1.0)) <= 1e-12


def test_attention_pool_gradients_and_weights():
    blocks = [(0, 2), (2, 5), (5, 6)]
    r = CounterRNG(3)
    X = r.normal((2, 6, 4))
    params = [{"W1": r.normal((c, c)), "b1": r.normal(c), "W2": r.normal((c, c)), "b2": r.normal(c)}
              for c in (2, 3, 1)]
    G = r.normal((2, 3, 4))
    flat = {f"{k}.{n}": v for k, p in enumerate(params) for n, v in p.items()}

    def fn(p):
        pars = [{n: p[f"{k}.{n}"] for n in ("W1", "b1", "W2", "b2")} for k in range(3)]
        (Y, w), back = nn.attention_pool_forward(p["X"], blocks, pars)
        dX, gs = back(G)
        grads = {"X": dX}
        for k, g in enumerate(gs):
            grads.update({f"{k}.{n}": v for n, v in g.items()})
        return float((Y * G).sum()), grads

    _check(fn, {"X": X, **flat}, 3)
    (Y, w), _ = nn.attention_pool_forward(X, blocks, params)
    assert Y.shape == (2, 3, 4)
    for wk in w:
        assert np.allclose(wk.sum(axis=1), 1.0)


def test_fusion_and_classifier_gradients():
    r = CounterRNG(4)
    Zg, Zl, x0 = r.normal((3, 2, 4)), r.normal((3, 2, 4)), r.normal((3, 5))
    fp = {"W1": r.normal((5, 3)), "b1": r.normal(3), "W2": r.normal((3, 2)), "b2": r.normal(2),
          "Wp": r.normal((8, 6)), "bp": r.normal(6)}
    cp = {"W1": r.normal((6, 4)), "b1": r.normal(4), "W2": r.normal((4, 2)), "b2": r.normal(2)}
    y = np.array([0, 1, 1])

    def fn(p):
        (z, g), fb = nn.gated_fusion_forward(p["Zg"], p["Zl"], p["x0"], {k: p["f." + k] for k in fp})
        logits, cb = nn.classifier_forward(z, {k: p["c." + k] for k in cp})
        loss, dl = nn.cross_entropy(logits, y)
        dz, gc = cb(dl)
        dZg, dZl, dx0, gf = fb(dz)
        grads = {"Zg": dZg, "Zl": dZl, "x0": dx0}
        grads.update({"f." + k: v for k, v in gf.items()})
        grads.update({"c." + k: v for k, v in gc.items()})
        return loss, grads

    inputs = {"Zg": Zg, "Zl": Zl, "x0": x0}
    inputs.update({"f." + k: v for k, v in fp.items()})
    inputs.update({"c." + k: v for k, v in cp.items()})
    _check(fn, inputs, 4)


def test_forced_gate_selects_branch():
    r = CounterRNG(5)
    Zg, Zl, x0 = r.normal((1, 2, 3)), r.normal((1, 2, 3)), r.normal((1, 4))
    fp = {"W1": r.normal((4, 2)), "b1": r.normal(2), "W2": r.normal((2, 2)), "b2": r.normal(2),
          "Wp": np.eye(6), "bp": np.zeros(6)}
    (z, g), _ = nn.gated_fusion_forward(Zg, Zl, x0, fp, gate=np.ones((1, 2)))
    assert np.allclose(z, Zg.reshape(1, -1))
    (z, g), _ = nn.gated_fusion_forward(Zg, Zl, x0, fp, gate=np.zeros((1, 2)))
    assert np.allclose(z, Zl.reshape(1, -1))


def test_dropout_seeded_and_eval_off():
    m1 = nn.dropout_mask((4, 10), 0.5, 7)
    assert np.array_equal(m1, nn.dropout_mask((4, 10), 0.5, 7))
    assert set(np.unique(m1)) <= {0.0, 2.0}
    z = CounterRNG(0).normal((2, 3))
    p = {"W1": np.eye(3), "b1": np.zeros(3), "W2": np.ones((3, 2)), "b2": np.zeros(2)}
    a, _ = nn.classifier_forward(z, p, 0.5, train_mode=False, seed=1)
    b, _ = nn.classifier_forward(z, p, 0.0)
    assert np.array_equal(a, b)


def test_cross_entropy_value():
    loss, g = nn.cross_entropy(np.array([[0.0, 0.0]]), np.array([1]))
    assert loss == pytest.approx(np.log(2.0))
    assert np.allclose(g, [[0.5, -0.5]])


def test_rel_error_floor():
    assert nn.rel_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(1e-5)


def test_weights_round_trip(tmp_path):
    t = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
    nn.save_weights(tmp_path / "w.lfw", t, {"note": "x"})
    got, header = nn.load_weights(tmp_path / "w.lfw")
    assert list(got) == ["a", "b"] and np.array_equal(got["a"], t["a"]) and header["note"] == "x"
    raw = (tmp_path / "w.lfw").read_bytes()
    (tmp_path / "bad.lfw").write_bytes(raw[:-4])
    from lfgnn.errors import CorruptFile
    with pytest.raises(CorruptFile):
        nn.load_weights(tmp_path / "bad.lfw")
