import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import max_rel_error
from nbound import nnet
from nbound.geometry import fit_kdop
from nbound.indicator import star_grid
from nbound.nnet import (EarlyExitNet, LearnableKDOP, MLP, NeuralBound, PositionalEncoding,
                         ReLUField, architecture, make_mlp)


def test_architectures():
    assert architecture(2) == [2, 25, 25, 1]
    assert architecture(3) == [3, 50, 50, 1]
    assert architecture(4) == [4, 75, 75, 1]
    assert architecture(3, "ray") == [6, 50, 50, 1]
    assert make_mlp(2).n_params == 2 * 25 + 25 + 25 * 25 + 25 + 25 + 1


def test_positional_encoding_width():
    pe = PositionalEncoding(8)
    assert pe(np.zeros((1, 2))).shape == (1, 18)
    enc = pe(np.zeros((1, 2)))[0]
    assert np.allclose(enc[:2], 0)
    m = MLP([2, 25, 25, 1], encoding=pe)
    assert m.params[0].shape == (18, 25)
    with pytest.raises(ValueError):
        PositionalEncoding(7)


def test_forward_range_and_shape():
    m = make_mlp(3, "box")
    y, cache = m.forward(np.random.default_rng(0).random((10, 6)))
    assert y.shape == (10,) and np.all((y > 0) & (y < 1))
    assert np.allclose(nnet.sigmoid(cache["logit"]), y)
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        m.forward(np.full((1, 6), np.nan))


def test_zero_network_outputs_half():
    m = MLP([2, 4, 1], zero=True)
    y, _ = m.forward(np.random.default_rng(0).random((5, 2)))
    assert np.allclose(y, 0.5)
    # threshold is inclusive after the shift
    assert nnet.predict(m, np.zeros((1, 2)), eps=0.0).all()


def test_sine_unit_gradient_at_zero():
    m = MLP([1, 1, 1], zero=True)
    m.params[2][...] = 1.0       # output weight
    _, cache = m.forward(np.zeros((1, 1)))
    g = m.backward_logit(cache, np.ones(1))
    # d logit / d b1 = w_out * cos(0) = 1
    assert g[1][0] == pytest.approx(1.0)


# Gradient oracle: 20 random parameter/input draws per model.

def _draw(seed):
    return np.random.default_rng(seed)


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_mlp(seed):
    rng = _draw(seed)
    m = MLP([2, 7, 5, 1], omega=float(rng.uniform(0.5, 3)), seed=seed,
            encoding=PositionalEncoding(4) if seed % 2 else None)
    X = rng.random((16, 2))
    assert max_rel_error(m, X, rng.standard_normal(16)) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_early_both_heads(seed):
    rng = _draw(seed)
    net = EarlyExitNet(3, width=6, omega=float(rng.uniform(0.5, 3)), seed=seed)
    X = rng.random((16, 3))
    wl, we = rng.standard_normal(16), rng.standard_normal(16)
    assert max_rel_error(net, X, wl, we) < 1e-4
    # each head on its own
    assert max_rel_error(net, X, wl, np.zeros(16)) < 1e-4
    assert max_rel_error(net, X, np.zeros(16), we) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_relufield(seed):
    rng = _draw(seed)
    f = ReLUField((5, 6))
    f.params[0][...] = rng.standard_normal(f.params[0].shape)
    X = rng.random((32, 2))
    assert max_rel_error(f, X, rng.standard_normal(32)) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_kdop(seed):
    rng = _draw(seed)
    k = LearnableKDOP.init_default(2, tau=0.2)
    k.params[0] += 0.1 * rng.standard_normal(k.params[0].shape)
    k.params[1] += 0.1 * rng.standard_normal(k.params[1].shape) - 0.3
    X = rng.random((16, 2))
    assert max_rel_error(k, X, rng.standard_normal(16)) < 1e-4


def test_early_exit_prediction():
    net = EarlyExitNet(2, width=4, zero=True)
    net.params[3][...] = 10.0   # early bias: always certain of empty space
    bits, exits = net.predict_early(np.random.default_rng(0).random((8, 2)))
    assert exits.all() and not bits.any()
    assert EarlyExitNet.layer_evals(exits).tolist() == [2] * 8
    net.params[3][...] = -10.0
    bits, exits = net.predict_early(np.zeros((3, 2)))
    assert not exits.any() and bits.all()     # late head at 0.5 + eps
    assert EarlyExitNet.layer_evals(exits).tolist() == [4] * 3


def test_relufield_interpolates_vertices():
    f = ReLUField((3, 3))
    f.params[0][...] = np.arange(9.0).reshape(3, 3)
    _, c = f.forward(np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [0.25, 0.0]]))
    assert np.allclose(c["logit"], [0, 4, 8, 1.5])
    rf = ReLUField.for_query(2, "ray")
    assert rf.resolution == (32,) * 4 and np.allclose(rf.lo, [0, 0, -1, -1])


def test_kdop_default_contains_cube():
    k = LearnableKDOP.init_default(3, tau=0.01)
    y, _ = k.forward(np.random.default_rng(0).random((100, 3)))
    assert np.all(y > 0.5)


def test_kdop_hardening_covers_points():
    g = star_grid()
    k = LearnableKDOP.from_prim(fit_kdop(g))
    k.params[0] += 0.05 * np.random.default_rng(0).standard_normal(k.params[0].shape)
    prim = k.harden(g.corner_points())
    assert prim.contains(g.corner_points()).all()


def test_kdop_logit_stable_when_saturated():
    k = LearnableKDOP.init_default(2, tau=1e-3)
    y, c = k.forward(np.array([[0.5, 0.5], [5.0, 5.0]]))
    assert np.all(np.isfinite(c["logit"]))


@pytest.mark.parametrize("cls,args", [(MLP, ([2, 5, 1],)), (EarlyExitNet, (4, 3)),
                                      (ReLUField, ((4, 4),))])
def test_state_round_trip(cls, args):
    m = cls(*args)
    m.params[0][...] = np.random.default_rng(0).standard_normal(m.params[0].shape)
    desc, arrays = m.state()
    m2 = cls.from_state(desc, [a.copy() for a in arrays])
    X = np.random.default_rng(1).random((5, m.input_dim))
    a = m.forward(X)
    b = m2.forward(X)
    a = a["yhat"] if isinstance(a, dict) else a[0]
    b = b["yhat"] if isinstance(b, dict) else b[0]
    assert np.array_equal(a, b)


def test_neural_bound_checks_query():
    m = make_mlp(2)
    b = NeuralBound(m, "point", 2)
    with pytest.raises(ValueError):
        b.test("ray", np.zeros((1, 4)))
    with pytest.raises(ValueError):
        NeuralBound(m, "box", 2)


@given(st.floats(0.0, 1.0), st.floats(1e-6, 1e-2))
def test_inverted_rule_is_stricter(y, eps):
    y = np.array([y])
    normal = y + eps >= 0.5
    inverted = y - eps >= 0.5
    assert not (inverted & ~normal).any()
