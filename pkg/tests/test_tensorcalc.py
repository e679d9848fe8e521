import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from regge_einstein.tensorcalc import (J_map, Metric, NotSPDError, S_map, SF_map, inner_g, pullback, sandwich,
                                       sym, trace_g)

floats = st.floats(-2, 2, allow_nan=False)


def spd(a):
    return a @ a.T + 3 * np.eye(a.shape[0])


@st.composite
def tensors(draw, n=3):
    m = draw(arrays(np.float64, (n, n), elements=floats))
    s = draw(arrays(np.float64, (n, n), elements=floats))
    r = draw(arrays(np.float64, (n, n), elements=floats))
    return spd(m), sym(s), sym(r)


def test_inner_identity():
    assert inner_g(np.eye(3), np.eye(3), np.eye(3)) == pytest.approx(3.0)


@given(tensors())
def test_sandwich_with_metric_is_inner(t):
    g, s, r = t
    assert sandwich(s, g, r, g) == pytest.approx(inner_g(s, r, g), rel=1e-10, abs=1e-12)


@given(tensors())
def test_inner_scaling(t):
    _, s, r = t
    assert inner_g(s, r, 2 * np.eye(3)) == pytest.approx(inner_g(s, r, np.eye(3)) / 4, rel=1e-12, abs=1e-14)


@given(tensors())
def test_trace_laws(t):
    g, s, _ = t
    N = 3
    assert trace_g(J_map(s, g), g) == pytest.approx((1 - N / 2) * trace_g(s, g), abs=1e-10)
    assert trace_g(S_map(s, g), g) == pytest.approx((1 - N) * trace_g(s, g), abs=1e-10)
    assert np.allclose(J_map(g, g), (1 - N / 2) * g)
    assert np.allclose(S_map(g, g), (1 - N) * g)


@given(tensors())
def test_J_self_adjoint(t):
    g, s, r = t
    assert inner_g(J_map(s, g), r, g) == pytest.approx(inner_g(s, J_map(r, g), g), rel=1e-12, abs=1e-12)


@given(tensors(), floats, floats)
def test_sandwich_linear(t, a, b):
    g, s, r = t
    lhs = sandwich(a * s + b * r, g + s, r, g)
    rhs = a * sandwich(s, g + s, r, g) + b * sandwich(r, g + s, r, g)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_J_example():
    assert np.allclose(J_map(np.diag([1.0, 0, 0]), np.eye(3)), np.diag([0.5, -0.5, -0.5]))


def test_facet_trace_reversal():
    a, b = 1.3, -0.4
    assert np.allclose(SF_map(np.diag([a, b]), np.eye(2)), np.diag([-b, -a]))
    gF = spd(np.array([[1.0, 0.2], [0.3, 0.5]]))
    assert np.allclose(SF_map(gF, gF), -(3 - 2) * gF)


@given(tensors())
def test_facet_trace_law(t):
    g, s, _ = t
    gF, sF = g[:2, :2], s[:2, :2]
    assert trace_g(SF_map(sF, gF), gF) == pytest.approx((2 - 3) * trace_g(sF, gF), abs=1e-10)


def test_pullback(rng):
    s = sym(rng.standard_normal((3, 3)))
    X = rng.standard_normal((3, 2))
    out = pullback(s, X)
    for a in range(2):
        for b in range(2):
            assert out[a, b] == pytest.approx(X[:, a] @ s @ X[:, b])
    g = spd(rng.standard_normal((3, 3)))
    L = np.linalg.cholesky(pullback(g, X))
    Y = X @ np.linalg.inv(L).T
    assert np.allclose(pullback(g, Y), np.eye(2))
    with pytest.raises(ValueError):
        pullback(s, np.ones((3, 2)))


def test_metric_checks():
    m = Metric(np.diag([1.0, 4.0, 9.0]))
    assert m.sqrt_det == pytest.approx(6.0)
    assert np.allclose(m.g @ m.inv, np.eye(3), atol=1e-12)
    with pytest.raises(NotSPDError):
        Metric(np.diag([1.0, -1.0, 1.0]))
