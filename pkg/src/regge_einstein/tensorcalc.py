"""Pointwise symmetric-tensor algebra relative to an SPD metric.

All functions are batched over leading point axes: tensors have shape
(..., N, N). A metric argument may be a raw array or a :class:`Metric`,
which caches the inverse and the volume density.
"""
from __future__ import annotations

import numpy as np


class NotSPDError(ValueError):
    pass


class Metric:
    def __init__(self, g: np.ndarray, check: bool = True):
        g = np.asarray(g, dtype=float)
        if check:
            try:
                L = np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                raise NotSPDError("metric is not positive definite") from None
            self.sqrt_det = np.prod(np.diagonal(L, axis1=-2, axis2=-1), axis=-1)
        else:
            self.sqrt_det = np.sqrt(np.linalg.det(g))
        self.g = g
        self.inv = np.linalg.inv(g) if g.shape[-1] > 0 else np.zeros_like(g)

    @property
    def dim(self) -> int:
        return self.g.shape[-1]


def _inv(g) -> np.ndarray:
    if isinstance(g, Metric):
        return g.inv
    return Metric(g).inv


def _g(g) -> np.ndarray:
    return g.g if isinstance(g, Metric) else np.asarray(g, dtype=float)


def raise_both(s: np.ndarray, g) -> np.ndarray:
    gi = _inv(g)
    return gi @ s @ gi


def inner_g(s: np.ndarray, r: np.ndarray, g) -> np.ndarray:
    """<s, r>_g = tr(g^-1 s g^-1 r^T)."""
    return np.einsum("...ij,...ij->...", raise_both(s, g), r)


def trace_g(s: np.ndarray, g) -> np.ndarray:
    return np.einsum("...ij,...ij->...", _inv(g), s)


def sandwich(s: np.ndarray, A: np.ndarray, r: np.ndarray, g) -> np.ndarray:
    """s : A : r = tr(g^-1 s g^-1 A g^-1 r)."""
    gi = _inv(g)
    return np.trace(gi @ s @ gi @ A @ gi @ r, axis1=-2, axis2=-1)


def J_map(s: np.ndarray, g) -> np.ndarray:
    """J s = s - g Tr(s) / 2."""
    return s - 0.5 * _g(g) * trace_g(s, g)[..., None, None]


def S_map(s: np.ndarray, g) -> np.ndarray:
    """S s = s - g Tr(s)."""
    return s - _g(g) * trace_g(s, g)[..., None, None]


def SF_map(sF: np.ndarray, gF) -> np.ndarray:
    """Facet trace reversal of an already restricted tensor (same formula as S)."""
    return S_map(sF, gF)


def pullback(s: np.ndarray, frame: np.ndarray, check: bool = True) -> np.ndarray:
    """(s|_D)_ab = s(X_a, X_b) for frame columns X_a; frame (..., N, d)."""
    frame = np.asarray(frame, dtype=float)
    if check and frame.shape[-1] > 0:
        flat = frame.reshape(-1, *frame.shape[-2:])
        if np.any(np.linalg.matrix_rank(flat) < frame.shape[-1]):
            raise ValueError("rank-deficient frame")
    return np.swapaxes(frame, -1, -2) @ s @ frame


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))
