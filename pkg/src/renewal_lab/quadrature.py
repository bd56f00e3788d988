"""Quadrature helpers shared across the package.

Two families live here:

* plain composite trapezoid rules (uniform grids) used for mass, kernel and
  profile-data integrals;
* an exponential product rule used by the eigen machinery for integrals of
  the form ``p(x) * exp(-E(x))`` where ``E`` is a cumulative rate integral.
  The rule integrates each cell exactly for a linear prefactor against the
  exponential of a linear exponent, so the stiff exponential factor never
  limits accuracy; for coefficient functions that are constant in ``x`` it
  is exact to roundoff.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "trapezoid_weights",
    "trapezoid",
    "cumulative_trapezoid",
    "exp_product_integral",
    "exp_product_cumulative",
    "exp_product_tail",
    "exp_product_node_weights",
]


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    """Composite trapezoid weights for ``n`` uniformly spaced nodes."""
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def trapezoid(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    head = np.take(v, [0, v.shape[axis] - 1], axis=axis).sum(axis=axis)
    return h * (v.sum(axis=axis) - 0.5 * head)


def cumulative_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    """Cumulative trapezoid along the last axis, starting at 0."""
    v = np.asarray(values, dtype=float)
    inc = 0.5 * h * (v[..., 1:] + v[..., :-1])
    out = np.empty_like(v)
    out[..., 0] = 0.0
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


# ---------------------------------------------------------------------------
# Exponential product rule.
#
# On a cell [x_i, x_{i+1}] of width h write the exponent increment
# d = E_{i+1} - E_i and tau = (x - x_i)/h.  With the prefactor interpolated
# linearly, the cell integral is
#
#   h * exp(-E_i) * [ P_i * phi0(d) + (P_{i+1} - P_i) * phi1(d) ]
#
# with phi_k(d) = int_0^1 tau^k exp(-d tau) dtau.  phi2 appears when the
# integrand carries a second linear factor (hat-function weights).

_SMALL = 0.02


def _phi0(d):
    d = np.asarray(d, dtype=float)
    out = np.empty_like(d)
    small = np.abs(d) < _SMALL
    ds = d[small]
    out[small] = (
        1.0
        - ds / 2.0
        + ds**2 / 6.0
        - ds**3 / 24.0
        + ds**4 / 120.0
        - ds**5 / 720.0
    )
    db = d[~small]
    out[~small] = -np.expm1(-db) / db
    return out


def _phi1(d):
    d = np.asarray(d, dtype=float)
    out = np.empty_like(d)
    small = np.abs(d) < _SMALL
    ds = d[small]
    out[small] = (
        0.5
        - ds / 3.0
        + ds**2 / 8.0
        - ds**3 / 30.0
        + ds**4 / 144.0
        - ds**5 / 840.0
    )
    db = d[~small]
    out[~small] = (1.0 - (1.0 + db) * np.exp(-db)) / db**2
    return out


def _phi2(d):
    d = np.asarray(d, dtype=float)
    out = np.empty_like(d)
    small = np.abs(d) < _SMALL
    ds = d[small]
    out[small] = (
        1.0 / 3.0
        - ds / 4.0
        + ds**2 / 10.0
        - ds**3 / 36.0
        + ds**4 / 168.0
        - ds**5 / 960.0
    )
    db = d[~small]
    out[~small] = (2.0 - (2.0 + 2.0 * db + db**2) * np.exp(-db)) / db**3
    return out


def _cell_integrals(prefactor, exponent, h):
    """Per-cell integrals of the linear-prefactor exponential product.

    Operates on the last axis, so stacked rows of columns work too.
    """
    p = np.asarray(prefactor, dtype=float)
    e = np.asarray(exponent, dtype=float)
    d = e[..., 1:] - e[..., :-1]
    base = np.exp(-e[..., :-1])
    return h * base * (p[..., :-1] * _phi0(d)
                       + (p[..., 1:] - p[..., :-1]) * _phi1(d))


def exp_product_integral(prefactor, exponent, h: float):
    """Integral of ``p(x) exp(-E(x))`` along the last axis."""
    out = np.sum(_cell_integrals(prefactor, exponent, h), axis=-1)
    return float(out) if out.ndim == 0 else out


def exp_product_cumulative(prefactor, exponent, h: float) -> np.ndarray:
    """Node values of ``int_0^x p exp(-E)``; entry 0 is 0."""
    cells = _cell_integrals(prefactor, exponent, h)
    out = np.empty(len(cells) + 1)
    out[0] = 0.0
    np.cumsum(cells, out=out[1:])
    return out


def exp_product_tail(prefactor, exponent, h: float) -> np.ndarray:
    """Node values of ``int_x^{x_max} p exp(-E)``; last entry is 0.

    Accumulated from the right so the tail carries no cancellation error
    even when the total integral is orders of magnitude larger.
    """
    cells = _cell_integrals(prefactor, exponent, h)
    out = np.zeros(len(cells) + 1)
    out[:-1] = np.cumsum(cells[::-1])[::-1]
    return out


def exp_product_node_weights(prefactor, exponent, h: float) -> np.ndarray:
    """Node weights ``w`` with ``sum(w * g)`` = integral of ``g p exp(-E)``.

    ``g`` is taken piecewise linear (hat decomposition), consistent with the
    prefactor interpolation, so ``sum(w)`` reproduces
    :func:`exp_product_integral` of the same data.
    """
    p = np.asarray(prefactor, dtype=float)
    e = np.asarray(exponent, dtype=float)
    d = e[1:] - e[:-1]
    base = h * np.exp(-e[:-1])
    f0, f1, f2 = _phi0(d), _phi1(d), _phi2(d)
    dp = p[1:] - p[:-1]
    left = base * (p[:-1] * (f0 - f1) + dp * (f1 - f2))
    right = base * (p[:-1] * f1 + dp * f2)
    w = np.zeros_like(p)
    w[:-1] += left
    w[1:] += right
    return w
