"""The two exactly solvable examples (alpha = -1, gamma = 2, eta_bar = 0).

Example 1: A_t = 1/2 int (W^2 + Wperp^2) ds. The martingale integrands are
alpha(T-s) W_s and beta(T-s) Wperp_s with

    alpha' = 1 + 2 alpha^2,  beta' = 1 - 2 beta^2,  alpha(0) = beta(0) = 0,

so alpha(s) = tan(sqrt2 s)/sqrt2 and beta(s) = +tanh(sqrt2 s)/sqrt2. The plus
sign on tanh is what the coefficient recurrence (beta_0 = +1) produces.

Example 2: A_t = int W Wperp ds, with the coupled system

    alpha' = 2 alpha^2 - 2 beta^2,  beta' = 1 + 4 alpha beta,

whose complex form zeta = alpha + i beta solves zeta' = i + 2 zeta^2, giving
zeta(s) = tan((1+i) s) / (1-i).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .series import OddPowerSeries, cauchy_convolve, eval_odd_series, eval_odd_series_derivative

SQRT2 = math.sqrt(2.0)
EXACT_ORDER_LIMIT = 30
POLE_GUARD = 1e-6


def blowup_horizon() -> float:
    """pi / (2 sqrt 2): first pole of tan(sqrt2 s)."""
    return math.pi / (2.0 * SQRT2)


@dataclass(frozen=True)
class Ex1Coefficients:
    alpha: OddPowerSeries
    beta: OddPowerSeries


@dataclass(frozen=True)
class Ex2Coefficients:
    alpha: OddPowerSeries
    beta: OddPowerSeries


def _numbers(exact: bool | None, N: int):
    if exact is None:
        exact = N <= EXACT_ORDER_LIMIT
    return (Fraction, Fraction(1), Fraction(0)) if exact else (float, 1.0, 0.0)


def ex1_coefficients(N: int, exact: bool | None = None) -> Ex1Coefficients:
    """alpha_n, beta_n through order N.

    alpha_{n+1} =  2/(2n+3) sum_k alpha_k alpha_{n-k}
    beta_{n+1}  = -2/(2n+3) sum_k beta_k beta_{n-k}

    Rationals for N <= 30 unless ``exact`` says otherwise.
    """
    if N < 0:
        raise ValueError(f"order must be >= 0, got {N}")
    num, one, _ = _numbers(exact, N)
    alpha, beta = [one], [one]
    for n in range(N):
        w = num(2) / (2 * n + 3)
        alpha.append(w * cauchy_convolve(alpha, alpha, n))
        beta.append(-w * cauchy_convolve(beta, beta, n))
    return Ex1Coefficients(OddPowerSeries(tuple(alpha)), OddPowerSeries(tuple(beta)))


def ex2_coefficients(N: int, exact: bool | None = None) -> Ex2Coefficients:
    """Coupled recurrence from alpha_0 = 0, beta_0 = 1.

    alpha_{n+1} = 2/(2n+3) sum_k (alpha_k alpha_{n-k} - beta_k beta_{n-k})
    beta_{n+1}  = 4/(2n+3) sum_k alpha_k beta_{n-k}
    """
    if N < 0:
        raise ValueError(f"order must be >= 0, got {N}")
    num, one, zero = _numbers(exact, N)
    alpha, beta = [zero], [one]
    for n in range(N):
        aa = cauchy_convolve(alpha, alpha, n)
        bb = cauchy_convolve(beta, beta, n)
        ab = cauchy_convolve(alpha, beta, n)
        alpha.append(num(2) / (2 * n + 3) * (aa - bb))
        beta.append(num(4) / (2 * n + 3) * ab)
    return Ex2Coefficients(OddPowerSeries(tuple(alpha)), OddPowerSeries(tuple(beta)))


def ex1_closed(s: float) -> tuple[float, float]:
    """(tan(sqrt2 s)/sqrt2, tanh(sqrt2 s)/sqrt2) for |s| below the blow-up horizon."""
    horizon = blowup_horizon()
    if abs(s) >= horizon - POLE_GUARD:
        if abs(abs(s) - horizon) <= POLE_GUARD:
            raise ValueError(f"blow-up point: s = {s} is within {POLE_GUARD} of pi/(2 sqrt 2)")
        raise ValueError(f"beyond blow-up horizon: |s| = {abs(s)} >= pi/(2 sqrt 2) = {horizon}")
    return math.tan(SQRT2 * s) / SQRT2, math.tanh(SQRT2 * s) / SQRT2


def ex1_riccati_residual(
    N: int, s_grid: Iterable[float], safe_fraction: float = 0.9
) -> tuple[float, float]:
    """Max residuals of alpha' = 1 + 2 alpha^2 and beta' = 1 - 2 beta^2.

    Both sides are evaluated from the order-N truncated series, derivatives
    by term-wise differentiation. Grid points must satisfy
    |s| < safe_fraction * pi/(2 sqrt 2).
    """
    limit = safe_fraction * blowup_horizon()
    grid = list(s_grid)
    bad = [s for s in grid if abs(s) >= limit]
    if bad:
        raise ValueError(f"grid points {bad} outside the safe radius {limit}")
    coeffs = ex1_coefficients(N)
    a, b = coeffs.alpha.as_float(), coeffs.beta.as_float()
    ra = rb = 0.0
    for s in grid:
        av, bv = eval_odd_series(a, s), eval_odd_series(b, s)
        ra = max(ra, abs(eval_odd_series_derivative(a, s) - 1.0 - 2.0 * av * av))
        rb = max(rb, abs(eval_odd_series_derivative(b, s) - 1.0 + 2.0 * bv * bv))
    return ra, rb


def ex1_constant(T: float, reading: str = "quotient") -> float:
    """log of the constant c in E_T(m) E_T^alpha(m_perp) = c exp(eta) for Example 1.

    ``"quotient"``: 1/2 log(cos(sqrt2 T) / cosh(sqrt2 T)), which is what Ito's
    formula gives (see docs/derivation.md) and what the Monte Carlo residual
    confirms. ``"product"``: 1/2 log(cos(sqrt2 T) cosh(sqrt2 T)), the other
    way to read the printed formula; kept for the comparison.
    """
    if T <= 0:
        raise ValueError(f"T must be > 0, got {T}")
    if T >= blowup_horizon():
        raise ValueError(f"beyond blow-up horizon: T = {T} >= pi/(2 sqrt 2)")
    c, ch = math.cos(SQRT2 * T), math.cosh(SQRT2 * T)
    if reading == "quotient":
        return 0.5 * math.log(c / ch)
    if reading == "product":
        return 0.5 * math.log(c * ch)
    raise ValueError(f"unknown reading {reading!r}; expected 'quotient' or 'product'")


def ex2_denominator(s: float) -> float:
    """cos^2 s cosh^2 s + sin^2 s sinh^2 s = |cos((1+i)s)|^2."""
    return math.cos(s) ** 2 * math.cosh(s) ** 2 + math.sin(s) ** 2 * math.sinh(s) ** 2


def ex2_closed(s: float) -> tuple[float, float]:
    """Explicit real formulas for (alpha(s), beta(s)) of Example 2."""
    d = ex2_denominator(s)
    return (
        0.25 * (math.sin(2 * s) - math.sinh(2 * s)) / d,
        0.25 * (math.sin(2 * s) + math.sinh(2 * s)) / d,
    )


def ex2_zeta(s: float) -> tuple[float, float]:
    """(Re, Im) of tan((1+i)s)/(1-i)."""
    z = cmath.tan(complex(s, s)) / complex(1.0, -1.0)
    return z.real, z.imag


def ex2_zeta_derivative(s: float) -> tuple[float, float]:
    # d/ds tan((1+i)s)/(1-i) = (1+i)/(1-i) sec^2((1+i)s) = i sec^2((1+i)s)
    z = 1j / cmath.cos(complex(s, s)) ** 2
    return z.real, z.imag


def ex2_zeta_residual(s_grid: Iterable[float]) -> float:
    """max |zeta'(s) - i - 2 zeta(s)^2| over the grid."""
    worst = 0.0
    for s in s_grid:
        if abs(s) > 10:
            raise ValueError(f"|s| must be <= 10, got {s}")
        zr, zi = ex2_zeta(s)
        dr, di = ex2_zeta_derivative(s)
        # i + 2 zeta^2 in (re, im) pairs
        rhs_r = 2.0 * (zr * zr - zi * zi)
        rhs_i = 1.0 + 4.0 * zr * zi
        worst = max(worst, math.hypot(dr - rhs_r, di - rhs_i))
    return worst
