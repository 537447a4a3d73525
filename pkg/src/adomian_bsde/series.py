"""Quadratic convolution recurrences, the Catalan majorant and radius estimation.

Odd power series ``sum_n c_n s**(2n+1)`` are the common currency: the
coefficient sequences of both exactly solvable examples live here, and the
Catalan numbers give the majorant that controls convergence of the Adomian
iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

Number = Union[int, Fraction, float]


@dataclass(frozen=True)
class OddPowerSeries:
    """Truncated odd series ``sum_{n<=N} c_n s**(2n+1)``.

    ``coeffs`` may hold Fractions (exact) or floats. The truncation order
    ``N`` is ``len(coeffs) - 1``.
    """

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(self.coeffs)
        if not coeffs:
            raise ValueError("OddPowerSeries needs at least one coefficient")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def __len__(self) -> int:
        return len(self.coeffs)

    def __getitem__(self, n):
        return self.coeffs[n]

    def as_float(self) -> "OddPowerSeries":
        return OddPowerSeries(tuple(float(c) for c in self.coeffs))

    def truncate(self, order: int) -> "OddPowerSeries":
        if order < 0 or order > self.order:
            raise ValueError(f"cannot truncate order-{self.order} series to order {order}")
        return OddPowerSeries(self.coeffs[: order + 1])

    def derivative_coeffs(self) -> list:
        """Coefficients d_n of the even series ``sum d_n s**(2n)`` = d/ds of self."""
        return [(2 * n + 1) * c for n, c in enumerate(self.coeffs)]


@dataclass(frozen=True)
class CatalanTable:
    values: tuple

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        if not values or values[0] != 1 or any(v <= 0 for v in values):
            raise ValueError("Catalan table must start at 1 with positive entries")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, n):
        return self.values[n]


@dataclass(frozen=True)
class MajorantParams:
    """Inputs of the BMO majorant ``a_n (1+|beta|)^n |L0|^(n+1)``.

    ``beta`` is the orthogonal-bracket weight 1/alpha of the BSDE.
    """

    beta: float
    L0_norm: float
    A_omega: float
    gamma: float = 0.0

    def __post_init__(self):
        if self.L0_norm < 0:
            raise ValueError(f"L0_norm must be >= 0, got {self.L0_norm}")
        if self.A_omega < 0:
            raise ValueError(f"A_omega must be >= 0, got {self.A_omega}")

    @classmethod
    def from_gamma(cls, beta: float, A_omega: float, gamma: float) -> "MajorantParams":
        # with eta_bar = 0 the zeroth martingale is bounded by |gamma A|_omega
        return cls(beta=beta, L0_norm=abs(gamma) * A_omega, A_omega=A_omega, gamma=gamma)


def catalan_recurrence(N: int) -> CatalanTable:
    """a_0..a_N from ``a_{n+1} = sum_k a_k a_{n-k}`` in exact integers."""
    if N < 0:
        raise ValueError(f"order must be >= 0, got {N}")
    a = [1]
    for n in range(N):
        a.append(sum(a[k] * a[n - k] for k in range(n + 1)))
    return CatalanTable(tuple(a))


def catalan_closed(n: int) -> int:
    """``binom(2n+2, n+1) / (4n+2)``; the division is exact."""
    if n < 0:
        raise ValueError(f"index must be >= 0, got {n}")
    q, r = divmod(math.comb(2 * n + 2, n + 1), 4 * n + 2)
    assert r == 0
    return q


def cauchy_convolve(a: OddPowerSeries | Sequence, b: OddPowerSeries | Sequence, n: int):
    """``sum_{k=0}^n a_k b_{n-k}``."""
    for name, s in (("a", a), ("b", b)):
        if len(s) <= n:
            raise IndexError(
                f"series {name} has coefficients through index {len(s) - 1}; index {n} is missing"
            )
    return sum(a[k] * b[n - k] for k in range(n + 1))


def majorant_term(n: int, p: MajorantParams) -> float:
    if n < 0:
        raise ValueError(f"index must be >= 0, got {n}")
    return catalan_closed(n) * (1.0 + abs(p.beta)) ** n * p.L0_norm ** (n + 1)


def majorant_ratios(p: MajorantParams, n_max: int) -> list[float]:
    """Successive ratios term(n+1)/term(n) for n = 0..n_max-1.

    Computed from the closed ratio a_{n+1}/a_n = 2(2n+1)/(n+2) so that no
    term overflows for large n.
    """
    if p.L0_norm == 0:
        return [0.0] * n_max
    q = (1.0 + abs(p.beta)) * p.L0_norm
    return [2.0 * (2 * n + 1) / (n + 2) * q for n in range(n_max)]


def convergence_threshold(p: MajorantParams) -> float:
    """Largest gamma for which the majorant series converges: 1/(4|A|_w(1+|beta|))."""
    if p.A_omega == 0:
        raise ValueError("threshold undefined; any gamma admissible (A_omega = 0)")
    return 1.0 / (4.0 * p.A_omega * (1.0 + abs(p.beta)))


def root_test_radius(a: OddPowerSeries | Sequence) -> float:
    """Estimate the radius of convergence in s of ``sum c_n s**(2n+1)``.

    Estimator: over the tail window n in [N//2, N], take the geometric mean of
    successive ratios |c_n / c_{n+1}| between nonzero coefficients. This
    telescopes to (|c_i| / |c_j|)**(1/(j-i)) for the first and last nonzero
    indices i < j of the window and estimates 1/limsup |c_n|**(1/n) in the
    variable s**2; the square root converts it to a radius in s. Zero
    coefficients inside the window (series with a period-2 sign/zero
    pattern) are skipped.
    """
    coeffs = a.coeffs if isinstance(a, OddPowerSeries) else tuple(a)
    N = len(coeffs) - 1
    if N + 1 < 16:
        raise ValueError(f"root_test_radius needs >= 16 coefficients, got {N + 1}")
    window = [(n, abs(float(coeffs[n]))) for n in range(N // 2, N + 1)]
    nonzero = [(n, c) for n, c in window if c > 0.0]
    if len(nonzero) < 2:
        return math.inf
    (i, ci), (j, cj) = nonzero[0], nonzero[-1]
    log_rho = (math.log(ci) - math.log(cj)) / (j - i)
    return math.exp(0.5 * log_rho)


def eval_odd_series(a: OddPowerSeries | Sequence, s: float, guarded: bool = False) -> float:
    """Horner evaluation in s**2, times s. Exact oddness: f(-s) == -f(s).

    With ``guarded=True`` the call is refused unless |s| < 0.95 times the
    estimated radius.
    """
    coeffs = a.coeffs if isinstance(a, OddPowerSeries) else tuple(a)
    if guarded:
        radius = root_test_radius(coeffs)
        if abs(s) >= 0.95 * radius:
            raise ValueError(
                f"|s| = {abs(s)} outside the guarded region 0.95 * radius (radius estimate {radius})"
            )
    s2 = s * s
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * s2 + float(c)
    return acc * s


def eval_odd_series_derivative(a: OddPowerSeries | Sequence, s: float) -> float:
    coeffs = a.coeffs if isinstance(a, OddPowerSeries) else tuple(a)
    s2 = s * s
    acc = 0.0
    for n in range(len(coeffs) - 1, -1, -1):
        acc = acc * s2 + (2 * n + 1) * float(coeffs[n])
    return acc
