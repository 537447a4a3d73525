"""Independent reference computations shared by the test modules."""

import itertools
from fractions import Fraction

import sympy


def dyck_count(n):
    """Brute-force count of balanced parenthesis strings of length 2n."""
    count = 0
    for word in itertools.product((1, -1), repeat=2 * n):
        height = 0
        for step in word:
            height += step
            if height < 0:
                break
        else:
            count += height == 0
    return count


def riccati_taylor(sign, order):
    """Taylor coefficients p_k of p' = 1 + sign * 2 p^2, p(0) = 0, over all powers.

    Solved coefficient-wise: (k+1) p_{k+1} = [k == 0] + 2 sign sum_j p_j p_{k-j}.
    Returns the odd-power coefficients p_1, p_3, ...
    """
    p = [Fraction(0)]
    for k in range(2 * order + 1):
        conv = sum(p[j] * p[k - j] for j in range(k + 1))
        p.append((Fraction(int(k == 0)) + 2 * sign * conv) / (k + 1))
    return p[1::2][: order + 1]


def sympy_odd_coeffs(expr, order):
    s = sympy.Symbol("s")
    poly = sympy.series(expr(s), s, 0, 2 * order + 3).removeO()
    return [sympy.nsimplify(sympy.expand(poly).coeff(s, 2 * n + 1)) for n in range(order + 1)]
