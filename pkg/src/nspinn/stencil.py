"""Central finite-difference stencils from the Vandermonde moment system."""

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
import sympy


@dataclass(frozen=True)
class Stencil:
    """Weights a_{-ell..ell} with sum_i a_i i^j = p! [j == p] for j < p + n."""

    p: int
    n: int
    ell: int
    coeffs: tuple
    exact: tuple = ()

    @property
    def offsets(self):
        return np.arange(-self.ell, self.ell + 1)

    @property
    def weights(self):
        return np.asarray(self.coeffs, dtype=float)

    def moment(self, j):
        if self.exact:
            return float(sum(c * Fraction(int(i)) ** j for c, i in zip(self.exact, self.offsets)))
        return float(np.sum(self.weights * self.offsets.astype(float) ** j))

    def moment_defect(self):
        """Largest violation of the moment equations, scaled by p!."""
        scale = math.factorial(self.p)
        worst = 0.0
        for j in range(self.p + self.n):
            target = scale if j == self.p else 0.0
            worst = max(worst, abs(self.moment(j) - target) / scale)
        return worst


def fd_weights(p: int, n: int) -> Stencil:
    if p < 1 or n < 1:
        raise ValueError(f"need p >= 1 and n >= 1, got p={p}, n={n}")
    if (p + n) % 2 == 0:
        warnings.warn(f"p + n = {p + n} is even; using n = {n + 1} so the stencil is centred",
                      stacklevel=2)
        n += 1
    return _solve(p, n)


@lru_cache(maxsize=None)
def _solve(p, n):
    ell = (p + n - 1) // 2
    size = 2 * ell + 1
    # exact rational solve, so the weights carry no rounding of their own
    A = sympy.Matrix(size, size, lambda j, i: sympy.Integer(i - ell) ** j)
    rhs = sympy.Matrix([math.factorial(p) if j == p else 0 for j in range(size)])
    sol = A.LUsolve(rhs)
    exact = tuple(Fraction(int(v.p), int(v.q)) for v in sol)
    st = Stencil(p=p, n=n, ell=ell, coeffs=tuple(float(v) for v in exact), exact=exact)
    defect = st.moment_defect()
    if defect > 1e-10:
        raise ArithmeticError(f"moment system residual {defect:.3e} for p={p}, n={n}")
    return st
