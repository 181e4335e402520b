"""Linear matrix pencils and their generalized eigenvalues.

A pencil is stored as the pair ``(lhs, rhs)`` and stands for
``lam * lhs - rhs``; for a continuous-time model that is ``s E - A`` and for
a discretized one ``z Et - At``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce

import numpy as np
import scipy.linalg as la

from .exceptions import PencilError

DEFAULT_INFINITE_TOL = 1e-8
_DELAY_TOL = 1e-12
_SORT_RTOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearPencil:
    """The pencil ``lam * lhs - rhs`` with real square coefficients."""

    lhs: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        lhs = np.atleast_2d(np.asarray(self.lhs, dtype=float))
        rhs = np.atleast_2d(np.asarray(self.rhs, dtype=float))
        if lhs.ndim != 2 or lhs.shape[0] != lhs.shape[1]:
            raise PencilError(f"lhs must be square, got shape {lhs.shape}")
        if rhs.shape != lhs.shape:
            raise PencilError(
                f"dimension mismatch: lhs {lhs.shape} vs rhs {rhs.shape}"
            )
        if lhs.shape[0] < 1:
            raise PencilError("pencil dimension must be at least 1")
        if not (np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))):
            raise PencilError("pencil entries must be finite")
        object.__setattr__(self, "lhs", _frozen(lhs))
        object.__setattr__(self, "rhs", _frozen(rhs))

    @property
    def dim(self) -> int:
        return self.lhs.shape[0]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Finite eigenvalues (sorted) plus the count of infinite ones."""

    finite: np.ndarray
    infinite_count: int
    dim: int

    def __post_init__(self):
        finite = np.asarray(self.finite, dtype=complex).ravel()
        object.__setattr__(self, "finite", sort_eigenvalues(finite))

    def __len__(self):
        return len(self.finite)


def sort_eigenvalues(values) -> np.ndarray:
    """Sort complex values by real part, then imaginary part.

    Real parts closer than ``1e-10`` relative to the largest magnitude are
    treated as equal, so conjugate pairs whose real parts differ in the last
    bit still come out as ``(x - iy, x + iy)``.
    """
    values = np.asarray(values, dtype=complex).ravel()
    if values.size == 0:
        values.setflags(write=False)
        return values
    order = np.lexsort((values.imag, values.real))
    vals = values[order]
    finite = np.isfinite(vals)
    scale = max(1.0, float(np.max(np.abs(vals[finite])))) if finite.any() else 1.0
    tol = _SORT_RTOL * scale
    cluster = np.zeros(len(vals), dtype=int)
    for k in range(1, len(vals)):
        same = abs(vals[k].real - vals[k - 1].real) <= tol
        cluster[k] = cluster[k - 1] + (0 if same else 1)
    out = vals[np.lexsort((vals.imag, cluster))]
    out.setflags(write=False)
    return out


def finite_eigenvalues(p: LinearPencil, infinite_tol: float = DEFAULT_INFINITE_TOL) -> Spectrum:
    """Generalized eigenvalues of ``p``, split into finite and infinite.

    The QZ algorithm returns homogeneous pairs ``(alpha, beta)`` with
    eigenvalue ``alpha / beta``. A pair is declared infinite when
    ``|beta| <= infinite_tol * |(alpha, beta)|``.
    """
    if not 0.0 < infinite_tol < 1.0:
        raise PencilError(f"infinite_tol must lie in (0, 1), got {infinite_tol}")
    try:
        ab = la.eig(p.rhs, p.lhs, left=False, right=False, homogeneous_eigvals=True)
    except (la.LinAlgError, ValueError) as exc:
        raise PencilError(f"QZ failed for pencil of dimension {p.dim}: {exc}") from exc
    alpha, beta = ab[0], ab[1]
    scale = np.hypot(np.abs(alpha), np.abs(beta))
    infinite = np.abs(beta) <= infinite_tol * scale
    finite = alpha[~infinite] / beta[~infinite]
    return Spectrum(finite=finite, infinite_count=int(infinite.sum()), dim=p.dim)


def is_discrete_stable(s: Spectrum) -> bool:
    """True iff every finite eigenvalue lies in the open unit disc."""
    return bool(np.all(np.abs(s.finite) < 1.0))


def is_continuous_stable(s: Spectrum) -> bool:
    """True iff every finite eigenvalue has strictly negative real part."""
    return bool(np.all(s.finite.real < 0.0))


def _as_fraction(d) -> Fraction:
    if isinstance(d, (int, Fraction)):
        return Fraction(d)
    frac = Fraction(float(d)).limit_denominator(10**6)
    if abs(float(frac) - float(d)) > _DELAY_TOL * max(1.0, abs(float(d))):
        raise PencilError(f"delay multiplier {d!r} is not commensurable on a rational grid")
    return frac


def delay_grid(delays) -> tuple[Fraction, list[int]]:
    """Common grid ``eps`` and integer slot indices ``c_i`` with ``a_i = c_i * eps``."""
    fracs = [_as_fraction(d) for d in delays]
    if any(f < 0 for f in fracs):
        raise PencilError("delay multipliers must be non-negative")
    positive = [f for f in fracs if f > 0]
    if not positive:
        raise PencilError("at least one positive delay multiplier is required")
    num = reduce(math.gcd, (f.numerator for f in positive))
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in positive))
    eps = Fraction(num, den)
    return eps, [int(f / eps) for f in fracs]


def companion_pencil(blocks) -> LinearPencil:
    """Block-companion pencil of a recursion with several delayed arguments.

    ``blocks`` is a sequence of ``(delay, coefficient)`` pairs describing
    ``sum_k C_k x_{t - d_k h} = 0``. Delays are mapped to integer slots on
    their common grid ``eps``; with ``n`` the largest slot, the stacked state
    is ``[x_{t-(n-1)eps}, ..., x_{t-eps}, x_t]`` and the pencil reads::

        Et = diag(I, ..., I, C_0)
        At = [[0, I, 0, ...], ..., [-C_n, -C_{n-1}, ..., -C_1]]

    Its finite eigenvalues are the roots ``w`` of
    ``det(sum_k C_k w^(n - c_k)) = 0``, i.e. the per-grid-step multipliers.
    For integer delays (``eps == 1``) ``w`` is the per-step multiplier ``z``.
    """
    blocks = list(blocks)
    if not blocks:
        raise PencilError("companion_pencil needs at least one block")
    eps, slots = delay_grid([d for d, _ in blocks])
    mats = [np.atleast_2d(np.asarray(c, dtype=float)) for _, c in blocks]
    r = mats[0].shape[0]
    if any(m.shape != (r, r) for m in mats):
        raise PencilError("all coefficient blocks must share one square shape")
    if 0 not in slots:
        raise PencilError("a zero-delay block (the coefficient of x_t) is required")

    n = max(slots)
    coeff = [np.zeros((r, r)) for _ in range(n + 1)]
    for c, m in zip(slots, mats):
        coeff[c] = coeff[c] + m

    dim = n * r
    lhs = np.eye(dim)
    lhs[-r:, -r:] = coeff[0]
    rhs = np.zeros((dim, dim))
    for k in range(n - 1):
        rhs[k * r:(k + 1) * r, (k + 1) * r:(k + 2) * r] = np.eye(r)
    # last block row: -C_n x_{t-n} - ... - C_1 x_{t-1}
    for j in range(n):
        rhs[-r:, j * r:(j + 1) * r] = -coeff[n - j]
    return LinearPencil(lhs, rhs)
