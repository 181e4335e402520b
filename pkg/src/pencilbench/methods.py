"""Catalog of integration methods: discrete pencils and growth functions.

Every method maps the linearized model ``(E, A)`` and a step ``h`` to a
pencil ``z Et - At`` whose finite eigenvalues are the per-step multipliers
of the discretized modes. The scalar counterpart is the growth function
``R(lam h)`` obtained for ``E = 1, A = lam``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as la

from .exceptions import MethodError
from .pencil import LinearPencil, companion_pencil

DIRK_ALPHA = 1.0 - 1.0 / np.sqrt(2.0)
DIRK_BETA = -np.sqrt(2.0)
DIRK_GAMMA = 1.0 + np.sqrt(2.0)

_POLE_TOL = 1e-14
_EQ_TOL = 1e-12

ONE_STEP_TAGS = ("FEM", "RK4", "BEM", "ITM", "DIRK2S")


@dataclass(frozen=True)
class MethodSpec:
    """Immutable description of an integration method.

    ``moebius`` holds ``(a, b, c, d)`` of the bilinear family
    ``z (a E - c h A) - (d h A - b E)``; ``c`` and ``d`` always carry one
    factor of ``h``. ``tableau`` holds ``(Q, weights)`` as nested tuples.
    """

    tag: str
    is_implicit: bool
    order: int
    step_multiplicity: int = 1
    moebius: Optional[tuple] = None
    tableau: Optional[tuple] = None
    name: Optional[str] = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.tag == "MOEBIUS":
            return "moebius:" + ",".join(f"{v:g}" for v in self.moebius)
        return _LABELS.get(self.tag, self.tag.lower())

    @property
    def Q(self) -> np.ndarray:
        return np.array(self.tableau[0], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array(self.tableau[1], dtype=float)


_LABELS = {"FEM": "fem", "RK4": "rk4", "BEM": "bem", "ITM": "itm", "DIRK2S": "dirk2s", "BDF2": "bdf2"}

FEM = MethodSpec("FEM", False, 1)
RK4 = MethodSpec("RK4", False, 4)
BEM = MethodSpec("BEM", True, 1)
ITM = MethodSpec("ITM", True, 2)
DIRK2S = MethodSpec("DIRK2S", True, 2)
BDF2 = MethodSpec("BDF2", True, 2, step_multiplicity=2)

CATALOG = {"fem": FEM, "rk4": RK4, "bem": BEM, "itm": ITM, "dirk2s": DIRK2S, "bdf2": BDF2}

RK4_TABLEAU = (
    ((0.0, 0.0, 0.0, 0.0), (0.5, 0.0, 0.0, 0.0), (0.0, 0.5, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0)),
    (1 / 6, 1 / 3, 1 / 3, 1 / 6),
)


def moebius(a, b, c, d, name=None) -> MethodSpec:
    """Member of the bilinear family; ``c`` and ``d`` are multiplied by ``h``."""
    a, b, c, d = (float(v) for v in (a, b, c, d))
    if abs(a * d - b * c) <= _EQ_TOL * max(1.0, abs(a * d), abs(b * c)):
        raise MethodError(f"degenerate Moebius quadruple (ad - bc = 0): {(a, b, c, d)}")
    return MethodSpec("MOEBIUS", c != 0.0, _moebius_order(a, b, c, d), moebius=(a, b, c, d), name=name)


def _moebius_order(a, b, c, d) -> int:
    # z = (-b + d x) / (a - c x) = 1 + (c+d)/a x + c(c+d)/a^2 x^2 + ...
    if abs(a + b) > _EQ_TOL * abs(a):
        return 0
    c, d = c / a, d / a
    if abs(c + d - 1.0) > _EQ_TOL:
        return 0
    return 2 if abs(c - 0.5) <= _EQ_TOL else 1


def butcher(Q, weights, order=None, name=None) -> MethodSpec:
    """Runge-Kutta method from its generating matrix ``Q`` and ``weights``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    if Q.shape[0] != Q.shape[1] or w.size != Q.shape[0]:
        raise MethodError(f"tableau shape mismatch: Q {Q.shape}, weights {w.shape}")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(w))):
        raise MethodError("tableau entries must be finite")
    implicit = bool(np.any(np.triu(Q) != 0.0))
    if order is None:
        order = _tableau_order(Q, w)
    return MethodSpec("TABLEAU", implicit, int(order),
                      tableau=(tuple(map(tuple, Q)), tuple(w)), name=name)


def _tableau_order(Q, w) -> int:
    # order of the stability function: match x^k/k! in R = N/D
    n = _poly_det(Q - np.outer(np.ones(len(w)), w))
    dd = _poly_det(Q)
    terms = len(w) + 6
    series = np.zeros(terms)
    for k in range(terms):  # N = D * series
        acc = n[k] if k < len(n) else 0.0
        for j in range(1, min(k, len(dd) - 1) + 1):
            acc -= dd[j] * series[k - j]
        series[k] = acc / dd[0]
    fact = 1.0
    for k in range(terms):
        if k:
            fact *= k
        if abs(series[k] - 1.0 / fact) > 1e-10:
            return max(k - 1, 0)
    return terms - 1


def _poly_det(M) -> np.ndarray:
    """Coefficients ``c_k`` (ascending) of ``det(I - x M) = sum c_k x^k``."""
    return np.real_if_close(np.poly(M)).astype(float)


def load_tableau(path) -> MethodSpec:
    """Read ``{"Q": [[...]], "weights": [...], "order": p}`` from JSON."""
    path = Path(path)
    data = json.loads(path.read_text())
    for key in ("Q", "weights"):
        if key not in data:
            raise MethodError(f"{path}: tableau file missing key {key!r}")
    return butcher(data["Q"], data["weights"], data.get("order"), name=f"rk:{path.name}")


def parse_methods(text: str) -> list[MethodSpec]:
    """Parse a comma separated method list.

    Accepted names are ``fem, rk4, bem, itm, dirk2s, bdf2``, ``moebius:a,b,c,d``
    (which consumes the next three comma separated numbers) and
    ``rk:<tableau.json>``.
    """
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        low = tok.lower()
        if low.startswith("moebius:"):
            raw = [tok.split(":", 1)[1]] + tokens[i + 1:i + 4]
            if len(raw) != 4:
                raise MethodError(f"moebius needs four coefficients, got {raw}")
            try:
                vals = [float(v.rstrip("h")) for v in raw]
            except ValueError as exc:
                raise MethodError(f"bad moebius coefficient in {raw}") from exc
            out.append(moebius(*vals))
            i += 4
            continue
        if low.startswith("rk:"):
            out.append(load_tableau(tok[3:]))
        elif low in CATALOG:
            out.append(CATALOG[low])
        else:
            raise MethodError(f"unknown method {tok!r}; expected one of {sorted(CATALOG)}, moebius:a,b,c,d or rk:file")
        i += 1
    if not out:
        raise MethodError("empty method list")
    return out


# ----------------------------------------------------------------- pencils


def _matpow_series(E, hA, coeffs):
    """``c_0 E + c_1 hA + c_2 (hA)^2 + ...``"""
    out = coeffs[0] * E
    P = np.eye(E.shape[0])
    for c in coeffs[1:]:
        P = P @ hA
        out = out + c * P
    return out


def build_pencil(spec: MethodSpec, lm, h: float) -> LinearPencil:
    """Discrete pencil ``z Et - At`` of ``spec`` applied to ``lm`` with step ``h``."""
    if not h > 0:
        raise MethodError(f"step h must be positive, got {h}")
    E, A = lm.E, lm.A
    tag = spec.tag
    if tag == "FEM":
        return LinearPencil(E, E + h * A)
    if tag == "RK4":
        hA = h * A
        hA2 = hA @ hA
        hA3 = hA2 @ hA
        return LinearPencil(E, E + hA + hA2 / 2 + hA3 / 6 + (hA3 @ hA) / 24)
    if tag == "BEM":
        return LinearPencil(E - h * A, E)
    if tag == "ITM":
        return LinearPencil(E - (0.5 * h) * A, E + (0.5 * h) * A)
    if tag == "DIRK2S":
        M = E - (DIRK_ALPHA * h) * A
        lu, piv = la.lu_factor(M, check_finite=False)
        if np.linalg.cond(M) > 1.0 / np.finfo(float).eps or np.any(np.diag(lu) == 0):
            raise MethodError(f"E - alpha h A is singular for h={h}")
        X = la.lu_solve((lu, piv), E)
        return LinearPencil(M, (E - (DIRK_ALPHA * DIRK_BETA * h) * A) @ X)
    if tag == "BDF2":
        return companion_pencil([(0, E - (2.0 / 3.0 * h) * A), (1, -4.0 / 3.0 * E), (2, 1.0 / 3.0 * E)])
    if tag == "MOEBIUS":
        a, b, c, d = spec.moebius
        return LinearPencil(a * E - (c * h) * A, (d * h) * A - b * E)
    if tag == "TABLEAU":
        Q, w = spec.Q, spec.weights
        dd = _poly_det(Q)
        nn = _poly_det(Q - np.outer(np.ones(len(w)), w))
        hA = h * A
        return LinearPencil(_matpow_series(E, hA, dd), _matpow_series(E, hA, nn))
    raise MethodError(f"unsupported method tag {tag!r} for the pencil path")


# ------------------------------------------------------------ growth / roots


def _ratio(num, den, scale):
    if abs(den) <= _POLE_TOL * max(1.0, scale):
        raise MethodError(f"pole of the growth function (|denominator| = {abs(den):.3e})")
    return num / den


def rk_growth_from_tableau(Q, weights, lam_h) -> complex:
    """``det(I - x Q + x e w) / det(I - x Q)`` at ``x = lam_h``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    w = np.asarray(weights, dtype=float).reshape(1, -1)
    x = complex(lam_h)
    rho = Q.shape[0]
    I = np.eye(rho)
    den = np.linalg.det(I - x * Q)
    num = np.linalg.det(I - x * Q + x * np.ones((rho, 1)) @ w)
    return complex(_ratio(num, den, 1.0))


def bdf2_roots(lam_h) -> np.ndarray:
    """Roots of ``(1 - 2x/3) z^2 - 4z/3 + 1/3``, principal root first."""
    x = complex(lam_h)
    roots = np.roots([1.0 - 2.0 * x / 3.0, -4.0 / 3.0, 1.0 / 3.0]).astype(complex)
    with np.errstate(over="ignore", invalid="ignore"):
        target = np.exp(x)
    if np.isfinite(target):
        key = np.abs(roots - target)
    else:
        key = -np.abs(roots)
    return roots[np.argsort(key, kind="stable")]


def growth_roots(spec: MethodSpec, lam_h) -> np.ndarray:
    """Per-step multipliers of the Dahlquist solution; principal root first."""
    x = complex(lam_h)
    tag = spec.tag
    if tag == "FEM":
        z = 1 + x
    elif tag == "RK4":
        z = 1 + x + x**2 / 2 + x**3 / 6 + x**4 / 24
    elif tag == "BEM":
        z = _ratio(1.0, 1 - x, 1.0)
    elif tag == "ITM":
        z = _ratio(1 + 0.5 * x, 1 - 0.5 * x, abs(x))
    elif tag == "DIRK2S":
        z = _ratio(1 - DIRK_ALPHA * DIRK_BETA * x, (1 - DIRK_ALPHA * x) ** 2, abs(x) ** 2)
    elif tag == "BDF2":
        return bdf2_roots(x)
    elif tag == "MOEBIUS":
        a, b, c, d = spec.moebius
        z = _ratio(d * x - b, a - c * x, abs(a) + abs(c * x))
    elif tag == "TABLEAU":
        z = rk_growth_from_tableau(spec.Q, spec.weights, x)
    else:
        raise MethodError(f"unsupported method tag {tag!r}")
    return np.array([z], dtype=complex)


# ------------------------------------------------------- Moebius properties


def moebius_map(a, b, c, d, s):
    """``z`` solving ``s = (a z + b) / (c z + d)``."""
    s = np.asarray(s, dtype=complex)
    return (b - d * s) / (c * s - a)


def _close(u, v):
    return abs(u - v) <= _EQ_TOL * max(1.0, abs(u), abs(v))


def moebius_is_symmetric_a_stable(a, b, c, d) -> bool:
    """Whether the quadruple maps the open left half-plane onto the open unit disc.

    Requires ``a = b, c = -d`` or ``a = -b, c = d``. Under either condition
    ``Re(s) < 0`` becomes ``a c (|z|^2 - 1) < 0``, so ``a c > 0`` is needed as
    well; with ``a c < 0`` the left half-plane lands outside the disc.
    """
    if _close(a * d, b * c):
        raise MethodError(f"degenerate Moebius quadruple (ad - bc = 0): {(a, b, c, d)}")
    symmetric = (_close(a, b) and _close(c, -d)) or (_close(a, -b) and _close(c, d))
    return bool(symmetric and a * c > 0)


def stability_region_sample(spec: MethodSpec, re_range=(-4.0, 4.0), im_range=(-4.0, 4.0),
                            resolution=(201, 201)):
    """Sample the region ``max |growth_roots(lam h)| < 1`` on a rectangle.

    Returns ``(re, im, mask)`` with ``mask[i, j]`` for ``lam h = re[j] + 1j im[i]``.
    Poles of the growth function count as unstable.
    """
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    re = np.linspace(re_range[0], re_range[1], int(nx))
    im = np.linspace(im_range[0], im_range[1], int(ny))
    mask = np.zeros((len(im), len(re)), dtype=bool)
    for i, y in enumerate(im):
        for j, x in enumerate(re):
            mask[i, j] = is_stable_point(spec, complex(x, y))
    return re, im, mask


def is_stable_point(spec: MethodSpec, lam_h) -> bool:
    try:
        roots = growth_roots(spec, lam_h)
    except MethodError:
        return False
    return bool(np.max(np.abs(roots)) < 1.0)
