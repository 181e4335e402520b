"""Semi-explicit DAE models ``E x' = phi(x)``, linearization and file ingestion."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .exceptions import ModelError, ModelFormatError
from .pencil import LinearPencil

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-10
_MAX_HALVINGS = 20


@dataclass(frozen=True, eq=False)
class DaeModel:
    """Nonlinear DAE ``E x' = phi(x)`` with ``r = m_x + m_y`` variables.

    ``build`` maps a parameter dict to ``(phi, jac)``; keeping the builder
    lets :meth:`with_params` produce mutated copies without hidden state.
    ``jac`` may be ``None``, in which case central differences are used.
    """

    name: str
    E: np.ndarray
    m_x: int
    m_y: int
    params: dict
    build: Callable[[dict], tuple]
    guess: Optional[np.ndarray] = None
    _phi: Callable = field(init=False, repr=False)
    _jac: Optional[Callable] = field(init=False, repr=False)

    def __post_init__(self):
        E = np.array(self.E, dtype=float)
        E.setflags(write=False)
        object.__setattr__(self, "E", E)
        if E.shape != (self.dim, self.dim):
            raise ModelError(f"E has shape {E.shape}, expected ({self.dim}, {self.dim})")
        if self.m_x < 0 or self.m_y < 0 or self.dim < 1:
            raise ModelError("m_x, m_y must be non-negative with m_x + m_y >= 1")
        phi, jac = self.build(dict(self.params))
        object.__setattr__(self, "_phi", phi)
        object.__setattr__(self, "_jac", jac)

    @property
    def dim(self) -> int:
        return self.m_x + self.m_y

    @property
    def is_explicit_dae(self) -> bool:
        return np.array_equal(self.E, explicit_mass_matrix(self.m_x, self.m_y))

    def residual(self, x) -> np.ndarray:
        return np.asarray(self._phi(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._jac is None:
            return fd_jacobian(self.residual, x)
        return np.atleast_2d(np.asarray(self._jac(x), dtype=float))

    def with_params(self, **changes) -> "DaeModel":
        """Copy of the model with some parameters replaced."""
        unknown = set(changes) - set(self.params)
        if unknown:
            raise ModelError(f"model {self.name!r} has no parameter(s) {sorted(unknown)}")
        return replace(self, params={**self.params, **changes})


@dataclass(frozen=True, eq=False)
class LinearizedModel:
    """Pencil ``s E - A`` of a model linearized at ``x_o``."""

    pencil: LinearPencil
    x_o: np.ndarray
    model: Optional[DaeModel] = None

    @property
    def E(self) -> np.ndarray:
        return self.pencil.lhs

    @property
    def A(self) -> np.ndarray:
        return self.pencil.rhs

    @property
    def dim(self) -> int:
        return self.pencil.dim


def explicit_mass_matrix(m_x: int, m_y: int) -> np.ndarray:
    E = np.zeros((m_x + m_y, m_x + m_y))
    E[:m_x, :m_x] = np.eye(m_x)
    return E


def fd_jacobian(fun, x) -> np.ndarray:
    """Central-difference Jacobian with step ``sqrt(eps) * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    J = np.empty((f0.size, x.size))
    base = np.sqrt(np.finfo(float).eps)
    for i in range(x.size):
        step = base * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * step)
    return J


def find_equilibrium(m: DaeModel, guess=None, tol: float = EQUILIBRIUM_TOL, max_iter: int = 50) -> np.ndarray:
    """Solve ``phi(x) = 0`` by Newton's method with step halving."""
    if guess is None:
        guess = m.guess if m.guess is not None else np.zeros(m.dim)
    x = np.array(guess, dtype=float).reshape(m.dim)
    f = m.residual(x)
    norm = np.max(np.abs(f))
    for _ in range(max_iter):
        if norm <= tol:
            return x
        J = m.jacobian(x)
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise ModelError(f"singular Jacobian at x={x}") from exc
        step = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            x_new = x + step * dx
            f_new = m.residual(x_new)
            norm_new = np.max(np.abs(f_new))
            if np.isfinite(norm_new) and norm_new < norm:
                break
            step *= 0.5
        else:
            raise ModelError(f"line search failed, residual {norm:.3e}")
        x, f, norm = x_new, f_new, norm_new
    if norm <= tol:
        return x
    raise ModelError(f"no equilibrium after {max_iter} iterations, residual {norm:.3e}")


def linearize(m: DaeModel, x_o, tol: float = EQUILIBRIUM_TOL) -> LinearizedModel:
    x_o = np.asarray(x_o, dtype=float).reshape(m.dim)
    res = np.max(np.abs(m.residual(x_o)))
    if res > tol:
        raise ModelError(f"x_o is not an equilibrium: residual {res:.3e} > {tol:.1e}")
    return LinearizedModel(LinearPencil(m.E, m.jacobian(x_o)), x_o, m)


# --------------------------------------------------------------- builders


def _linear_build(p):
    A, b = p["A"], p["b"]

    def phi(x):
        return A @ x + b

    return phi, lambda x: A


def linear_model(E, A, b=None, m_x=None, m_y=None, name="linear") -> DaeModel:
    """DAE model with ``phi(x) = A x + b``; params ``A`` and ``b`` are mutable."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    r = A.shape[0]
    if m_x is None:
        m_x = r if m_y is None else r - m_y
    if m_y is None:
        m_y = r - m_x
    b = np.zeros(r) if b is None else np.asarray(b, dtype=float).reshape(r)
    return DaeModel(name, E, m_x, m_y, {"A": A, "b": b}, _linear_build)


def dahlquist(lam) -> DaeModel:
    """Test equation ``x' = lam x``.

    A complex ``lam = a + jb`` yields the real two-state rotation form
    ``[[a, -b], [b, a]]`` whose eigenvalues are ``a +/- jb``.
    """
    lam = complex(lam)
    if not np.isfinite(lam):
        raise ModelError("lambda must be finite")
    if lam.imag == 0.0:
        A = np.array([[lam.real]])
    else:
        A = np.array([[lam.real, -lam.imag], [lam.imag, lam.real]])
    return linear_model(np.eye(A.shape[0]), A, name=f"dahlquist({lam})")


def stiff2(sigma_fast: float, sigma_slow: float) -> DaeModel:
    """Decoupled two-state ODE with decay rates ``sigma_fast`` and ``sigma_slow``."""
    if not (sigma_fast > 0 and sigma_slow > 0 and np.isfinite(sigma_fast) and np.isfinite(sigma_slow)):
        raise ModelError("stiff2 rates must be positive and finite")
    return linear_model(np.eye(2), np.diag([-sigma_fast, -sigma_slow]),
                        name=f"stiff2({sigma_fast}, {sigma_slow})")


SMIB_DEFAULTS = {
    "omega_b": 2 * np.pi * 60.0,
    "H": 3.5,
    "D": 1.0,
    "p_m": 0.8,
    "e": 1.05,
    "v": 1.0,
    "x_eq": 0.65,
}


def _smib_build(p):
    wb, H, D, pm = p["omega_b"], p["H"], p["D"], p["p_m"]
    k = p["e"] * p["v"] / p["x_eq"]

    def phi(x):
        delta, omega, pe = x
        return np.array([
            wb * (omega - 1.0),
            (pm - pe - D * (omega - 1.0)) / (2.0 * H),
            pe - k * np.sin(delta),
        ])

    def jac(x):
        delta = x[0]
        return np.array([
            [0.0, wb, 0.0],
            [0.0, -D / (2.0 * H), -1.0 / (2.0 * H)],
            [-k * np.cos(delta), 0.0, 1.0],
        ])

    return phi, jac


def _check_smib(p):
    for key in ("omega_b", "H", "e", "v", "x_eq"):
        if not (np.isfinite(p[key]) and p[key] > 0):
            raise ModelError(f"smib parameter {key} must be positive, got {p[key]}")
    if not (np.isfinite(p["D"]) and p["D"] >= 0):
        raise ModelError(f"smib damping D must be non-negative, got {p['D']}")
    if not abs(p["p_m"]) < p["e"] * p["v"] / p["x_eq"]:
        raise ModelError("smib p_m exceeds the transfer limit e*v/x_eq; no equilibrium")


def smib(**params) -> DaeModel:
    """Single machine against an infinite bus, states (delta, omega) and algebraic p_e.

    ::

        delta' = omega_b (omega - 1)
        omega' = (p_m - p_e - D (omega - 1)) / (2 H)
        0      = p_e - (e v / x_eq) sin(delta)
    """
    unknown = set(params) - set(SMIB_DEFAULTS)
    if unknown:
        raise ModelError(f"unknown smib parameter(s) {sorted(unknown)}")
    p = {**SMIB_DEFAULTS, **{k: float(v) for k, v in params.items()}}
    _check_smib(p)

    def build(q):
        _check_smib(q)
        return _smib_build(q)

    delta0 = np.arcsin(p["p_m"] * p["x_eq"] / (p["e"] * p["v"]))
    guess = np.array([delta0 + 0.05, 1.0, p["p_m"]])
    return DaeModel("smib", explicit_mass_matrix(2, 1), 2, 1, p, build, guess=guess)


def builtin_model(name: str, *args, **kwargs) -> DaeModel:
    """Look up a built-in model: ``dahlquist``, ``stiff2`` or ``smib``."""
    table = {"dahlquist": dahlquist, "stiff2": stiff2, "smib": smib}
    try:
        ctor = table[name]
    except KeyError:
        raise ModelError(f"unknown built-in model {name!r}; choose from {sorted(table)}") from None
    return ctor(*args, **kwargs)


def mode_model(s) -> LinearizedModel:
    """Real linear ODE whose only mode(s) are ``s`` (and its conjugate)."""
    m = dahlquist(s)
    return LinearizedModel(LinearPencil(m.E, m.params["A"]), np.zeros(m.dim), m)


# ---------------------------------------------------------------- file I/O


def _parse_matrix(obj, key, r=None) -> np.ndarray:
    if isinstance(obj, dict):
        if "coo" not in obj or "shape" not in obj:
            raise ModelFormatError(f"key {key!r}: sparse matrix needs 'coo' and 'shape'")
        try:
            shape = tuple(int(n) for n in obj["shape"])
            M = np.zeros(shape)
            for entry in obj["coo"]:
                i, j, v = entry
                M[int(i), int(j)] += float(v)
        except (TypeError, ValueError, IndexError) as exc:
            raise ModelFormatError(f"key {key!r}: bad COO entry ({exc})") from exc
    else:
        try:
            M = np.array(obj, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"key {key!r}: not a numeric matrix ({exc})") from exc
        if M.ndim != 2:
            raise ModelFormatError(f"key {key!r}: expected a 2-D array, got {M.ndim}-D")
    if M.shape[0] != M.shape[1]:
        raise ModelFormatError(f"key {key!r}: matrix is not square {M.shape}")
    if r is not None and M.shape[0] != r:
        raise ModelFormatError(f"key {key!r}: dimension {M.shape[0]} != r={r}")
    if not np.all(np.isfinite(M)):
        raise ModelFormatError(f"key {key!r}: non-finite entries")
    return M


def _wrap_linear(E, A, b, m_x, m_y, name) -> LinearizedModel:
    if E.shape != A.shape:
        raise ModelFormatError(f"dimension mismatch: E {E.shape} vs A {A.shape}")
    m = linear_model(E, A, b, m_x=m_x, m_y=m_y, name=name)
    x_o = np.zeros(m.dim)
    if b is not None and np.any(b):
        try:
            x_o = np.linalg.solve(A, -np.asarray(b, dtype=float))
        except np.linalg.LinAlgError:
            log.warning("A is singular; keeping x_o = 0 for %s", name)
    return LinearizedModel(LinearPencil(E, A), x_o, m)


def _load_json(path: Path) -> LinearizedModel:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ModelFormatError(f"{path}: top level must be an object")
    for key in ("E", "A"):
        if key not in data:
            raise ModelFormatError(f"{path}: missing required key {key!r}")
    r = data.get("r")
    if r is not None and (not isinstance(r, int) or r < 1):
        raise ModelFormatError(f"{path}: key 'r' must be a positive integer")
    E = _parse_matrix(data["E"], "E", r)
    A = _parse_matrix(data["A"], "A", r)
    r = E.shape[0]
    m_x, m_y = data.get("m_x"), data.get("m_y")
    for key, val in (("m_x", m_x), ("m_y", m_y)):
        if val is not None and (not isinstance(val, int) or val < 0):
            raise ModelFormatError(f"{path}: key {key!r} must be a non-negative integer")
    if m_x is not None and m_y is not None and m_x + m_y != r:
        raise ModelFormatError(f"{path}: m_x + m_y = {m_x + m_y} != r = {r}")
    b = data.get("b")
    if b is not None:
        try:
            b = np.array(b, dtype=float).reshape(r)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"{path}: key 'b' must be a length-{r} vector") from exc
        if not np.all(np.isfinite(b)):
            raise ModelFormatError(f"{path}: key 'b' has non-finite entries")
    return _wrap_linear(E, A, b, m_x, m_y, path.stem)


def _mm_paths(path: Path) -> tuple[Path, Path]:
    name = path.name
    for suffix in (".E.mtx", ".A.mtx"):
        if name.endswith(suffix):
            stem = path.with_name(name[: -len(suffix)])
            break
    else:
        stem = path
    return stem.with_name(stem.name + ".E.mtx"), stem.with_name(stem.name + ".A.mtx")


def _load_mm(path: Path) -> LinearizedModel:
    from scipy.io import mmread

    mats = []
    for p in _mm_paths(path):
        if not p.exists():
            raise FileNotFoundError(f"matrix-market file not found: {p}")
        try:
            M = mmread(str(p))
        except (ValueError, OSError) as exc:
            raise ModelFormatError(f"{p}: {exc}") from exc
        M = M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)
        mats.append(_parse_matrix(np.asarray(M, dtype=float).tolist(), p.name))
    return _wrap_linear(mats[0], mats[1], None, None, None, _mm_paths(path)[0].name[:-6])


def load_linear_model(path, format: Optional[str] = None) -> LinearizedModel:
    """Read ``(E, A)`` from JSON or a ``<stem>.E.mtx`` / ``<stem>.A.mtx`` pair.

    ``format`` is ``"json"`` or ``"mm"``; by default it is inferred from the
    file name.
    """
    path = Path(path)
    if format is None:
        format = "mm" if path.name.endswith(".mtx") or not path.suffix else "json"
    if format == "json":
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        return _load_json(path)
    if format in ("mm", "matrix-market", "matrix-market-pair"):
        return _load_mm(path)
    raise ModelFormatError(f"unknown model format {format!r}")
