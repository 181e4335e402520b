"""Fixed-step nonlinear time-domain integration of ``E x' = phi(x)``.

Implicit methods solve their step residual with Newton's method. Explicit
methods (and the final update of any Runge-Kutta tableau) determine the
differential rows from the update formula and re-solve the algebraic rows
``0 = g(x)``, i.e. the rows of ``E`` that are identically zero.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import methods as mth
from .exceptions import SimulationError
from .methods import MethodSpec
from .models import DaeModel

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12
REFERENCE_STEP = 1e-3


@dataclass(frozen=True)
class Disturbance:
    """Parameter change applied to the model at the step boundary ``time``."""

    time: float
    changes: dict


@dataclass(frozen=True)
class SimulationConfig:
    h: float
    t_end: float
    method: MethodSpec
    newton_tol: float = 1e-8
    newton_max_iter: int = 20
    disturbances: tuple = ()

    def __post_init__(self):
        if not self.h > 0:
            raise SimulationError(f"step h must be positive, got {self.h}")
        if not self.t_end >= self.h:
            raise SimulationError(f"t_end={self.t_end} must be at least h={self.h}")
        for d in self.disturbances:
            if not 0 <= d.time <= self.t_end:
                raise SimulationError(f"disturbance time {d.time} outside [0, {self.t_end}]")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.h + 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    newton_iters: np.ndarray
    diverged: bool = False
    divergence_time: Optional[float] = None
    message: str = ""

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else math.nan

    def variable(self, i: int) -> np.ndarray:
        return self.states[:, i]


class _NewtonFailure(Exception):
    def __init__(self, residual):
        super().__init__(f"Newton did not converge, residual {residual:.3e}")
        self.residual = residual


def newton(fun, jac, x0, tol=1e-8, max_iter=20):
    """Plain Newton iteration; returns ``(x, iterations)``.

    Converged when ``max|f| <= tol * max(1, max|x|)``.
    """
    x = np.array(x0, dtype=float)
    f = fun(x)
    norm = np.max(np.abs(f))
    it = 0
    while norm > tol * max(1.0, np.max(np.abs(x))):
        if it >= max_iter or not np.isfinite(norm):
            raise _NewtonFailure(norm)
        try:
            x = x - np.linalg.solve(jac(x), f)
        except np.linalg.LinAlgError:
            raise _NewtonFailure(norm) from None
        f = fun(x)
        norm = np.max(np.abs(f))
        it += 1
    return x, it


class _Stepper:
    """Per-simulation stepping state: model, step and row partition."""

    def __init__(self, model: DaeModel, cfg: SimulationConfig):
        self.cfg = cfg
        self.h = cfg.h
        self.set_model(model)

    def set_model(self, model):
        self.m = model
        E = model.E
        self.E = E
        self.alg = np.flatnonzero(~np.any(E != 0.0, axis=1))
        self.diff = np.flatnonzero(np.any(E != 0.0, axis=1))

    def solve(self, fun, jac, guess):
        return newton(fun, jac, guess, self.cfg.newton_tol, self.cfg.newton_max_iter)

    # explicit update: E_D X = rhs_D, g(X) = 0
    def project(self, rhs, guess):
        E, D, Al = self.E, self.diff, self.alg

        def fun(X):
            out = np.empty(len(X))
            out[D] = E[D] @ X - rhs[D]
            if Al.size:
                out[Al] = self.m.residual(X)[Al]
            return out

        def jac(X):
            J = np.empty((len(X), len(X)))
            J[D] = E[D]
            if Al.size:
                J[Al] = self.m.jacobian(X)[Al]
            return J

        return self.solve(fun, jac, guess)

    def step(self, history):
        """Advance from ``history[-1]``; ``history`` holds the latest states."""
        spec = self.cfg.method
        tag = spec.tag
        if tag == "FEM":
            return self._tableau_explicit(history[-1], np.zeros((1, 1)), np.ones(1))
        if tag == "RK4":
            return self._tableau_explicit(history[-1], np.array(mth.RK4_TABLEAU[0]),
                                          np.array(mth.RK4_TABLEAU[1]))
        if tag == "TABLEAU":
            if spec.is_implicit:
                return self._tableau_implicit(history[-1], spec.Q, spec.weights)
            return self._tableau_explicit(history[-1], spec.Q, spec.weights)
        if tag == "BEM":
            return self._bilinear(history[-1], (1.0, -1.0, 1.0, 0.0))
        if tag == "ITM":
            return self._bilinear(history[-1], (1.0, -1.0, 0.5, 0.5))
        if tag == "MOEBIUS":
            return self._bilinear(history[-1], spec.moebius)
        if tag == "DIRK2S":
            return self._dirk2s(history[-1])
        if tag == "BDF2":
            if len(history) < 2:
                return self._bilinear(history[-1], (1.0, -1.0, 0.5, 0.5))
            return self._bdf2(history[-1], history[-2])
        raise SimulationError(f"no time-domain rule for method {spec.label}")

    def _tableau_explicit(self, x, Q, w):
        E, h, phi = self.E, self.h, self.m.residual
        k = []
        iters = 0
        Ex = E @ x
        for i in range(len(w)):
            if i == 0 or not np.any(Q[i, :i]):
                X = x
            else:
                rhs = Ex + h * sum(Q[i, j] * k[j] for j in range(i))
                X, n = self.project(rhs, x)
                iters += n
            k.append(phi(X))
        x_new, n = self.project(Ex + h * sum(wj * kj for wj, kj in zip(w, k)), x)
        return x_new, iters + n

    def _tableau_implicit(self, x, Q, w):
        E, h, m = self.E, self.h, self.m
        r = len(x)
        rho = len(w)
        Ex = E @ x

        def fun(Xs):
            X = Xs.reshape(rho, r)
            F = np.array([m.residual(Xi) for Xi in X])
            return (X @ E.T - Ex - h * (Q @ F)).ravel()

        def jac(Xs):
            X = Xs.reshape(rho, r)
            Js = [m.jacobian(Xi) for Xi in X]
            J = np.zeros((rho * r, rho * r))
            for i in range(rho):
                for j in range(rho):
                    blk = -h * Q[i, j] * Js[j]
                    if i == j:
                        blk = blk + E
                    J[i * r:(i + 1) * r, j * r:(j + 1) * r] = blk
            return J

        Xs, iters = self.solve(fun, jac, np.tile(x, rho))
        F = np.array([m.residual(Xi) for Xi in Xs.reshape(rho, r)])
        x_new, n = self.project(Ex + h * (w @ F), Xs[-r:])
        return x_new, iters + n

    def _bilinear(self, x, coeffs):
        a, b, c, d = coeffs
        E, h, m = self.E, self.h, self.m
        known = b * (E @ x) - d * h * m.residual(x)
        if c == 0.0:
            return self.project(-known / a, x)
        fun, jac = bilinear_residual(m, h, coeffs, known)
        return self.solve(fun, jac, x)

    def _dirk2s(self, x):
        E, h, m = self.E, self.h, self.m
        al, be, ga = mth.DIRK_ALPHA, mth.DIRK_BETA, mth.DIRK_GAMMA
        fun, jac = dirk_stage_residual(m, h, E @ x)
        xa, n1 = self.solve(fun, jac, x)
        u = be * x + ga * xa
        fun, jac = dirk_stage_residual(m, h, E @ u)
        xt, n2 = self.solve(fun, jac, xa)
        return xt, n1 + n2

    def _bdf2(self, x1, x2):
        fun, jac = bdf2_residual(self.m, self.h, x1, x2)
        return self.solve(fun, jac, x1)


def bilinear_residual(m: DaeModel, h: float, coeffs, known):
    """``a E x + known - c h phi(x)`` with ``known = b E x_prev - d h phi(x_prev)``."""
    a, _, c, _ = coeffs
    E = m.E

    def fun(x):
        return a * (E @ x) + known - c * h * m.residual(x)

    def jac(x):
        return a * E - c * h * m.jacobian(x)

    return fun, jac


def dirk_stage_residual(m: DaeModel, h: float, Eu):
    """``E x - E u - alpha h phi(x)``, one sub-stage of the two-stage DIRK."""
    E = m.E
    ah = mth.DIRK_ALPHA * h

    def fun(x):
        return E @ x - Eu - ah * m.residual(x)

    def jac(x):
        return E - ah * m.jacobian(x)

    return fun, jac


def bdf2_residual(m: DaeModel, h: float, x1, x2):
    E = m.E
    known = E @ (-4.0 / 3.0 * x1 + 1.0 / 3.0 * x2)

    def fun(x):
        return E @ x + known - (2.0 / 3.0) * h * m.residual(x)

    def jac(x):
        return E - (2.0 / 3.0) * h * m.jacobian(x)

    return fun, jac


def _consistent(stepper: _Stepper, x, tol) -> np.ndarray:
    if stepper.alg.size == 0:
        return x
    try:
        x_c, _ = stepper.project(stepper.E @ x, x)
    except _NewtonFailure as exc:
        raise SimulationError(f"inconsistent initial condition: {exc}") from None
    res = np.max(np.abs(stepper.m.residual(x_c)[stepper.alg]))
    if res > tol:
        raise SimulationError(f"inconsistent initial condition: algebraic residual {res:.3e}")
    return x_c


def simulate(m: DaeModel, cfg: SimulationConfig, x0) -> Trajectory:
    """Integrate ``m`` from ``x0`` over ``[0, t_end]`` with a fixed step.

    Divergence (max-norm above 1e12, non-finite state or a Newton failure)
    stops the run and is reported on the returned trajectory.
    """
    x0 = np.asarray(x0, dtype=float).reshape(m.dim)
    stepper = _Stepper(m, cfg)
    x = _consistent(stepper, x0, cfg.newton_tol)
    n = cfg.n_steps
    times = [0.0]
    states = [x]
    iters = [0]
    pending = sorted(cfg.disturbances, key=lambda d: d.time)
    history = [x]
    diverged, t_div, message = False, None, ""
    for k in range(n):
        t = k * cfg.h
        jumped = False
        while pending and pending[0].time <= t + 1e-9 * cfg.h:
            dist = pending.pop(0)
            stepper.set_model(stepper.m.with_params(**dist.changes))
            jumped = True
        if jumped:
            try:
                history[-1] = _consistent(stepper, history[-1], cfg.newton_tol)
            except SimulationError as exc:
                diverged, t_div, message = True, t, str(exc)
                break
        try:
            x_new, it = stepper.step(history)
        except _NewtonFailure as exc:
            diverged, t_div = True, (k + 1) * cfg.h
            message = f"Newton failure at t={t_div:g}: residual {exc.residual:.3e}"
            break
        t_new = (k + 1) * cfg.h
        if not np.all(np.isfinite(x_new)) or np.max(np.abs(x_new)) > DIVERGENCE_NORM:
            diverged, t_div = True, t_new
            message = f"state norm exceeded {DIVERGENCE_NORM:g} at t={t_new:g}"
            break
        times.append(t_new)
        states.append(x_new)
        iters.append(it)
        history = (history + [x_new])[-2:]
    if diverged:
        log.info("%s: %s", cfg.method.label, message)
    return Trajectory(np.array(times), np.array(states), np.array(iters, dtype=int),
                      diverged, t_div, message)


def reference_trajectory(m: DaeModel, t_end: float, x0, disturbances=()) -> Trajectory:
    """Two-stage DIRK run with ``h = 1e-3``, used as the accurate solution."""
    cfg = SimulationConfig(REFERENCE_STEP, t_end, mth.DIRK2S, disturbances=tuple(disturbances))
    return simulate(m, cfg, x0)


def trajectory_mismatch(traj: Trajectory, ref: Trajectory, index: int) -> float:
    """Time-weighted L1 error ``sum_k |x_i(t_k) - x_i^ref(t_k)| h`` over ``traj``'s samples."""
    r = traj.states.shape[1]
    if not -r <= index < r:
        raise IndexError(f"variable index {index} out of range for r={r}")
    if traj.diverged or ref.diverged:
        return math.inf
    if traj.times[-1] > ref.times[-1] + 1e-9:
        raise ValueError("reference trajectory is shorter than the scored trajectory")
    ref_i = np.interp(traj.times, ref.times, ref.states[:, index])
    return float(np.sum(np.abs(traj.states[:, index] - ref_i)) * traj.h)


def fit_modes(times, signal, offset=True) -> np.ndarray:
    """Least-squares fit of a two-term linear recurrence to a sampled signal.

    Fits ``y_{k+1} = c1 y_k + c2 y_{k-1} (+ c0)`` and returns the continuous
    eigenvalues ``log(z) / h`` of ``z^2 - c1 z - c2``.
    """
    y = np.asarray(signal, dtype=float)
    h = float(times[1] - times[0])
    cols = [y[1:-1], y[:-2]]
    if offset:
        cols.append(np.ones(len(y) - 2))
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), y[2:], rcond=None)
    z = np.roots([1.0, -coef[0], -coef[1]]).astype(complex)
    return np.log(z) / h


def write_trajectory_csv(traj: Trajectory, path) -> None:
    path = Path(path)
    r = traj.states.shape[1] if traj.states.ndim == 2 else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i}" for i in range(r)] + ["newton_iters"])
        for t, x, n in zip(traj.times, traj.states, traj.newton_iters):
            w.writerow([f"{t:.9g}"] + [f"{v:.9g}" for v in x] + [int(n)])


def write_gnuplot_columns(traj: Trajectory, index: int, path) -> None:
    """Two whitespace separated columns ``t x_i`` for plotting."""
    with Path(path).open("w") as fh:
        for t, v in zip(traj.times, traj.states[:, index]):
            fh.write(f"{t:.9g} {v:.9g}\n")
