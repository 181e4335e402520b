"""Property checks comparing the pencil route against scalar oracles.

Each check builds random data, evaluates the matrix-pencil path and an
independent scalar route (growth functions, quadratic roots, the Moebius
map) and reports the worst discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import methods as mth
from .analysis import distortion_report
from .models import LinearizedModel, mode_model
from .pencil import LinearPencil, finite_eigenvalues

EQUIV_RTOL = 1e-8
DEFAULT_STEPS = (1e-3, 1e-2, 1e-1)
ORDER_MODE = -1 + 2j
ORDER_STEPS = np.geomspace(1e-2, 1e-1, 6)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_ode(rng: np.random.Generator, r: int, max_cond: float = 50.0):
    """Random real diagonalizable ``A`` (r x r) with its exact eigenvalues.

    Eigenvalues are real or come in conjugate pairs, all with negative
    real part; ``A = V B V^-1`` with ``B`` block diagonal.
    """
    B = np.zeros((r, r))
    lams = []
    i = 0
    while i < r:
        if i + 1 < r and rng.random() < 0.5:
            a, b = -rng.uniform(0.1, 10.0), rng.uniform(0.5, 10.0)
            B[i:i + 2, i:i + 2] = [[a, -b], [b, a]]
            lams += [complex(a, b), complex(a, -b)]
            i += 2
        else:
            a = -rng.uniform(0.1, 10.0)
            B[i, i] = a
            lams.append(complex(a))
            i += 1
    while True:
        V = rng.standard_normal((r, r))
        if np.linalg.cond(V) < max_cond:
            break
    A = V @ B @ np.linalg.inv(V)
    return A, np.array(lams)


def _matched_error(a, b) -> float:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.size != b.size:
        return np.inf
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    scale = np.maximum(1.0, np.abs(b[cols]))
    return float(np.max(cost[rows, cols] / scale))


def _perturbed_pencil(spec, lm, h, itm_perturbation):
    p = mth.build_pencil(spec, lm, h)
    if itm_perturbation and spec.tag == "ITM":
        p = LinearPencil(p.lhs, p.rhs * (1.0 + itm_perturbation))
    return p


def check_growth_pencil(rng, specs=None, trials=50, steps=DEFAULT_STEPS, itm_perturbation=0.0):
    specs = specs or [mth.FEM, mth.RK4, mth.BEM, mth.ITM, mth.DIRK2S]
    out = []
    for spec in specs:
        if spec.step_multiplicity != 1:
            continue
        worst = 0.0
        for _ in range(trials):
            r = int(rng.integers(1, 7))
            A, lams = random_ode(rng, r)
            lm = LinearizedModel(LinearPencil(np.eye(r), A), np.zeros(r))
            for h in steps:
                got = finite_eigenvalues(_perturbed_pencil(spec, lm, h, itm_perturbation)).finite
                want = [mth.growth_roots(spec, lam * h)[0] for lam in lams]
                worst = max(worst, _matched_error(got, want))
        out.append(CheckResult(f"growth==pencil[{spec.label}]", worst <= EQUIV_RTOL,
                               f"max rel err {worst:.2e} (tol {EQUIV_RTOL:.0e})"))
    return out


def check_bdf2_companion(rng, trials=50, steps=DEFAULT_STEPS):
    worst = 0.0
    for _ in range(trials):
        r = int(rng.integers(1, 7))
        A, lams = random_ode(rng, r)
        lm = LinearizedModel(LinearPencil(np.eye(r), A), np.zeros(r))
        for h in steps:
            got = finite_eigenvalues(mth.build_pencil(mth.BDF2, lm, h)).finite
            want = np.concatenate([mth.bdf2_roots(lam * h) for lam in lams])
            worst = max(worst, _matched_error(got, want))
    return CheckResult("bdf2 companion==quadratic roots", worst <= EQUIV_RTOL,
                       f"max rel err {worst:.2e} (tol {EQUIV_RTOL:.0e})")


def random_symmetric_quadruple(rng):
    """Random ``(a, b, c, d)`` meeting the symmetric A-stability conditions."""
    a = rng.uniform(0.2, 3.0) * rng.choice([-1.0, 1.0])
    c = abs(rng.uniform(0.2, 3.0)) * np.sign(a)
    if rng.random() < 0.5:
        return a, a, c, -c
    return a, -a, c, c


def check_moebius(rng, samples=1000, quadruples=20):
    worst_in, worst_out = 0.0, np.inf
    for _ in range(quadruples):
        a, b, c, d = random_symmetric_quadruple(rng)
        assert mth.moebius_is_symmetric_a_stable(a, b, c, d)
        s = -rng.exponential(5.0, samples) + 1j * rng.normal(0.0, 10.0, samples)
        worst_in = max(worst_in, float(np.max(np.abs(mth.moebius_map(a, b, c, d, s)))))
        s_unstable = -s.real + 1j * s.imag
        worst_out = min(worst_out, float(np.min(np.abs(mth.moebius_map(a, b, c, d, s_unstable)))))
    mapped = CheckResult("moebius left half-plane -> unit disc", worst_in < 1.0 and worst_out > 1.0,
                         f"max |z| stable {worst_in:.6f}, min |z| unstable {worst_out:.6f}")

    identical = True
    for _ in range(10):
        r = int(rng.integers(1, 6))
        E = np.diag(rng.integers(0, 2, r).astype(float))
        A = rng.standard_normal((r, r))
        lm = LinearizedModel(LinearPencil(E, A), np.zeros(r))
        h = float(rng.uniform(1e-3, 1.0))
        for spec, q in ((mth.FEM, (1, -1, 0, 1)), (mth.BEM, (1, -1, 1, 0)), (mth.ITM, (1, -1, 0.5, 0.5))):
            p1 = mth.build_pencil(spec, lm, h)
            p2 = mth.build_pencil(mth.moebius(*q), lm, h)
            identical &= bool(np.array_equal(p1.lhs, p2.lhs) and np.array_equal(p1.rhs, p2.rhs))
    special = CheckResult("moebius special cases == fem/bem/itm pencils", identical,
                          "entrywise identical" if identical else "mismatch")
    return [mapped, special]


def distortion_slope(spec, s=ORDER_MODE, steps=ORDER_STEPS) -> float:
    """Log-log slope of ``|d_s|(h)`` for a single mode."""
    lm = mode_model(s)
    ds = []
    for h in steps:
        rows = [r for r in distortion_report(spec, lm, float(h)).rows if r.s.imag >= 0]
        ds.append(rows[0].abs_ds)
    return float(np.polyfit(np.log(steps), np.log(ds), 1)[0])


def check_order_slopes(specs=None):
    specs = specs or [mth.FEM, mth.BEM, mth.ITM, mth.BDF2, mth.DIRK2S, mth.RK4]
    out = []
    for spec in specs:
        slope = distortion_slope(spec)
        need = spec.order - 0.1
        out.append(CheckResult(f"order slope[{spec.label}]", slope >= need,
                               f"slope {slope:.3f} >= {need:.1f}"))
    return out


def run_suite(specs=None, trials=50, seed=0, itm_perturbation=0.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    one_step = [s for s in (specs or [mth.FEM, mth.RK4, mth.BEM, mth.ITM, mth.DIRK2S])
                if s.step_multiplicity == 1]
    results = check_growth_pencil(rng, one_step, trials, itm_perturbation=itm_perturbation)
    if specs is None or any(s.tag == "BDF2" for s in specs):
        results.append(check_bdf2_companion(rng, trials))
    results += check_moebius(rng)
    results += check_order_slopes(specs)
    return results
