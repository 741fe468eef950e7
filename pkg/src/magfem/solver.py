"""Damped Newton with Armijo backtracking, plus the fixed-point reference.

The outer iteration minimizes the discrete magnetic energy. Each step
solves the symmetric positive definite Newton system with (optionally
Jacobi-preconditioned) conjugate gradients, backtracks over the step
grid 1, rho, rho^2, ... until the Armijo decrease condition holds, and
records telemetry: energy, residual norm, step size, backtrack count,
curl norm of the increment, and inner iteration count. With certified
convexity bounds (gamma, L) the report also carries the guaranteed
contraction factor q = 1 - 4 rho sigma (1-sigma) (gamma/L)^3 and the
step-size floor tau* = 2 rho (1-sigma) gamma/L, which the test suite
checks against the observed run.

Stopping tolerances are relative to the first iteration's residual norm
and increment norm, which keeps iteration counts comparable across mesh
refinement levels.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict, field

import numpy as np

from . import assembly
from .femspace import CoefficientVector, zero_coefficients


class SolverError(RuntimeError):
    pass


class LineSearchError(SolverError):
    """Backtracking exhausted; impossible under valid convexity bounds."""


@dataclass(frozen=True)
class CGConfig:
    rel_tol: float = 1e-12
    max_iter: int = None
    jacobi: bool = True
    strict: bool = False
    max_refinements: int = 4


@dataclass(frozen=True)
class NewtonConfig:
    """Damped-Newton parameters; rho in (0, 1/2], sigma in (0, 1/2)."""

    rho: float = 0.5
    sigma: float = 0.01
    tol_increment: float = 1e-10
    tol_residual: float = 1e-10
    max_iter: int = 50
    max_backtracks: int = 60
    cg: CGConfig = field(default_factory=CGConfig)

    def __post_init__(self):
        if not 0.0 < self.rho <= 0.5:
            raise ValueError("rho must be in (0, 1/2]")
        if not 0.0 < self.sigma < 0.5:
            raise ValueError("sigma must be in (0, 1/2)")


@dataclass
class IterationRecord:
    n: int
    energy: float
    residual_norm: float
    tau: float
    backtracks: int
    increment_norm: float
    cg_iters: int


@dataclass
class NewtonReport:
    """Per-iteration telemetry of a Newton (or fixed-point) solve."""

    iterations: list
    converged: bool
    final_energy: float
    final_residual_norm: float
    gamma: float = None
    lipschitz: float = None
    q_bound: float = None
    tau_floor: float = None
    contraction_ratios: list = None
    failure: str = None

    @property
    def n_iterations(self):
        return len(self.iterations)

    def energies(self):
        return [rec.energy for rec in self.iterations] + [self.final_energy]

    def to_json(self, config=None, indent=2):
        doc = {
            "config": asdict(config) if config is not None else None,
            "certified": {
                "gamma": self.gamma,
                "lipschitz": self.lipschitz,
                "q": self.q_bound,
                "tau_star": self.tau_floor,
            },
            "iterations": [asdict(rec) for rec in self.iterations],
            "final": {
                "energy": self.final_energy,
                "residual_norm": self.final_residual_norm,
            },
            "converged": self.converged,
            "n_iterations": self.n_iterations,
        }
        if self.contraction_ratios is not None:
            doc["contraction_ratios"] = self.contraction_ratios
        if self.failure is not None:
            doc["failure"] = self.failure
        return json.dumps(doc, indent=indent)


@dataclass
class CGInfo:
    iterations: int
    converged: bool
    residual_norm: float


def solve_cg(matrix, rhs, cfg=CGConfig()):
    """Preconditioned conjugate gradients for an SPD sparse system.

    Iterates until the recursive residual satisfies
    ||r||_2 <= rel_tol ||rhs||_2, then measures the true residual and, if
    it still misses the tolerance, restarts from it for up to
    max_refinements rounds while each round at least halves it (on
    ill-conditioned systems the true residual bottoms out at the rounding
    floor eps ||A|| ||x||, which no amount of iteration cures).
    Deterministic: fixed start x = 0, fixed reduction order. Budget
    exhaustion or a rounding-floor stall is reported in CGInfo and raised
    only in strict mode.
    """
    n = matrix.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    b_norm = float(np.linalg.norm(rhs))
    if n == 0 or b_norm == 0.0:
        return np.zeros(n), CGInfo(iterations=0, converged=True, residual_norm=0.0)
    max_iter = cfg.max_iter if cfg.max_iter is not None else max(1000, 5 * n)
    tol = cfg.rel_tol * b_norm

    if cfg.jacobi:
        diag = matrix.diagonal()
        if np.any(diag <= 0):
            raise SolverError("matrix diagonal not positive; not SPD")
        inv_diag = 1.0 / diag
    else:
        inv_diag = None

    x = np.zeros(n)
    r = rhs.copy()
    z = r * inv_diag if inv_diag is not None else r
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    refinements = 0
    best_true = np.inf
    true_res = None
    while iterations < max_iter:
        if np.linalg.norm(r) <= tol:
            true_r = rhs - matrix @ x
            true_res = float(np.linalg.norm(true_r))
            if true_res <= tol:
                break
            if refinements >= cfg.max_refinements or true_res > 0.5 * best_true:
                break  # rounding floor reached; more iterations cannot help
            best_true = min(best_true, true_res)
            refinements += 1
            r = true_r
            z = r * inv_diag if inv_diag is not None else r
            p = z.copy()
            rz = float(r @ z)
        Ap = matrix @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError("matrix not positive definite in CG")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        iterations += 1
        z = r * inv_diag if inv_diag is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if true_res is None:
        true_res = float(np.linalg.norm(rhs - matrix @ x))
    info = CGInfo(iterations, true_res <= tol, true_res)
    if cfg.strict and not info.converged:
        raise SolverError(
            f"CG did not reach tolerance: residual {true_res:.3e} vs {tol:.3e} "
            f"after {iterations} iterations"
        )
    return x, info


def _certified(problem, cfg):
    bounds = problem.certified_bounds()
    if bounds is None:
        return None, None, None, None
    gamma, lip = bounds
    ratio = gamma / lip
    q = 1.0 - 4.0 * cfg.rho * cfg.sigma * (1.0 - cfg.sigma) * ratio**3
    tau_floor = min(1.0, 2.0 * cfg.rho * (1.0 - cfg.sigma) * gamma / lip)
    return gamma, lip, q, tau_floor


def newton_solve(problem, a0=None, cfg=NewtonConfig(), history=None):
    """Minimize the discrete energy by damped Newton from a0 (default 0).

    Stops once the curl norm of the Newton increment or the Euclidean
    residual norm falls below its tolerance (both relative to the first
    iteration). The backtracking grid starts at tau = 1; exceeding
    max_backtracks raises LineSearchError, exceeding max_iter returns a
    non-converged report. Passing a list as `history` collects a copy of
    every iterate's free-dof vector (initial value included).
    """
    space = problem.space
    a = zero_coefficients(space) if a0 is None else a0
    vec = a.values.copy()
    if history is not None:
        history.append(vec.copy())
    K = assembly.assemble_unit_stiffness(problem)
    gamma, lip, q, tau_floor = _certified(problem, cfg)

    records = []
    converged = False
    failure = None
    res = assembly.assemble_residual(problem, CoefficientVector(space, vec))
    energy = assembly.assemble_energy(problem, CoefficientVector(space, vec))
    res_norm = float(np.linalg.norm(res))
    # rounding floor: residual entries are cancelling sums, so anything at
    # eps times their magnitude is numerically zero
    res_floor = 64.0 * np.finfo(float).eps * assembly.residual_scale(
        problem, CoefficientVector(space, vec)
    )
    res_ref = None
    inc_ref = None

    for n in range(cfg.max_iter + 1):
        if res_ref is None and res_norm > 0.0:
            res_ref = res_norm
        if res_norm <= max(cfg.tol_residual * (res_ref or 0.0), res_floor):
            converged = True
            break
        if n == cfg.max_iter:
            failure = "max_iter"
            break

        hess = assembly.assemble_hessian(problem, CoefficientVector(space, vec))
        delta, cg_info = solve_cg(hess, -res, cfg.cg)
        inc_norm = float(np.sqrt(max(delta @ (K @ delta), 0.0)))
        if inc_ref is None and inc_norm > 0.0:
            inc_ref = inc_norm

        slope = float(res @ delta)  # = <dw(b) - h_s, Curl delta>_h < 0
        tau = 1.0
        backtracks = 0
        while True:
            trial = vec + tau * delta
            trial_energy = assembly.assemble_energy(problem, CoefficientVector(space, trial))
            if trial_energy <= energy + cfg.sigma * tau * slope:
                break
            backtracks += 1
            if backtracks > cfg.max_backtracks:
                raise LineSearchError(
                    f"Armijo backtracking exhausted at iteration {n}: slope={slope:g}, "
                    f"energy={energy:.16g}, last trial tau={tau:g} "
                    f"energy={trial_energy:.16g}"
                )
            tau *= cfg.rho

        records.append(
            IterationRecord(
                n=n,
                energy=energy,
                residual_norm=res_norm,
                tau=tau,
                backtracks=backtracks,
                increment_norm=inc_norm,
                cg_iters=cg_info.iterations,
            )
        )
        vec = trial
        energy = trial_energy
        if history is not None:
            history.append(vec.copy())
        res = assembly.assemble_residual(problem, CoefficientVector(space, vec))
        res_norm = float(np.linalg.norm(res))
        if inc_norm <= cfg.tol_increment * (inc_ref or 0.0):
            converged = True
            break

    report = NewtonReport(
        iterations=records,
        converged=converged,
        final_energy=energy,
        final_residual_norm=res_norm,
        gamma=gamma,
        lipschitz=lip,
        q_bound=q,
        tau_floor=tau_floor,
        failure=failure,
    )
    return CoefficientVector(space, vec), report


def zarantonello_solve(problem, tau, a0=None, cfg=NewtonConfig()):
    """Damped fixed-point iteration preconditioned by the unit stiffness.

    Each step solves K delta = -tau r(a) and accepts the full update; the
    map is contractive with factor sqrt(1 - 2 tau gamma + tau^2 L^2) for
    0 < tau < 2 gamma / L^2. Contraction of tau against certified bounds
    is advisory: out-of-range values are run anyway.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    space = problem.space
    a = zero_coefficients(space) if a0 is None else a0
    vec = a.values.copy()
    K = assembly.assemble_unit_stiffness(problem)
    gamma, lip, q, tau_floor = _certified(problem, cfg)
    if gamma is not None and tau >= 2.0 * gamma / lip**2:
        warnings.warn(
            f"step size tau = {tau:g} is outside the certified contraction range "
            f"(0, {2.0 * gamma / lip**2:g}); the iteration may not converge",
            stacklevel=2,
        )

    records = []
    ratios = []
    converged = False
    failure = None
    prev_inc = None
    inc_ref = None
    for n in range(cfg.max_iter):
        coeffs = CoefficientVector(space, vec)
        res = assembly.assemble_residual(problem, coeffs)
        energy = assembly.assemble_energy(problem, coeffs)
        delta, cg_info = solve_cg(K, -tau * res, cfg.cg)
        inc_norm = float(np.sqrt(max(delta @ (K @ delta), 0.0)))
        records.append(
            IterationRecord(
                n=n,
                energy=energy,
                residual_norm=float(np.linalg.norm(res)),
                tau=tau,
                backtracks=0,
                increment_norm=inc_norm,
                cg_iters=cg_info.iterations,
            )
        )
        if prev_inc is not None and prev_inc > 0.0:
            ratios.append(inc_norm / prev_inc)
        prev_inc = inc_norm
        vec = vec + delta
        if inc_ref is None and inc_norm > 0.0:
            inc_ref = inc_norm
        if inc_norm <= cfg.tol_increment * (inc_ref or 0.0):
            converged = True
            break
    else:
        failure = "max_iter"

    coeffs = CoefficientVector(space, vec)
    res = assembly.assemble_residual(problem, coeffs)
    report = NewtonReport(
        iterations=records,
        converged=converged,
        final_energy=assembly.assemble_energy(problem, coeffs),
        final_residual_norm=float(np.linalg.norm(res)),
        gamma=gamma,
        lipschitz=lip,
        q_bound=q,
        tau_floor=tau_floor,
        contraction_ratios=ratios,
        failure=failure,
    )
    return coeffs, report


def zarantonello_contraction(tau, gamma, lipschitz):
    """Contraction factor sqrt(1 - 2 tau gamma + tau^2 L^2)."""
    return float(np.sqrt(max(1.0 - 2.0 * tau * gamma + tau**2 * lipschitz**2, 0.0)))


@dataclass
class TailDiagnostic:
    """Quadratic-tail summary relative to a reference solution."""

    errors: list                 # e_n = ||Curl(a^n - a_ref)|| per recorded iterate
    full_step_start: int         # first iteration index from which tau = 1 onward
    ratios: list                 # e_{n+1} / e_n^2 over the full-step tail
    valid_ratios: list           # ratios with both errors above the noise floor
    m_hat: float                 # max of valid ratios (inf if none)
    stable_within: float         # max/min over the last <= 3 valid ratios
    sufficient: bool             # at least 3 tail iterations observed


def quadratic_tail_diagnostic(report, iterate_history, reference, problem, noise_floor=None):
    """Measure the quadratic convergence tail of a Newton run.

    iterate_history must contain the free-dof vectors of the recorded
    iterates (see run_newton_with_history); errors are curl norms against
    `reference`, a higher-accuracy solution of the same problem. Ratios
    e_{n+1}/e_n^2 are reported from the first all-full-step iteration
    onward; ratios are marked valid when both errors sit above the noise
    floor (default: 100 eps times the reference curl norm), which keeps
    rounding-dominated final iterates out of the constant estimate.
    """
    ref = reference.values
    scale = assembly.curl_norm(problem, ref)
    if noise_floor is None:
        noise_floor = 100.0 * np.finfo(float).eps * max(scale, 1.0)
    errors = [assembly.curl_norm(problem, vec - ref) for vec in iterate_history]

    taus = [rec.tau for rec in report.iterations]
    start = len(taus)
    for i in range(len(taus) - 1, -1, -1):
        if taus[i] == 1.0 and report.iterations[i].backtracks == 0:
            start = i
        else:
            break
    ratios = []
    valid = []
    for i in range(start, len(errors) - 1):
        if errors[i] <= 0.0:
            continue
        ratio = errors[i + 1] / errors[i] ** 2
        ratios.append(ratio)
        if errors[i] > noise_floor and errors[i + 1] > noise_floor:
            valid.append(ratio)
    tail = valid[-3:]
    m_hat = max(valid) if valid else float("inf")
    stable = max(tail) / min(tail) if len(tail) >= 2 and min(tail) > 0 else float("inf")
    return TailDiagnostic(
        errors=errors,
        full_step_start=start,
        ratios=ratios,
        valid_ratios=valid,
        m_hat=m_hat,
        stable_within=stable,
        sufficient=(len(errors) - 1 - start) >= 3,
    )


def run_newton_with_history(problem, a0=None, cfg=NewtonConfig()):
    """newton_solve plus the list of iterate dof vectors (a0 included)."""
    history = []
    coeffs, report = newton_solve(problem, a0, cfg, history=history)
    return coeffs, report, history
