"""Barrier SQP outer loop with a pluggable Schur-complement step solver.

Each outer iteration linearizes at the current iterate, builds the
barrier-augmented QP, delegates the KKT solve to the configured backend,
caps the step with the fraction-to-the-boundary rule, backtracks until
strict feasibility and the Armijo condition hold, and then updates the
barrier parameter.  No inner loop is run per barrier value: one QP per
outer iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .nlp import BarrierConfig, InfeasiblePointError, TrajectoryNlp, build_qp, \
    eval_barrier_objective
from .schur import SchurSolution, SchurStepSolver


class NonDescentError(RuntimeError):
    """The supplied step is not a descent direction for the barrier objective."""


@dataclass
class SqpConfig:
    """Outer-loop parameters; defaults are standard interior-point choices."""

    mu0: float = 1.0
    mu_min: float = 1e-8
    barrier_update: str = "geometric"  # geometric | constant | adaptive
    beta: float = 0.5
    mu_clamp: float | None = None  # floor applied inside the update rule
    armijo_c: float = 1e-4
    backtrack_tau: float = 0.5
    boundary_theta: float = 0.995
    eps_opt: float = 1e-6
    eps_feas: float = 1e-8
    max_outer_iters: int = 200
    max_backtracks: int = 60
    convergence_check: str = "grad_f"  # grad_f (as printed) | kkt (stationarity)
    enforce_infeasibility_decrease: bool = False
    infeasibility_sigma: float = 1e-4
    sigma0: float = 0.0
    barrier_kind: str = "log"

    def __post_init__(self):
        if self.mu0 <= 0.0 or self.mu_min <= 0.0:
            raise ValueError("mu0 and mu_min must be positive")
        for label, val in (("armijo_c", self.armijo_c),
                           ("backtrack_tau", self.backtrack_tau),
                           ("boundary_theta", self.boundary_theta),
                           ("beta", self.beta),
                           ("infeasibility_sigma", self.infeasibility_sigma)):
            if not 0.0 < val < 1.0:
                raise ValueError(f"{label} must lie strictly inside (0, 1)")
        if self.eps_opt <= 0.0 or self.eps_feas <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_outer_iters <= 0 or self.max_backtracks <= 0:
            raise ValueError("iteration caps must be positive")
        if self.barrier_update not in ("geometric", "constant", "adaptive"):
            raise ValueError(f"unknown barrier update {self.barrier_update!r}")
        if self.convergence_check not in ("grad_f", "kkt"):
            raise ValueError(f"unknown convergence check {self.convergence_check!r}")


@dataclass
class IterateRecord:
    """One row of the solve trace (iterate 0 is the initial point)."""

    i: int
    z: np.ndarray
    mu: float
    alpha: float
    dz_norm: float
    eq_norm: float
    grad_f_norm: float
    f_bar: float
    h_max: float
    slope: float = float("nan")        # g^T dz of the step into this iterate
    armijo_rhs: float = float("nan")   # F_bar_prev + c*alpha*slope
    kkt_stat_norm: float = float("nan")
    backtracks: int = 0
    infeas_ratio: float = float("nan")
    infeas_decrease_ok: bool = True
    solver_diag: dict[str, Any] = field(default_factory=dict)


@dataclass
class SolveReport:
    records: list[IterateRecord]
    termination: str  # converged | mu_floor | iter_cap | line_search_failure
    z_star: np.ndarray
    mu_final: float
    message: str = ""

    @property
    def n_iters(self) -> int:
        return len(self.records) - 1

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


def fraction_to_boundary(
    z: np.ndarray,
    dz: np.ndarray,
    h_vals: np.ndarray,
    h_dirderivs: np.ndarray,
    theta: float,
) -> float:
    """Step cap keeping H strictly negative, scaled by theta.

    Returns min(1, theta * min over {j : dH_j > 0} of (-H_j)/dH_j); with no
    increasing constraint the cap is 1.
    """
    rising = h_dirderivs > 0.0
    if not np.any(rising):
        return 1.0
    ratios = -h_vals[rising] / h_dirderivs[rising]
    return float(min(1.0, theta * np.min(ratios)))


def backtrack(
    nlp: TrajectoryNlp,
    z: np.ndarray,
    dz: np.ndarray,
    g: np.ndarray,
    mu: float,
    alpha_max: float,
    cfg: SqpConfig,
    *,
    allow_nondescent: bool = False,
) -> tuple[float, float, int] | None:
    """Largest alpha in {alpha_max * tau^k} passing feasibility and Armijo.

    Returns (alpha, barrier objective at the accepted point, k) or None
    when max_backtracks trials are exhausted.  A zero step is accepted
    immediately (both conditions hold with equality).  Raises
    NonDescentError for a nonzero step with g^T dz >= 0: that signals
    solver-quality failure upstream.  ``allow_nondescent`` skips that
    gate and runs the acceptance loop as printed; the driver enables it
    while the iterate is equality-infeasible, where the step trades
    barrier descent against feasibility restoration.
    """
    slope = float(g @ dz)
    bcfg = BarrierConfig(mu=mu, barrier_kind=cfg.barrier_kind)
    f0 = eval_barrier_objective(nlp, z, bcfg)
    if np.linalg.norm(dz) == 0.0:
        return alpha_max, f0, 0
    if slope >= 0.0 and not allow_nondescent:
        raise NonDescentError(f"g^T dz = {slope:.3e} >= 0")

    eq0 = float(np.linalg.norm(nlp.equalities(z)))
    alpha = alpha_max
    for k in range(cfg.max_backtracks):
        trial = z + alpha * dz
        f_trial = eval_barrier_objective(nlp, trial, bcfg)  # +inf if H >= 0
        ok = f_trial <= f0 + cfg.armijo_c * alpha * slope
        if ok and cfg.enforce_infeasibility_decrease and eq0 > 0.0:
            eq_trial = float(np.linalg.norm(nlp.equalities(trial)))
            ok = eq_trial <= (1.0 - cfg.infeasibility_sigma * alpha) * eq0
        if ok:
            return alpha, f_trial, k
        alpha *= cfg.backtrack_tau
    return None


def update_barrier(mu: float, cfg: SqpConfig, progress: dict[str, float]) -> float:
    """Barrier update rule: geometric, constant, or progress-adaptive."""
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    if cfg.barrier_update == "constant":
        new = mu
    elif cfg.barrier_update == "geometric":
        new = cfg.beta * mu
    else:  # adaptive: shrink only when both residuals improved
        improved = (progress.get("eq_decreased", False)
                    and progress.get("stat_decreased", False))
        new = cfg.beta * mu if improved else mu
    if cfg.mu_clamp is not None:
        new = max(new, cfg.mu_clamp)
    return new


def _grad_f_norm(nlp, z):
    return float(np.linalg.norm(nlp.objective_gradient(z)))


def _barrier_gradient(nlp, z, mu, kind):
    bcfg = BarrierConfig(mu=mu, barrier_kind=kind)
    g = nlp.objective_gradient(z)
    h = nlp.inequalities(z)
    if h.size:
        g = g + nlp.inequalities_jacobian(z).T @ (mu * bcfg.funcs[1](h))
    return g


def _stationarity_norm(nlp, z, mu, kind, lam):
    g = _barrier_gradient(nlp, z, mu, kind)
    if lam is not None and lam.size:
        g = g + nlp.equalities_jacobian(z).T @ lam
    return float(np.linalg.norm(g))


def solve(
    nlp: TrajectoryNlp,
    z0: np.ndarray,
    cfg: SqpConfig,
    solver: SchurStepSolver,
) -> SolveReport:
    """Run the barrier loop from a strictly feasible start.

    The trace records every iterate; termination is one of converged,
    mu_floor, iter_cap, or line_search_failure.  Hard backend failures
    (singular systems, exhausted error budgets) propagate as exceptions.
    """
    z = np.asarray(z0, dtype=float).copy()
    h = nlp.inequalities(z)
    if h.size and np.max(h) >= 0.0:
        raise InfeasiblePointError(
            f"initial point violates strict feasibility: max H = {np.max(h):.3e}")

    mu = cfg.mu0
    records = [_record_initial(nlp, z, mu, cfg)]

    # Short-circuit when the start already meets the convergence criteria.
    if _check_convergence(nlp, z, mu, cfg, lam=None):
        return SolveReport(records=records, termination="converged",
                           z_star=z, mu_final=mu, message="initial point optimal")

    termination = None
    message = ""
    i = 0
    prev_eq = records[0].eq_norm
    prev_stat = float("nan")

    while mu > cfg.mu_min:
        if i >= cfg.max_outer_iters:
            termination = "iter_cap"
            break

        bcfg = BarrierConfig(mu=mu, sigma=cfg.sigma0, barrier_kind=cfg.barrier_kind)
        qp = build_qp(nlp, z, bcfg)

        sol = solver.step(qp)
        retried = False
        accepted = None
        # While the iterate is equality-infeasible the step also restores
        # feasibility and g^T dz may legitimately be nonnegative; run the
        # acceptance loop as printed.  At feasible iterates a non-descent
        # direction signals solver-quality failure instead.
        restoring = float(np.linalg.norm(nlp.equalities(z))) > cfg.eps_feas
        while True:
            try:
                h_vals = nlp.inequalities(z)
                if h_vals.size:
                    h_dirderivs = nlp.inequalities_jacobian(z) @ sol.dz
                    alpha_max = fraction_to_boundary(
                        z, sol.dz, h_vals, h_dirderivs, cfg.boundary_theta)
                else:
                    alpha_max = 1.0
                accepted = backtrack(nlp, z, sol.dz, qp.g, mu, alpha_max, cfg,
                                     allow_nondescent=restoring)
                break
            except NonDescentError as exc:
                # Recoverable once for probabilistic backends: re-invoke with
                # fresh randomness, mu untouched.  A second failure aborts.
                if retried:
                    if _check_convergence(nlp, z, mu, cfg, lam=sol.lam):
                        termination = "converged"
                        message = "stationary at non-descent abort"
                    else:
                        termination = "line_search_failure"
                        message = f"non-descent direction twice: {exc}"
                    break
                retried = True
                sol = solver.step(qp)

        if termination is not None:
            break
        if accepted is None:
            termination = "line_search_failure"
            message = f"backtracking exhausted {cfg.max_backtracks} trials"
            break

        alpha, f_new, n_bt = accepted
        slope = float(qp.g @ sol.dz)
        f_old = eval_barrier_objective(
            nlp, z, BarrierConfig(mu=mu, barrier_kind=cfg.barrier_kind))
        z = z + alpha * sol.dz

        eq_norm = float(np.linalg.norm(nlp.equalities(z)))
        stat_norm = _stationarity_norm(nlp, z, mu, cfg.barrier_kind, sol.lam)
        infeas_ratio = eq_norm / prev_eq if prev_eq > 0.0 else float("nan")
        records.append(IterateRecord(
            i=i + 1,
            z=z.copy(),
            mu=mu,
            alpha=alpha,
            dz_norm=float(np.linalg.norm(sol.dz)),
            eq_norm=eq_norm,
            grad_f_norm=_grad_f_norm(nlp, z),
            f_bar=f_new,
            h_max=_h_max(nlp, z),
            slope=slope,
            armijo_rhs=f_old + cfg.armijo_c * alpha * slope,
            kkt_stat_norm=stat_norm,
            backtracks=n_bt,
            infeas_ratio=infeas_ratio,
            infeas_decrease_ok=bool(
                eq_norm <= (1.0 - cfg.infeasibility_sigma * alpha) * prev_eq
            ) if prev_eq > 0.0 else True,
            solver_diag=dict(sol.diagnostics),
        ))

        if _check_convergence(nlp, z, mu, cfg, lam=sol.lam, stat_norm=stat_norm):
            termination = "converged"
            break

        progress = {
            "eq_decreased": eq_norm < prev_eq,
            "stat_decreased": not np.isnan(prev_stat) and stat_norm < prev_stat,
        }
        mu = update_barrier(mu, cfg, progress)
        prev_eq, prev_stat = eq_norm, stat_norm
        i += 1

    if termination is None:
        termination = "mu_floor"
    return SolveReport(records=records, termination=termination,
                       z_star=z, mu_final=mu, message=message)


def _h_max(nlp, z):
    h = nlp.inequalities(z)
    return float(np.max(h)) if h.size else float("-inf")


def _record_initial(nlp, z, mu, cfg):
    bcfg = BarrierConfig(mu=mu, barrier_kind=cfg.barrier_kind)
    return IterateRecord(
        i=0,
        z=z.copy(),
        mu=mu,
        alpha=0.0,
        dz_norm=0.0,
        eq_norm=float(np.linalg.norm(nlp.equalities(z))),
        grad_f_norm=_grad_f_norm(nlp, z),
        f_bar=eval_barrier_objective(nlp, z, bcfg),
        h_max=_h_max(nlp, z),
    )


def _check_convergence(nlp, z, mu, cfg, lam, stat_norm=None):
    eq_norm = float(np.linalg.norm(nlp.equalities(z)))
    if eq_norm > cfg.eps_feas:
        return False
    if cfg.convergence_check == "grad_f":
        return _grad_f_norm(nlp, z) <= cfg.eps_opt
    if stat_norm is None:
        stat_norm = _stationarity_norm(nlp, z, mu, cfg.barrier_kind,
                                       lam if lam is not None else np.zeros(0))
    return stat_norm <= cfg.eps_opt
