"""Discretize-optimize solvers: forward-backward, Nesterov and FISTA.

All three split the energy into ``f1(x) = sum |Dx| + indicator(box)`` and
``f2(x) = lam/2 ||x - z||^2`` (``beta = lam`` is the Lipschitz constant of
``grad f2``).  The proximal map of ``f1`` has no closed form; it is computed by
projected gradient ascent on its dual, with ``|Phi| <= 1`` per pixel.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .config import (
    ProxConfig,
    RunReport,
    SolverConfig,
    energy,
    finalize_report,
    prepare_problem,
    relative_change,
)
from .frac_ops import FracOperator, frac_div_adjoint, frac_grad, operator_norm_sq

log = logging.getLogger(__name__)

# the widened box around the lifted data: [min(z) - pad, max(z) + pad]
BOX_PAD = 0.1
TV_LIPSCHITZ = 16.0
# Nesterov's weight b_k grows geometrically when beta < 1; past B_HUGE the pair
# (b, y) is rescaled, which leaves the b >> 1 recurrence unchanged
B_HUGE = 1e100
B_RESCALE = 1e-50


@dataclass
class DualState:
    """Dual variable of the prox subproblem plus its last optimality gap."""

    phi: np.ndarray
    gap: float = math.inf  # relative duality gap after the last inner step
    steps: int = 0


def proj_box(u: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Pointwise clamp to ``[lo, hi]``."""
    return np.clip(u, lo, hi)


def proj_unit(phi: np.ndarray) -> np.ndarray:
    """Scale each pixel's ``(phi_x, phi_y)`` by ``1 / max(1, |phi|)``."""
    mag = np.sqrt((phi**2).sum(axis=0))
    return phi / np.maximum(1.0, mag)


def dual_lipschitz(gamma: float, norm_sq: float, pc: ProxConfig) -> float:
    """``L(h) = gamma^2 ||D||^2 * safety``, or ``16 gamma^2`` with ``tv_lipschitz``.

    With the step ``2 gamma / L(h)`` the dual update moves by just under
    ``2 / Lip`` (``Lip = 2 gamma^2 ||D||^2`` for the dual gradient), the
    largest step for which projected gradient still converges.
    """
    if pc.tv_lipschitz:
        return TV_LIPSCHITZ * gamma**2
    return gamma**2 * norm_sq * pc.safety


def prox_f1(
    x_k: np.ndarray,
    gamma: float,
    pc: ProxConfig,
    opx: FracOperator,
    opy: FracOperator,
    steps: int,
    state: DualState | None = None,
    box: tuple[float, float] = (0.0, 1.0),
    norm_sq: float | None = None,
) -> tuple[np.ndarray, DualState]:
    """``argmin_{x in box} gamma sum |Dx| + 1/2 ||x - x_k||^2`` by dual projection.

    Each step is ``Phi <- P_unit(Phi + 2 s gamma D(P_box(x_k - gamma D* Phi)))``
    with ``s = step_scale / L`` (see :func:`dual_lipschitz`). ``state`` carries ``Phi`` between calls
    (warm start); the returned state's ``gap`` is the duality gap of the
    final pair divided by the primal value.
    """
    if not gamma > 0:
        raise ValueError(f"prox weight must be positive, got {gamma}")
    lo, hi = box
    if norm_sq is None:
        norm_sq = operator_norm_sq(opx, opy)
    step = 2.0 * gamma * pc.step_scale / dual_lipschitz(gamma, norm_sq, pc)
    if state is None or not pc.warm_start:
        state = DualState(np.zeros((2,) + x_k.shape))
    phi = state.phi
    for _ in range(steps):
        x = proj_box(x_k - gamma * frac_div_adjoint(phi, opx, opy), lo, hi)
        phi = proj_unit(phi + step * frac_grad(x, opx, opy))
    x = proj_box(x_k - gamma * frac_div_adjoint(phi, opx, opy), lo, hi)
    # x minimizes the Lagrangian for this phi, so the gap is gamma (|Dx| - <Dx, phi>)
    dx = frac_grad(x, opx, opy)
    tv = float(np.sqrt((dx**2).sum(axis=0)).sum())
    primal = gamma * tv + 0.5 * float(np.sum((x - x_k) ** 2))
    gap = gamma * (tv - float(np.vdot(dx, phi)))
    rel = gap / primal if primal > 0 else 0.0
    return x, DualState(phi, max(rel, 0.0), state.steps + steps)


def _box_for(z: np.ndarray) -> tuple[float, float]:
    return float(z.min()) - BOX_PAD, float(z.max()) + BOX_PAD


def nesterov_root(b: float, beta: float) -> float:
    """Positive root of ``a^2 / (2 (b + a)) = (1 + b) / beta``."""
    c = 2.0 * (1.0 + b) / beta
    disc = c * c + 4.0 * c * b
    assert disc >= 0.0, "negative discriminant with b, beta > 0"
    return 0.5 * (c + math.sqrt(disc))


def fista_t_next(t: float) -> float:
    return 0.5 * (1.0 + math.sqrt(4.0 * t * t + 1.0))


class _Run:
    """Shared setup and bookkeeping for the three proximal solvers."""

    def __init__(self, name: str, z, cfg: SolverConfig, pc: ProxConfig, clean, workers: int):
        self.t0 = time.perf_counter()
        self.cfg, self.pc, self.clean = cfg, pc, clean
        self.prob = prepare_problem(z, cfg, workers=workers)
        self.zl = self.prob.z
        self.lam = self.prob.lam  # beta, the Lipschitz constant of grad f2
        self.box = _box_for(self.zl)
        self.norm_sq = operator_norm_sq(self.prob.opx, self.prob.opy)
        self.steps = pc.inner_steps if pc.inner_steps is not None else cfg.max_inner
        self.report = RunReport(name, cfg.alpha, cfg.lam, cfg.mu, cfg.gamma, cfg.criterion)
        self.record(self.zl)

    def grad_f2(self, x: np.ndarray) -> np.ndarray:
        return self.lam * (x - self.zl)

    def prox(self, x_k, gamma, state):
        return prox_f1(
            x_k, gamma, self.pc, self.prob.opx, self.prob.opy, self.steps, state, self.box, self.norm_sq
        )

    def record(self, x: np.ndarray) -> None:
        du = frac_grad(x, self.prob.opx, self.prob.opy)
        self.report.energy_trace.append(energy(x, self.zl, self.lam, du))

    def should_stop(self, k: int, x_new, x_old, dual: DualState) -> bool:
        self.report.outer_iters = k + 1
        if relative_change(x_new, x_old) < self.cfg.tol_error:
            self.report.converged, self.report.stop_reason = True, "relative error"
            return True
        if dual.gap < self.cfg.tol_residual:
            self.report.converged, self.report.stop_reason = True, "relative residual"
            return True
        return False

    def finish(self, x: np.ndarray):
        if not self.report.converged:
            self.report.stop_reason = "max_outer"
            log.info("%s hit max_outer=%d", self.report.solver, self.cfg.max_outer)
        out = self.prob.finish(x)
        self.report.wall_seconds = time.perf_counter() - self.t0
        finalize_report(self.report, out, self.clean)
        return out, self.report


def fb_denoise(
    z: np.ndarray,
    cfg: SolverConfig,
    pc: ProxConfig | None = None,
    clean: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, RunReport]:
    """Forward-backward splitting with ``gamma_k = 1/beta`` and no relaxation."""
    pc = pc or ProxConfig()
    run = _Run("fb", z, cfg, pc, clean, workers)
    gamma = 1.0 / run.lam
    x = run.zl.copy()
    dual = None
    for k in range(cfg.max_outer):
        y = x - gamma * run.grad_f2(x)
        x_new, dual = run.prox(y, gamma, dual)
        x_new = x + 1.0 * (x_new - x)  # relaxation lambda_k = 1
        run.record(x_new)
        done = run.should_stop(k, x_new, x, dual)
        x = x_new
        if done:
            break
    return run.finish(x)


def nesterov_denoise(
    z: np.ndarray,
    cfg: SolverConfig,
    pc: ProxConfig | None = None,
    clean: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, RunReport]:
    """Nesterov's accelerated multistep method with a composite gradient mapping.

    ``nesterov_variant="accumulated"`` takes ``v_k = prox^{b_k}(x_0 - y_k)``
    with ``y`` the weighted gradient sum (starting at 0); "printed" uses
    ``prox^{b_k}(x_k - y_k)`` with ``y_0 = x_0``.

    When the fidelity weight is small ``b_k`` grows geometrically, so once it
    exceeds ``B_HUGE`` both ``b`` and ``y`` are multiplied by ``B_RESCALE``.
    That changes only the weight of the ``1/2 ||x - x_0||^2`` anchor in the
    estimate sequence, which is already negligible at that point.
    """
    pc = pc or ProxConfig()
    run = _Run("nesterov", z, cfg, pc, clean, workers)
    beta = run.lam
    x0 = run.zl.copy()
    x = x0.copy()
    accumulated = pc.nesterov_variant == "accumulated"
    y = np.zeros_like(x0) if accumulated else x0.copy()
    b = pc.nesterov_b0
    dual_v = dual_x = None
    for k in range(cfg.max_outer):
        a = nesterov_root(b, beta)
        v, dual_v = run.prox((x0 if accumulated else x) - y, b, dual_v)
        zk = x + (a / (b + a)) * (v - x)
        x_new, dual_x = run.prox(zk - run.grad_f2(zk) / beta, 1.0 / beta, dual_x)
        y = y + a * run.grad_f2(x_new)
        b += a
        if b > B_HUGE:
            b *= B_RESCALE
            y *= B_RESCALE
        run.record(x_new)
        done = run.should_stop(k, x_new, x, dual_x)
        x = x_new
        if done:
            break
    return run.finish(x)


def fista_denoise(
    z: np.ndarray,
    cfg: SolverConfig,
    pc: ProxConfig | None = None,
    clean: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, RunReport]:
    """FISTA; the momentum factor is ``1 + (t_k - 1)/t_k`` unless
    ``fista_momentum="standard"`` selects ``(t_k - 1)/t_{k+1}``."""
    pc = pc or ProxConfig()
    run = _Run("fista", z, cfg, pc, clean, workers)
    beta = run.lam
    x = run.zl.copy()
    zk = x.copy()
    t = 1.0
    dual = None
    for k in range(cfg.max_outer):
        y = zk - run.grad_f2(zk) / beta
        x_new, dual = run.prox(y, 1.0 / beta, dual)
        t_new = fista_t_next(t)
        if pc.fista_momentum == "printed":
            theta = 1.0 + (t - 1.0) / t
            zk = x + theta * (x_new - x)
        else:
            zk = x_new + ((t - 1.0) / t_new) * (x_new - x)
        t = t_new
        run.record(x_new)
        done = run.should_stop(k, x_new, x, dual)
        x = x_new
        if done:
            break
    return run.finish(x)


SOLVERS = {
    "fb": fb_denoise,
    "nesterov": nesterov_denoise,
    "fista": fista_denoise,
}
