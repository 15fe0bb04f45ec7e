"""Plug-and-play restoration solvers with descent certificates.

Two iterations are provided, both driven by the averaged denoiser
``D_t = t*D + (1-t)*I`` and the scaled Poisson prox:

* ``coco_admm``: u-update through ``prox_{G/beta}``, v-update through D_t,
  scaled dual ascent on b.  When the denoiser exposes an explicit potential
  F the augmented Lagrangian ``F(v) + G(u) + beta*<b, u-v> + beta/2*||u-v||^2``
  is recorded each iteration; theory guarantees it decreases with a margin
  of ``beta/2 - r/2 - L^2/beta`` on the v-step whenever t < t0(gamma).

* ``coco_pegd``: gradient descent on the unit Moreau envelope of G composed
  with D_t.  The merit ``F(u) + env_G(u)`` is recorded when F is available.

beta defaults to ``1/sigma^2``; an explicit override is allowed because the
envelope iteration only needs ``1/beta`` below the step bound, not the noise
calibration.  With ``enforce_theory`` set, parameter triples outside the
descent regime are rejected up front with the violated bound in the message.

Both solvers are deterministic: no randomness enters the iterations.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .denoisers import Denoiser, averaged_apply
from .errors import NumericalError, ValidationError
from .fidelity import (
    InnerAdmmConfig,
    PoissonFidelity,
    fidelity_value,
    moreau_grad,
    moreau_value,
    prox_general,
    prox_identity,
)
from .imaging import IdentityOperator, psnr
from .theory import pegd_step_bound, solve_t0

__all__ = [
    "SolverConfig",
    "SolverTrace",
    "SolverResult",
    "coco_admm",
    "coco_pegd",
    "lyapunov_value",
]

TRACE_COLUMNS = ["iter", "rel_change", "psnr", "fidelity", "lyapunov", "millis"]


@dataclass
class SolverConfig:
    """Restoration parameters shared by both solvers."""

    sigma: float
    gamma: float
    t: float
    lam: float
    max_iter: int = 200
    stop_tol: float = 1e-6
    inner: InnerAdmmConfig = field(default_factory=InnerAdmmConfig)
    enforce_theory: bool = True
    beta: float | None = None

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (0.0 <= self.t <= 1.0):
            raise ValidationError(f"t must lie in [0, 1], got {self.t}")
        if not (self.lam >= 0):
            raise ValidationError(f"lam must be nonnegative, got {self.lam}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.stop_tol < 0:
            raise ValidationError(f"stop_tol must be nonnegative, got {self.stop_tol}")
        if self.beta is not None and not (self.beta > 0):
            raise ValidationError(f"beta override must be positive, got {self.beta}")

    @property
    def effective_beta(self) -> float:
        return self.beta if self.beta is not None else 1.0 / (self.sigma * self.sigma)


@dataclass
class SolverTrace:
    """Per-iteration diagnostics, one row per outer iteration."""

    rel_change: list[float] = field(default_factory=list)
    psnr: list[float | None] = field(default_factory=list)
    fidelity: list[float] = field(default_factory=list)
    lyapunov: list[float | None] = field(default_factory=list)
    millis: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rel_change)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for k in range(self.iterations):
                writer.writerow(
                    [
                        k + 1,
                        f"{self.rel_change[k]:.12e}",
                        "" if self.psnr[k] is None else f"{self.psnr[k]:.6f}",
                        f"{self.fidelity[k]:.12e}",
                        "" if self.lyapunov[k] is None else f"{self.lyapunov[k]:.12e}",
                        f"{self.millis[k]:.3f}",
                    ]
                )


@dataclass
class SolverResult:
    u: np.ndarray
    trace: SolverTrace
    v: np.ndarray | None = None
    b: np.ndarray | None = None


def lyapunov_value(
    u: np.ndarray,
    v: np.ndarray,
    b: np.ndarray,
    g: PoissonFidelity,
    potential: float,
    beta: float,
) -> float:
    """Augmented Lagrangian ``F(v) + G(u) + beta*<b, u-v> + beta/2*||u-v||^2``."""
    diff = u - v
    return (
        potential
        + fidelity_value(g, u)
        + beta * float(np.vdot(b, diff).real)
        + 0.5 * beta * float(np.vdot(diff, diff).real)
    )


def _check_gamma_consistency(d: Denoiser, cfg: SolverConfig) -> None:
    claimed = d.claimed_gamma
    if claimed is not None and abs(claimed - cfg.gamma) > 1e-12:
        raise ValidationError(
            f"config gamma {cfg.gamma} disagrees with denoiser claimed_gamma {claimed}"
        )


def _check_lam_consistency(g: PoissonFidelity, cfg: SolverConfig) -> None:
    # The data weight lives on the fidelity; the config copy is for reporting.
    # A silent mismatch would make sweeps lie, so reject it.
    if abs(g.lam - cfg.lam) > 1e-12:
        raise ValidationError(
            f"config lam {cfg.lam} disagrees with fidelity lam {g.lam}"
        )


def _initial_u(g: PoissonFidelity) -> np.ndarray:
    if g.op.preserves_shape:
        return g.observed.copy()
    # Shape-changing models start from the zero-filled adjoint of the data.
    return g.op.adjoint(g.observed)


def _prox_dispatch(z: np.ndarray, g: PoissonFidelity, beta: float, inner: InnerAdmmConfig) -> np.ndarray:
    if isinstance(g.op, IdentityOperator):
        return prox_identity(z, g, beta)
    return prox_general(z, g, beta, inner)


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(old)), 1e-15)
    return float(np.linalg.norm(new - old)) / denom


def coco_admm(
    g: PoissonFidelity,
    d: Denoiser,
    cfg: SolverConfig,
    reference: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
) -> SolverResult:
    """Splitting iteration: prox step on G, averaged denoiser step, dual update."""
    _check_gamma_consistency(d, cfg)
    _check_lam_consistency(g, cfg)
    beta = cfg.effective_beta
    if cfg.enforce_theory and cfg.gamma < 1.0:
        t0 = solve_t0(cfg.gamma)
        if cfg.t >= t0:
            raise ValidationError(
                f"descent requires t < t0 = {t0:.4f} for gamma = {cfg.gamma}; got t = {cfg.t}"
            )
    track_lyapunov = d.has_potential
    u = _initial_u(g)
    v = u.copy()
    b = np.zeros_like(u)
    trace = SolverTrace()
    for k in range(cfg.max_iter):
        tic = time.perf_counter()
        u_prev = u
        v_prev = v
        u = _prox_dispatch(v - b, g, beta, cfg.inner)
        v = averaged_apply(d, cfg.t, u + b, cfg.sigma)
        b = b + u - v
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite iterate at iteration {k + 1}")
        # Both primal blocks must settle: with an identity forward model the
        # very first u-update already returns the fidelity minimizer.
        rel = max(_rel_change(u, u_prev), _rel_change(v, v_prev))
        lyap = None
        if track_lyapunov:
            pot = d.averaged_potential(v, cfg.t, beta, cfg.sigma)
            lyap = lyapunov_value(u, v, b, g, pot, beta)
        trace.rel_change.append(rel)
        trace.psnr.append(None if reference is None else psnr(reference, u))
        trace.fidelity.append(fidelity_value(g, u))
        trace.lyapunov.append(lyap)
        trace.millis.append((time.perf_counter() - tic) * 1e3)
        if callback is not None:
            callback(k + 1, u, v, b)
        if rel < cfg.stop_tol:
            trace.converged = True
            break
    return SolverResult(u=u, trace=trace, v=v, b=b)


def coco_pegd(
    g: PoissonFidelity,
    d: Denoiser,
    cfg: SolverConfig,
    reference: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> SolverResult:
    """Proximal envelope gradient descent composed with the averaged denoiser."""
    _check_gamma_consistency(d, cfg)
    _check_lam_consistency(g, cfg)
    beta = cfg.effective_beta
    if cfg.enforce_theory:
        if not (0.25 <= cfg.gamma <= 1.0):
            raise ValidationError(
                f"envelope descent requires gamma in [0.25, 1], got {cfg.gamma}"
            )
        if not (0.0 < cfg.t <= 1.0):
            raise ValidationError(f"envelope descent requires t in (0, 1], got {cfg.t}")
        bound = pegd_step_bound(cfg.gamma, cfg.t, beta)
        if not (1.0 / beta < bound):
            raise ValidationError(
                f"step 1/beta = {1.0 / beta:.6g} violates the bound {bound:.6g}; "
                f"increase beta"
            )
    track_merit = d.has_potential
    u = _initial_u(g)
    trace = SolverTrace()
    for k in range(cfg.max_iter):
        tic = time.perf_counter()
        u_prev = u
        u = averaged_apply(d, cfg.t, u - moreau_grad(u, g, cfg.inner) / beta, cfg.sigma)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite iterate at iteration {k + 1}")
        rel = _rel_change(u, u_prev)
        merit = None
        if track_merit:
            merit = d.averaged_potential(u, cfg.t, beta, cfg.sigma) + moreau_value(
                u, g, cfg.inner
            )
        trace.rel_change.append(rel)
        trace.psnr.append(None if reference is None else psnr(reference, u))
        trace.fidelity.append(fidelity_value(g, u))
        trace.lyapunov.append(merit)
        trace.millis.append((time.perf_counter() - tic) * 1e3)
        if callback is not None:
            callback(k + 1, u)
        if rel < cfg.stop_tol:
            trace.converged = True
            break
    return SolverResult(u=u, trace=trace)
