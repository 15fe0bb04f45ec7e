"""Step-size theory for averaged cocoercive denoisers.

For a gamma-cocoercive denoiser D and mixing weight t, the averaged map
``D_t = t*D + (1-t)*I`` is the proximal map of an implicit function F/beta
whose weak-convexity modulus r and subgradient Lipschitz constant L are
explicit in (gamma, t, beta):

* ``r = beta * t * (1-gamma) / (t + gamma - gamma*t)``
* ``L = beta * t / (1-t)`` when ``t >= (1-2*gamma)/(2-2*gamma)`` (case 1),
  else ``L = r`` (case 2).

The ADMM descent margin ``beta/2 - r/2 - L^2/beta`` is positive exactly for
``t < t0(gamma)``, where t0 is the unique positive root of the cubic
``(2-2*gamma)*t^3 + gamma*t^2 + 2*gamma*t - gamma``.  The envelope-gradient
step bound uses the beta-normalized modulus ``r' = r/beta`` and reads
``max(2/(1+r'), 1)``; both normalizations of the moduli are reported so the
scaling convention is always visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers import Denoiser, averaged_apply
from .errors import ValidationError

__all__ = [
    "TheoryParams",
    "ModulusReport",
    "ProxPropertyReport",
    "cubic_value",
    "solve_t0",
    "weak_convexity_modulus",
    "moduli",
    "admm_margin",
    "pegd_step_bound",
    "verify_prox_property",
]


@dataclass(frozen=True)
class TheoryParams:
    """Certified parameter triple: gamma in (0, 1], t in [0, 1), beta > 0."""

    gamma: float
    t: float
    beta: float

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (0.0 <= self.t < 1.0):
            raise ValidationError(f"t must lie in [0, 1), got {self.t}")
        if not (self.beta > 0.0 and np.isfinite(self.beta)):
            raise ValidationError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class ModulusReport:
    """Moduli of the implicit prox potential and derived step certificates."""

    gamma: float
    t: float
    beta: float
    r: float
    L: float
    case: int
    t0: float
    admm_margin: float
    pegd_step_bound: float
    r_over_beta: float
    L_over_beta: float


@dataclass(frozen=True)
class ProxPropertyReport:
    """Worst observed violations of the two prox-characterizing inequalities."""

    samples: int
    worst_monotonicity_violation: float
    worst_lipschitz_violation: float
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.worst_monotonicity_violation <= self.tol
            and self.worst_lipschitz_violation <= self.tol
        )


def cubic_value(t: float, gamma: float) -> float:
    """The margin-sign cubic ``(2-2g) t^3 + g t^2 + 2 g t - g``."""
    return (2.0 - 2.0 * gamma) * t**3 + gamma * t**2 + 2.0 * gamma * t - gamma


def solve_t0(gamma: float, tol: float = 1e-12) -> float:
    """Unique positive root of the margin cubic, by bisection on [0, 1].

    Requires gamma in (0, 1): at gamma = 1 the averaged map is a proximal map
    of a convex function for every t and no break-even weight exists.
    """
    if not (0.0 < gamma < 1.0):
        raise ValidationError(f"solve_t0 requires gamma in (0, 1), got {gamma}")
    lo, hi = 0.0, 1.0
    # cubic(0) = -gamma < 0 and cubic(1) = 2 > 0; the cubic is strictly
    # increasing on t > 0, so bisection converges to the unique root.
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cubic_value(mid, gamma) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def weak_convexity_modulus(gamma: float, t: float, beta: float) -> float:
    """``r = beta*t*(1-gamma)/(t + gamma - gamma*t)``; valid for t in [0, 1]."""
    if not (0.0 < gamma <= 1.0):
        raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
    if not (0.0 <= t <= 1.0):
        raise ValidationError(f"t must lie in [0, 1], got {t}")
    return beta * t * (1.0 - gamma) / (t + gamma - gamma * t)


def _case_boundary(gamma: float) -> float:
    if gamma == 1.0:
        return -np.inf
    return (1.0 - 2.0 * gamma) / (2.0 - 2.0 * gamma)


def moduli(p: TheoryParams) -> ModulusReport:
    """Full modulus report for one parameter triple."""
    r = weak_convexity_modulus(p.gamma, p.t, p.beta)
    case = 1 if p.t >= _case_boundary(p.gamma) else 2
    L = p.beta * p.t / (1.0 - p.t) if case == 1 else r
    t0 = solve_t0(p.gamma) if p.gamma < 1.0 else float("nan")
    margin = p.beta / 2.0 - r / 2.0 - L * L / p.beta
    bound = pegd_step_bound(p.gamma, p.t, p.beta)
    return ModulusReport(
        gamma=p.gamma,
        t=p.t,
        beta=p.beta,
        r=r,
        L=L,
        case=case,
        t0=t0,
        admm_margin=margin,
        pegd_step_bound=bound,
        r_over_beta=r / p.beta,
        L_over_beta=L / p.beta,
    )


def admm_margin(p: TheoryParams) -> float:
    """Descent coefficient ``beta/2 - r/2 - L^2/beta``; positive iff t < t0."""
    return moduli(p).admm_margin


def pegd_step_bound(gamma: float, t: float, beta: float) -> float:
    """Envelope-gradient step bound ``max(2/(1+r/beta), 1)``; valid t in [0, 1]."""
    r_norm = weak_convexity_modulus(gamma, t, beta) / beta
    return max(2.0 / (1.0 + r_norm), 1.0)


def verify_prox_property(
    d: Denoiser,
    p: TheoryParams,
    sigma: float,
    samples: int,
    seed: int,
    shape: tuple[int, ...] | None = None,
    tol: float = 1e-8,
) -> ProxPropertyReport:
    """Sample-test that the averaged map behaves like a prox with moduli (r, L).

    For pairs (x, y) with u, v the averaged-map outputs, checks

    1. ``<beta*(x-u) - beta*(y-v), u - v> >= -r * ||u - v||^2``
    2. ``||beta*(x-u) - beta*(y-v)|| <= L * ||u - v||``

    Positive report entries measure the worst violation; within ``tol``
    counts as a pass.
    """
    if samples < 1:
        raise ValidationError(f"samples must be >= 1, got {samples}")
    rep = moduli(p)
    if shape is None:
        shape = (d.input_dim,) if d.input_dim is not None else (8, 8)
    rng = np.random.default_rng(seed)
    worst_mono = -np.inf
    worst_lip = -np.inf
    for _ in range(samples):
        x = rng.uniform(0.0, 1.0, size=shape)
        y = rng.uniform(0.0, 1.0, size=shape)
        u = averaged_apply(d, p.t, x, sigma)
        v = averaged_apply(d, p.t, y, sigma)
        du = p.beta * (x - u) - p.beta * (y - v)
        uv = u - v
        nuv2 = float(np.vdot(uv, uv).real)
        mono_violation = -(float(np.vdot(du, uv).real) + rep.r * nuv2)
        lip_violation = float(np.linalg.norm(du)) - rep.L * float(np.sqrt(nuv2))
        worst_mono = max(worst_mono, mono_violation)
        worst_lip = max(worst_lip, lip_violation)
    return ProxPropertyReport(
        samples=samples,
        worst_monotonicity_violation=worst_mono,
        worst_lipschitz_violation=worst_lip,
        tol=tol,
    )
