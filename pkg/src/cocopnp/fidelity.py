"""Scaled Poisson log-likelihood fidelity and its proximal maps.

The data term for an observation f under forward model K with weight lam is

    G(u) = lam * sum_i ( (Ku)_i - f_i * log (Ku)_i )

with the convention ``0 * log 0 = 0`` at pixels where f is zero; the value
is +inf whenever ``(Ku)_i <= 0`` at a pixel with ``f_i > 0``.  G is convex,
and its scaled proximal map ``prox_{G/beta}`` is the workhorse of the
splitting solvers.

For K = I the prox is available pixelwise in closed form as the positive
root of a quadratic.  For general K an inner ADMM computes it: the quadratic
x-subproblem is solved exactly (frequency division for circular blur,
conjugate gradients otherwise) and the separable y-subproblem reuses the
pixelwise root.  The inner loop runs a fixed number of iterations, its fixed
point does not depend on the inner penalty rho.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

from .errors import NumericalError, ValidationError
from .imaging import CircularConvolution, IdentityOperator, LinearOperator, as_image

__all__ = [
    "PoissonFidelity",
    "InnerAdmmConfig",
    "fidelity_value",
    "prox_identity",
    "prox_general",
    "moreau_grad",
    "moreau_value",
]


@dataclass(frozen=True)
class InnerAdmmConfig:
    """Inner-loop controls for the general proximal map."""

    rho: float = 1.0
    iterations: int = 10
    cg_tol: float = 1e-10
    cg_max: int = 500

    def __post_init__(self) -> None:
        if not (self.rho > 0):
            raise ValidationError(f"rho must be positive, got {self.rho}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class PoissonFidelity:
    """Observation, forward model, and fidelity weight bundled together."""

    observed: np.ndarray
    op: LinearOperator
    lam: float

    def __post_init__(self) -> None:
        self.observed = as_image(self.observed)
        if np.any(self.observed < 0):
            raise ValidationError("observed counts must be nonnegative")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValidationError(f"lam must be a finite nonnegative real, got {self.lam}")


def fidelity_value(g: PoissonFidelity, u: np.ndarray) -> float:
    """Evaluate G(u); returns +inf outside the domain instead of raising."""
    if g.lam == 0.0:
        return 0.0
    ku = g.op.forward(np.asarray(u, dtype=np.float64))
    f = g.observed
    if ku.shape != f.shape:
        raise ValidationError(f"forward shape {ku.shape} does not match data {f.shape}")
    pos = f > 0
    if np.any(ku[pos] <= 0.0):
        return float("inf")
    val = ku.sum()
    val -= float(np.sum(f[pos] * np.log(ku[pos])))
    return float(g.lam * val)


def _pixel_root(shift: np.ndarray, f: np.ndarray, lam: float, scale: float) -> np.ndarray:
    """Positive root of ``scale*y^2 + (lam - scale*shift)*y - lam*f = 0``.

    ``shift`` is the prox center.  Uses the conjugate form on the negative
    branch so the root is computed without cancellation; pixels with f = 0
    collapse to a shifted nonnegative clip.
    """
    a = scale * shift - lam
    out = np.maximum(0.0, shift - lam / scale)
    posf = f > 0
    if np.any(posf):
        af = a[posf]
        s = np.sqrt(af * af + 4.0 * scale * lam * f[posf])
        root = np.where(af >= 0, (af + s) / (2.0 * scale), 0.0)
        neg = af < 0
        if np.any(neg):
            root[neg] = 2.0 * lam * f[posf][neg] / (s[neg] - af[neg])
        out[posf] = root
    return out


def prox_identity(z: np.ndarray, g: PoissonFidelity, beta: float) -> np.ndarray:
    """Closed-form ``prox_{G/beta}(z)`` for K = I, pixelwise."""
    if not isinstance(g.op, IdentityOperator):
        raise ValidationError("prox_identity requires an identity forward model")
    if not (beta > 0):
        raise ValidationError(f"beta must be positive, got {beta}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != g.observed.shape:
        raise ValidationError(f"shape mismatch {z.shape} vs {g.observed.shape}")
    if g.lam == 0.0:
        return z.copy()
    return _pixel_root(z, g.observed, g.lam, beta)


def _solve_quadratic_subproblem(
    rhs: np.ndarray,
    op: LinearOperator,
    beta: float,
    rho: float,
    cfg: InnerAdmmConfig,
    x0: np.ndarray,
) -> np.ndarray:
    """Solve ``(beta*I + rho*K^T K) x = rhs`` exactly or by CG."""
    if isinstance(op, IdentityOperator):
        return rhs / (beta + rho)
    if isinstance(op, CircularConvolution):
        t = op._transfer(rhs.shape[:2])
        denom = beta + rho * np.abs(t) ** 2
        if rhs.ndim == 2:
            return np.fft.irfft2(np.fft.rfft2(rhs) / denom, s=rhs.shape)
        out = np.empty_like(rhs)
        for c in range(rhs.shape[2]):
            out[:, :, c] = np.fft.irfft2(np.fft.rfft2(rhs[:, :, c]) / denom, s=rhs.shape[:2])
        return out
    shape = rhs.shape
    size = rhs.size

    def action(v: np.ndarray) -> np.ndarray:
        img = v.reshape(shape)
        return (beta * img + rho * op.adjoint(op.forward(img))).ravel()

    lin = scipy.sparse.linalg.LinearOperator((size, size), matvec=action)
    x, info = scipy.sparse.linalg.cg(
        lin, rhs.ravel(), x0=x0.ravel(), rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_max
    )
    if info != 0:
        raise NumericalError(f"inner CG failed to converge (info={info})")
    return x.reshape(shape)


def prox_general(
    z: np.ndarray,
    g: PoissonFidelity,
    beta: float,
    cfg: InnerAdmmConfig | None = None,
) -> np.ndarray:
    """``prox_{G/beta}(z)`` for a general forward model, by inner ADMM."""
    if not (beta > 0):
        raise ValidationError(f"beta must be positive, got {beta}")
    cfg = cfg or InnerAdmmConfig()
    z = np.asarray(z, dtype=np.float64)
    if g.lam == 0.0:
        return z.copy()
    f = g.observed
    rho = cfg.rho
    x = z.copy()
    y = z.copy() if g.op.out_shape(z.shape) == z.shape else g.op.forward(z)
    if y.shape != f.shape:
        raise ValidationError(f"observation shape {f.shape} does not match model {y.shape}")
    w = np.zeros_like(y)
    for _ in range(cfg.iterations):
        rhs = beta * z + rho * g.op.adjoint(y - w)
        x = _solve_quadratic_subproblem(rhs, g.op, beta, rho, cfg, x)
        kx = g.op.forward(x)
        y = _pixel_root(kx + w, f, g.lam, rho)
        w = w + kx - y
    return x


def _prox(z: np.ndarray, g: PoissonFidelity, beta: float, cfg: InnerAdmmConfig | None) -> np.ndarray:
    if isinstance(g.op, IdentityOperator):
        return prox_identity(z, g, beta)
    return prox_general(z, g, beta, cfg)


def moreau_grad(
    u: np.ndarray, g: PoissonFidelity, cfg: InnerAdmmConfig | None = None
) -> np.ndarray:
    """Gradient of the unit Moreau envelope of G: ``u - prox_G(u)``.

    The envelope gradient is 1-Lipschitz regardless of lam or K, which is
    what makes it a safe smoothed data term.
    """
    return np.asarray(u, dtype=np.float64) - _prox(u, g, 1.0, cfg)


def moreau_value(
    u: np.ndarray, g: PoissonFidelity, cfg: InnerAdmmConfig | None = None
) -> float:
    """Unit Moreau envelope of G at u: ``G(p) + 0.5*||p - u||^2`` at p = prox."""
    u = np.asarray(u, dtype=np.float64)
    p = _prox(u, g, 1.0, cfg)
    return fidelity_value(g, p) + 0.5 * float(np.vdot(p - u, p - u).real)
