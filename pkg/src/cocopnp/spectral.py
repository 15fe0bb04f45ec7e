"""Matrix-free spectral certification of denoiser Jacobians.

Cocoercivity and conservativeness both reduce to operator-norm statements
about the Jacobian J at a point:

* gamma-cocoercivity holds iff ``||2*gamma*J - I|| <= 1`` pointwise;
* conservativeness (symmetric Jacobian, i.e. the map is a gradient field)
  holds iff ``||J - J^T|| == 0``.

Both norms are estimated without forming J, by power iteration on the
symmetrized square ``m^T m`` of the relevant matrix-free map, so the
returned value estimates the spectral norm directly.  The Rayleigh sequence
of the symmetrized square is nondecreasing, which gives a cheap sanity
invariant for the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .denoisers import Denoiser
from .errors import NumericalError, ValidationError

__all__ = [
    "MatrixFreeMap",
    "PowerResult",
    "SpectralReport",
    "power_iteration",
    "raw_rayleigh",
    "cocoercivity_norm",
    "symmetry_error",
    "certify_point",
    "helmholtz_split",
    "hamiltonian_defect",
    "jacobian_dense",
]

# Iteration budgets: short for inner training loops, long for certification.
TRAINING_ITERS = 30
CERTIFY_ITERS = 200
CERTIFY_STOP_DELTA = 1e-10

_MAX_RESTARTS = 3


@dataclass
class MatrixFreeMap:
    """A linear map given by its action and adjoint action on flat vectors."""

    dim: int
    action: Callable[[np.ndarray], np.ndarray]
    adjoint_action: Callable[[np.ndarray], np.ndarray]


@dataclass
class PowerResult:
    """Spectral-norm estimate from power iteration on the symmetrized square."""

    value: float
    vector: np.ndarray
    iterations_used: int
    last_rayleigh_delta: float


@dataclass
class SpectralReport:
    """Certification numbers for one denoiser at one probe point."""

    norm_coco: float | None = None
    norm_symmetry: float | None = None
    iterations_used: int = 0
    last_rayleigh_delta: float = float("nan")
    gamma: float | None = None
    point: np.ndarray | None = field(default=None, repr=False)


def power_iteration(
    m: MatrixFreeMap,
    n: int,
    seed: int,
    stop_delta: float | None = None,
) -> PowerResult:
    """Estimate the spectral norm of ``m`` by power iteration on ``m^T m``.

    The start vector is a seeded unit Gaussian draw.  A zero iterate triggers
    a restart from a fresh draw (at most 3); if every restart dies on the
    first application the map is treated as zero and 0.0 is returned, since a
    random vector annihilated by the map means a numerically zero operator.
    If ``stop_delta`` is set, iteration stops early once the Rayleigh
    increment falls below it.
    """
    if n < 1:
        raise ValidationError(f"iteration count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)

    def draw() -> np.ndarray:
        q = rng.standard_normal(m.dim)
        nq = np.linalg.norm(q)
        return q / nq

    q = draw()
    restarts = 0
    made_progress = False
    rayleigh_prev = None
    delta = float("nan")
    used = 0
    for _ in range(n):
        z = m.adjoint_action(m.action(q))
        used += 1
        nz = float(np.linalg.norm(z))
        if not np.isfinite(nz):
            raise NumericalError("power iteration produced non-finite values")
        if nz == 0.0:
            if restarts >= _MAX_RESTARTS:
                if made_progress:
                    raise NumericalError(
                        "power iteration hit a zero iterate after progress; "
                        "restarts exhausted"
                    )
                return PowerResult(0.0, q, used, 0.0)
            restarts += 1
            q = draw()
            continue
        made_progress = True
        rayleigh = float(q @ z)
        if rayleigh_prev is not None:
            delta = abs(rayleigh - rayleigh_prev)
        q = z / nz
        if (
            stop_delta is not None
            and rayleigh_prev is not None
            and delta < stop_delta
        ):
            rayleigh_prev = rayleigh
            break
        rayleigh_prev = rayleigh
    if rayleigh_prev is None:
        # All budget spent on restarts without one productive application.
        return PowerResult(0.0, q, used, 0.0)
    return PowerResult(float(np.sqrt(max(rayleigh_prev, 0.0))), q, used, delta)


def raw_rayleigh(m: MatrixFreeMap, n: int, seed: int) -> float:
    """Rayleigh quotient of the unsymmetrized map after n power steps.

    Secondary diagnostic only: meaningful for near-symmetric maps, but it can
    misreport norms of maps with a large antisymmetric part.
    """
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(m.dim)
    q /= np.linalg.norm(q)
    for _ in range(n):
        z = m.action(q)
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            return 0.0
        q = z / nz
    return float(q @ m.action(q))


def _flat_map(
    d: Denoiser, x: np.ndarray, sigma: float, combine: str, gamma: float | None
) -> MatrixFreeMap:
    shape = np.shape(x)
    size = int(np.prod(shape))

    def jv(v: np.ndarray) -> np.ndarray:
        return d.jvp(x, v.reshape(shape), sigma).ravel()

    def jtv(v: np.ndarray) -> np.ndarray:
        return d.vjp(x, v.reshape(shape), sigma).ravel()

    if combine == "coco":
        assert gamma is not None
        g2 = 2.0 * gamma
        return MatrixFreeMap(size, lambda v: g2 * jv(v) - v, lambda v: g2 * jtv(v) - v)
    if combine == "antisym":
        return MatrixFreeMap(size, lambda v: jv(v) - jtv(v), lambda v: jtv(v) - jv(v))
    raise ValueError(combine)


def cocoercivity_norm(
    d: Denoiser,
    x: np.ndarray,
    sigma: float,
    gamma: float,
    n: int = CERTIFY_ITERS,
    seed: int = 0,
    stop_delta: float | None = CERTIFY_STOP_DELTA,
) -> SpectralReport:
    """Estimate ``||2*gamma*J(x) - I||``; at most 1 certifies cocoercivity at x."""
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    res = power_iteration(_flat_map(d, x, sigma, "coco", gamma), n, seed, stop_delta)
    return SpectralReport(
        norm_coco=res.value,
        iterations_used=res.iterations_used,
        last_rayleigh_delta=res.last_rayleigh_delta,
        gamma=gamma,
        point=np.asarray(x),
    )


def symmetry_error(
    d: Denoiser,
    x: np.ndarray,
    sigma: float,
    n: int = CERTIFY_ITERS,
    seed: int = 0,
    stop_delta: float | None = CERTIFY_STOP_DELTA,
) -> SpectralReport:
    """Estimate ``||J(x) - J(x)^T||``; zero certifies a conservative map at x."""
    res = power_iteration(_flat_map(d, x, sigma, "antisym", None), n, seed, stop_delta)
    return SpectralReport(
        norm_symmetry=res.value,
        iterations_used=res.iterations_used,
        last_rayleigh_delta=res.last_rayleigh_delta,
        point=np.asarray(x),
    )


def certify_point(
    d: Denoiser,
    x: np.ndarray,
    sigma: float,
    gamma: float,
    n: int = CERTIFY_ITERS,
    seed: int = 0,
    stop_delta: float | None = CERTIFY_STOP_DELTA,
) -> SpectralReport:
    """Both certification norms at one point, folded into a single report."""
    coco = cocoercivity_norm(d, x, sigma, gamma, n=n, seed=seed, stop_delta=stop_delta)
    sym = symmetry_error(d, x, sigma, n=n, seed=seed, stop_delta=stop_delta)
    return SpectralReport(
        norm_coco=coco.norm_coco,
        norm_symmetry=sym.norm_symmetry,
        iterations_used=max(coco.iterations_used, sym.iterations_used),
        last_rayleigh_delta=max(coco.last_rayleigh_delta, sym.last_rayleigh_delta),
        gamma=gamma,
        point=np.asarray(x),
    )


def helmholtz_split(j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a dense Jacobian into symmetric and antisymmetric parts."""
    j = np.asarray(j, dtype=np.float64)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {j.shape}")
    s = 0.5 * (j + j.T)
    return s, j - s


def hamiltonian_defect(
    d: Denoiser, x: np.ndarray, y: np.ndarray, sigma: float
) -> float:
    """Quadratic form ``<D(y) - x, J(y)^T (D(y) - x)>``.

    Only the symmetric Jacobian part contributes; the value is zero for every
    (x, y) iff the map is conservative along the probe directions, and equals
    ``||y - x||^2`` for the identity map.
    """
    w = d.apply(y, sigma) - np.asarray(x, dtype=np.float64)
    return float(np.vdot(w, d.vjp(y, w, sigma)).real)


def jacobian_dense(d: Denoiser, x: np.ndarray, sigma: float) -> np.ndarray:
    """Materialize J(x) column by column through jvp; oracle for small dims."""
    shape = np.shape(x)
    size = int(np.prod(shape))
    j = np.empty((size, size), dtype=np.float64)
    basis = np.zeros(size, dtype=np.float64)
    for k in range(size):
        basis[k] = 1.0
        j[:, k] = d.jvp(x, basis.reshape(shape), sigma).ravel()
        basis[k] = 0.0
    return j
