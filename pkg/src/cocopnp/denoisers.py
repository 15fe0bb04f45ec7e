"""Denoisers with exact Jacobian-vector products.

Every denoiser exposes ``apply``, ``jvp`` and ``vjp`` so spectral
certification can probe the Jacobian without materializing it.  The products
are exact (closed-form differentiation of the forward map), which keeps the
certification free of finite-difference noise.

``claimed_gamma`` is the cocoercivity constant the denoiser is built or
trained to satisfy; it is metadata, not a certificate.  Certification lives
in :mod:`cocopnp.spectral`.

Denoisers that are exact proximal maps of a known function expose that
function through ``averaged_potential``: for a mixing weight t and scale
beta it evaluates an F such that ``t*D + (1-t)*I`` equals the proximal map
of F/beta.  Solvers use it to track a merit function along iterations.

Checkpoints use a raw binary format: magic ``CPNPDEN1`` (8 bytes), a
little-endian uint32 family tag (1 linear, 2 small net), family-specific
little-endian uint32 dimensions, then the float64 parameter payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import ValidationError

__all__ = [
    "Denoiser",
    "LinearDenoiser",
    "DctSoftThresholdDenoiser",
    "SmallNetDenoiser",
    "AveragedDenoiser",
    "averaged_apply",
    "sample_cocoercivity_defect",
    "symmetric_linear_denoiser",
    "small_net_denoiser",
    "save_denoiser",
    "load_denoiser",
]

_CKPT_MAGIC = b"CPNPDEN1"
_KIND_LINEAR = 1
_KIND_SMALLNET = 2


class Denoiser:
    """Interface: a noise-level-conditioned map with exact Jacobian products."""

    claimed_gamma: float | None = None

    # Fixed flat input dimension, or None when any 2-D shape is accepted.
    input_dim: int | None = None

    def apply(self, x: np.ndarray, sigma: float) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        """Jacobian-vector product J(x) v."""
        raise NotImplementedError

    def vjp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        """Transposed product J(x)^T v."""
        raise NotImplementedError

    @property
    def has_potential(self) -> bool:
        return False

    def averaged_potential(
        self, v: np.ndarray, t: float, beta: float, sigma: float
    ) -> float:
        """Evaluate F(v) with ``t*D + (1-t)*I == prox of F/beta``."""
        raise NotImplementedError(f"{type(self).__name__} has no explicit potential")

    def potential_moduli(self, t: float, beta: float, sigma: float) -> dict[str, float]:
        """Actual weak-convexity and gradient-Lipschitz moduli of the potential."""
        raise NotImplementedError(f"{type(self).__name__} has no explicit potential")


def _check_t(t: float) -> float:
    if not (0.0 <= t <= 1.0):
        raise ValidationError(f"mixing weight t must lie in [0, 1], got {t}")
    return float(t)


def averaged_apply(d: Denoiser, t: float, x: np.ndarray, sigma: float) -> np.ndarray:
    """Evaluate the averaged map ``t*D(x) + (1-t)*x``."""
    t = _check_t(t)
    if t == 0.0:
        return np.array(x, dtype=np.float64, copy=True)
    return t * d.apply(x, sigma) + (1.0 - t) * np.asarray(x, dtype=np.float64)


class AveragedDenoiser(Denoiser):
    """The map ``t*D + (1-t)*I`` packaged as a denoiser."""

    def __init__(self, base: Denoiser, t: float):
        self.base = base
        self.t = _check_t(t)
        self.input_dim = base.input_dim

    def apply(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return averaged_apply(self.base, self.t, x, sigma)

    def jvp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.t * self.base.jvp(x, v, sigma) + (1.0 - self.t) * v

    def vjp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.t * self.base.vjp(x, v, sigma) + (1.0 - self.t) * v


def sample_cocoercivity_defect(
    d: Denoiser, x: np.ndarray, y: np.ndarray, sigma: float, gamma: float
) -> float:
    """Pointwise cocoercivity defect; nonpositive iff the pair satisfies it.

    Returns ``gamma*||D(x)-D(y)||^2 - <x-y, D(x)-D(y)>``.
    """
    dx = d.apply(x, sigma)
    dy = d.apply(y, sigma)
    diff = dx - dy
    return float(gamma * np.vdot(diff, diff).real - np.vdot(x - y, diff).real)


class LinearDenoiser(Denoiser):
    """Affine map ``x -> W x + b`` on flattened inputs of a fixed dimension."""

    def __init__(
        self,
        weight: np.ndarray,
        bias: np.ndarray | None = None,
        claimed_gamma: float | None = None,
    ):
        w = np.asarray(weight, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"weight must be square, got shape {w.shape}")
        self.weight = w
        self.bias = (
            np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        )
        if self.bias.shape != (w.shape[0],):
            raise ValidationError(
                f"bias shape {self.bias.shape} does not match dimension {w.shape[0]}"
            )
        self.claimed_gamma = claimed_gamma
        self.input_dim = w.shape[0]
        # Averaged-map factorizations, keyed by t; valid while weight is frozen.
        self._solve_cache: dict[float, object] = {}

    def _flat(self, x: np.ndarray) -> np.ndarray:
        xf = np.asarray(x, dtype=np.float64).ravel()
        if xf.size != self.input_dim:
            raise ValidationError(
                f"input size {xf.size} does not match denoiser dimension {self.input_dim}"
            )
        return xf

    def apply(self, x: np.ndarray, sigma: float) -> np.ndarray:
        xf = self._flat(x)
        return (self.weight @ xf + self.bias).reshape(np.shape(x))

    def jvp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        return (self.weight @ self._flat(v)).reshape(np.shape(v))

    def vjp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        return (self.weight.T @ self._flat(v)).reshape(np.shape(v))

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.weight, self.weight.T, rtol=0.0, atol=1e-12))

    @property
    def has_potential(self) -> bool:
        return self.is_symmetric

    def _averaged_solve(self, t: float, v: np.ndarray) -> np.ndarray:
        import scipy.linalg

        t = float(t)
        if t not in self._solve_cache:
            m = t * self.weight + (1.0 - t) * np.eye(self.input_dim)
            self._solve_cache[t] = scipy.linalg.lu_factor(m)
        return scipy.linalg.lu_solve(self._solve_cache[t], v)

    def averaged_potential(
        self, v: np.ndarray, t: float, beta: float, sigma: float
    ) -> float:
        # Closed form requires a symmetric weight (gradient field is exact).
        if not self.is_symmetric:
            raise NotImplementedError("potential requires a symmetric weight")
        t = _check_t(t)
        vf = self._flat(v)
        s = self._averaged_solve(t, vf)
        c = t * self.bias
        return float(beta * (0.5 * vf @ s - 0.5 * vf @ vf - c @ s))

    def potential_moduli(self, t: float, beta: float, sigma: float) -> dict[str, float]:
        if not self.is_symmetric:
            raise NotImplementedError("potential requires a symmetric weight")
        t = _check_t(t)
        lam = np.linalg.eigvalsh(self.weight)
        m = t * lam + (1.0 - t)
        if np.any(m <= 0):
            raise ValidationError("averaged map is singular, potential undefined")
        curv = beta * (1.0 / m - 1.0)
        return {"r": float(max(0.0, -curv.min())), "L": float(np.abs(curv).max())}


def symmetric_linear_denoiser(
    dim: int,
    gamma: float,
    seed: int,
    bias_scale: float = 0.0,
    eig_low: float | None = None,
    eig_high: float | None = None,
) -> LinearDenoiser:
    """Construct a certified-by-design linear denoiser.

    Draws a random orthogonal basis and eigenvalues inside [0, 1/gamma], so
    the map is conservative (symmetric Jacobian) and gamma-cocoercive by the
    spectral characterization.  ``eig_low``/``eig_high`` override the default
    eigenvalue range, which is useful for building deliberately broken maps.
    """
    if not (0.0 < gamma <= 1.0):
        raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lo = 0.0 if eig_low is None else eig_low
    hi = 1.0 / gamma if eig_high is None else eig_high
    lam = rng.uniform(lo, hi, size=dim)
    w = (q * lam) @ q.T
    w = 0.5 * (w + w.T)
    b = bias_scale * rng.standard_normal(dim) if bias_scale else None
    return LinearDenoiser(w, b, claimed_gamma=gamma)


class DctSoftThresholdDenoiser(Denoiser):
    """Soft thresholding of orthonormal 2-D DCT coefficients.

    The threshold scales affinely with the noise level, ``tau = scale *
    sigma``.  The map is the exact proximal operator of ``tau * ||DCT(x)||_1``
    and therefore firmly nonexpansive (claimed_gamma 1) with an exactly
    symmetric Jacobian.
    """

    def __init__(self, threshold_scale: float = 3.0):
        if threshold_scale < 0:
            raise ValidationError(f"threshold scale must be nonnegative, got {threshold_scale}")
        self.threshold_scale = float(threshold_scale)
        self.claimed_gamma = 1.0

    def threshold(self, sigma: float) -> float:
        return self.threshold_scale * float(sigma)

    @staticmethod
    def _dct(x: np.ndarray) -> np.ndarray:
        return scipy.fft.dctn(x, type=2, norm="ortho", axes=(0, 1))

    @staticmethod
    def _idct(z: np.ndarray) -> np.ndarray:
        return scipy.fft.idctn(z, type=2, norm="ortho", axes=(0, 1))

    def apply(self, x: np.ndarray, sigma: float) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim not in (2, 3):
            raise ValidationError(f"expected 2-D or 3-D input, got shape {arr.shape}")
        tau = self.threshold(sigma)
        z = self._dct(arr)
        shrunk = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
        return self._idct(shrunk)

    def _masked(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        tau = self.threshold(sigma)
        mask = np.abs(self._dct(arr)) > tau
        return self._idct(mask * self._dct(np.asarray(v, dtype=np.float64)))

    def jvp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        return self._masked(x, v, sigma)

    # The Jacobian is symmetric by construction, so jvp and vjp coincide.
    vjp = jvp

    @property
    def has_potential(self) -> bool:
        return True

    def averaged_potential(
        self, v: np.ndarray, t: float, beta: float, sigma: float
    ) -> float:
        t = _check_t(t)
        tau = self.threshold(sigma)
        z = np.abs(self._dct(np.asarray(v, dtype=np.float64)))
        if tau == 0.0 or t == 0.0:
            return 0.0
        if t == 1.0:
            return float(beta * tau * z.sum())
        knee = (1.0 - t) * tau
        inner = t / (2.0 * (1.0 - t)) * z**2
        outer = t * tau * z - 0.5 * t * (1.0 - t) * tau**2
        return float(beta * np.where(z <= knee, inner, outer).sum())

    def potential_moduli(self, t: float, beta: float, sigma: float) -> dict[str, float]:
        t = _check_t(t)
        if t == 1.0:
            return {"r": 0.0, "L": float("inf")}
        return {"r": 0.0, "L": beta * t / (1.0 - t)}


class SmallNetDenoiser(Denoiser):
    """Two affine layers with a smooth C1 nonlinearity on flattened patches.

    ``D(x) = W2 tanh(W1 x + b1) + b2``.  The noise level is accepted for
    interface uniformity but does not modulate the map.  Parameter count is
    capped so dense Jacobian oracles stay cheap in tests.
    """

    MAX_PARAMS = 2000

    def __init__(
        self,
        w1: np.ndarray,
        b1: np.ndarray,
        w2: np.ndarray,
        b2: np.ndarray,
        claimed_gamma: float | None = None,
    ):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        hidden, dim = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (dim, hidden) or self.b2.shape != (dim,):
            raise ValidationError("inconsistent layer shapes")
        if self.param_count > self.MAX_PARAMS:
            raise ValidationError(
                f"parameter count {self.param_count} exceeds cap {self.MAX_PARAMS}"
            )
        self.claimed_gamma = claimed_gamma
        self.input_dim = dim

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def param_count(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def _flat(self, x: np.ndarray) -> np.ndarray:
        xf = np.asarray(x, dtype=np.float64).ravel()
        if xf.size != self.input_dim:
            raise ValidationError(
                f"input size {xf.size} does not match denoiser dimension {self.input_dim}"
            )
        return xf

    def apply(self, x: np.ndarray, sigma: float) -> np.ndarray:
        xf = self._flat(x)
        h = np.tanh(self.w1 @ xf + self.b1)
        return (self.w2 @ h + self.b2).reshape(np.shape(x))

    def _gain(self, x: np.ndarray) -> np.ndarray:
        h = self.w1 @ self._flat(x) + self.b1
        return 1.0 - np.tanh(h) ** 2

    def jvp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        g = self._gain(x)
        return (self.w2 @ (g * (self.w1 @ self._flat(v)))).reshape(np.shape(v))

    def vjp(self, x: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
        g = self._gain(x)
        return (self.w1.T @ (g * (self.w2.T @ self._flat(v)))).reshape(np.shape(v))

    def pack_params(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    def with_params(self, theta: np.ndarray) -> "SmallNetDenoiser":
        hidden, dim = self.w1.shape
        sizes = [hidden * dim, hidden, dim * hidden, dim]
        if theta.size != sum(sizes):
            raise ValidationError(f"parameter vector size {theta.size} mismatch")
        parts = np.split(np.asarray(theta, dtype=np.float64), np.cumsum(sizes)[:-1])
        return SmallNetDenoiser(
            parts[0].reshape(hidden, dim),
            parts[1],
            parts[2].reshape(dim, hidden),
            parts[3],
            claimed_gamma=self.claimed_gamma,
        )


def small_net_denoiser(
    dim: int, hidden: int, seed: int, weight_scale: float = 0.2
) -> SmallNetDenoiser:
    """Random small net; scaled Gaussian weights, zero biases."""
    rng = np.random.default_rng(seed)
    w1 = weight_scale * rng.standard_normal((hidden, dim)) / np.sqrt(dim)
    w2 = weight_scale * rng.standard_normal((dim, hidden)) / np.sqrt(hidden)
    return SmallNetDenoiser(w1, np.zeros(hidden), w2, np.zeros(dim))


def save_denoiser(d: Denoiser, path: str | Path) -> None:
    """Serialize a linear or small-net denoiser to a CPNPDEN1 checkpoint."""
    gamma = np.float64(np.nan if d.claimed_gamma is None else d.claimed_gamma)
    with open(path, "wb") as fh:
        if isinstance(d, LinearDenoiser):
            fh.write(struct.pack("<8sII", _CKPT_MAGIC, _KIND_LINEAR, d.input_dim))
            fh.write(struct.pack("<d", gamma))
            fh.write(np.ascontiguousarray(d.weight, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(d.bias, dtype="<f8").tobytes())
        elif isinstance(d, SmallNetDenoiser):
            fh.write(
                struct.pack(
                    "<8sIII", _CKPT_MAGIC, _KIND_SMALLNET, d.input_dim, d.hidden_dim
                )
            )
            fh.write(struct.pack("<d", gamma))
            for arr in (d.w1, d.b1, d.w2, d.b2):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        else:
            raise ValidationError(f"{type(d).__name__} does not serialize")


def load_denoiser(path: str | Path) -> Denoiser:
    """Load a denoiser from a CPNPDEN1 checkpoint."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != _CKPT_MAGIC:
        raise ValidationError(f"{path}: not a CPNPDEN1 checkpoint")
    kind = struct.unpack("<I", raw[8:12])[0]
    if kind == _KIND_LINEAR:
        dim = struct.unpack("<I", raw[12:16])[0]
        gamma = struct.unpack("<d", raw[16:24])[0]
        need = 24 + (dim * dim + dim) * 8
        if len(raw) != need:
            raise ValidationError(f"{path}: truncated checkpoint")
        body = np.frombuffer(raw[24:], dtype="<f8")
        w = body[: dim * dim].reshape(dim, dim).astype(np.float64)
        b = body[dim * dim :].astype(np.float64)
        return LinearDenoiser(w, b, claimed_gamma=None if np.isnan(gamma) else gamma)
    if kind == _KIND_SMALLNET:
        dim, hidden = struct.unpack("<II", raw[12:20])
        gamma = struct.unpack("<d", raw[20:28])[0]
        sizes = [hidden * dim, hidden, dim * hidden, dim]
        need = 28 + sum(sizes) * 8
        if len(raw) != need:
            raise ValidationError(f"{path}: truncated checkpoint")
        body = np.frombuffer(raw[28:], dtype="<f8").astype(np.float64)
        parts = np.split(body, np.cumsum(sizes)[:-1])
        return SmallNetDenoiser(
            parts[0].reshape(hidden, dim),
            parts[1],
            parts[2].reshape(dim, hidden),
            parts[3],
            claimed_gamma=None if np.isnan(gamma) else gamma,
        )
    raise ValidationError(f"{path}: unknown denoiser kind {kind}")
