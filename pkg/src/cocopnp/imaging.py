"""Forward models and low-count observation synthesis.

Images are float64 arrays of shape (h, w) for grayscale or (h, w, 3) for
color, with intensities nominally in [0, 1].  Linear forward models expose
exact adjoints so that optimization code can rely on ``<Kx, y> == <x, K^T y>``
up to floating-point roundoff.

Observations follow the scaled low-count model: given a peak photon count p,
the measurement is ``Poisson(p * Kx) / p`` drawn pixelwise.  Sampling uses
numpy's PCG64 generator, a named 64-bit generator with documented streams, so
fixed seeds reproduce observations bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "NoiseSpec",
    "LinearOperator",
    "IdentityOperator",
    "CircularConvolution",
    "Decimation",
    "as_image",
    "simulate_poisson",
    "psnr",
]

# PSNR is capped once the mean squared error drops below this floor.
_MSE_FLOOR = 1e-12
_PSNR_CAP = 99.0


def as_image(x: np.ndarray) -> np.ndarray:
    """Validate and return ``x`` as a float64 image array.

    Accepts shape (h, w) or (h, w, c) with c in {1, 3}.  Raises
    ``ValidationError`` for other shapes or non-finite entries.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3):
        raise ValidationError(f"image must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] != 3:
        raise ValidationError(f"color images must have 3 channels, got {arr.shape[2]}")
    if arr.ndim == 2 and min(arr.shape) < 1 or arr.size == 0:
        raise ValidationError(f"empty image of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("image contains non-finite values")
    return arr


@dataclass(frozen=True)
class NoiseSpec:
    """Peak photon count and seed for the scaled Poisson observation model."""

    peak: float
    seed: int

    def __post_init__(self) -> None:
        if not (self.peak > 0 and np.isfinite(self.peak)):
            raise ValidationError(f"peak must be positive, got {self.peak}")


class LinearOperator:
    """Base class for forward models with exact adjoints."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape of ``forward(x)`` for an input of shape ``in_shape``."""
        raise NotImplementedError

    @property
    def preserves_shape(self) -> bool:
        return True


class IdentityOperator(LinearOperator):
    """K = I."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=np.float64, copy=True)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return np.array(y, dtype=np.float64, copy=True)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(in_shape)


class CircularConvolution(LinearOperator):
    """2-D convolution with periodic boundary handling.

    The kernel must be nonnegative and sum to one (a photon-preserving blur).
    Forward and adjoint are computed in the frequency domain; the adjoint
    multiplies by the conjugate transfer function, which is the exact
    algebraic transpose of the forward matrix.
    """

    def __init__(self, kernel: np.ndarray):
        k = np.asarray(kernel, dtype=np.float64)
        if k.ndim != 2:
            raise ValidationError(f"kernel must be 2-D, got shape {k.shape}")
        if np.any(k < 0):
            raise ValidationError("kernel must be nonnegative")
        if abs(k.sum() - 1.0) > 1e-8:
            raise ValidationError(f"kernel must sum to 1, got {k.sum():.6g}")
        self.kernel = k
        self._transfer_cache: dict[tuple[int, int], np.ndarray] = {}

    def _transfer(self, shape: tuple[int, int]) -> np.ndarray:
        if shape not in self._transfer_cache:
            h, w = shape
            kh, kw = self.kernel.shape
            if kh > h or kw > w:
                raise ValidationError(
                    f"kernel {self.kernel.shape} larger than image {shape}"
                )
            pad = np.zeros(shape, dtype=np.float64)
            pad[:kh, :kw] = self.kernel
            # Shift the kernel center to the origin so the blur is centered.
            pad = np.roll(pad, (-((kh - 1) // 2), -((kw - 1) // 2)), axis=(0, 1))
            self._transfer_cache[shape] = np.fft.rfft2(pad)
        return self._transfer_cache[shape]

    def _apply(self, x: np.ndarray, conj: bool) -> np.ndarray:
        arr = as_image(x)
        t = self._transfer(arr.shape[:2])
        t = np.conj(t) if conj else t
        if arr.ndim == 2:
            return np.fft.irfft2(np.fft.rfft2(arr) * t, s=arr.shape)
        out = np.empty_like(arr)
        for c in range(arr.shape[2]):
            out[:, :, c] = np.fft.irfft2(np.fft.rfft2(arr[:, :, c]) * t, s=arr.shape[:2])
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._apply(x, conj=False)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self._apply(y, conj=True)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(in_shape)


class Decimation(LinearOperator):
    """Subsampling by an integer factor; adjoint is zero-filled upsampling."""

    def __init__(self, factor: int):
        if int(factor) != factor or factor < 1:
            raise ValidationError(f"decimation factor must be a positive integer, got {factor}")
        self.factor = int(factor)

    def forward(self, x: np.ndarray) -> np.ndarray:
        arr = as_image(x)
        s = self.factor
        if arr.shape[0] % s or arr.shape[1] % s:
            raise ValidationError(
                f"image shape {arr.shape[:2]} not divisible by factor {s}"
            )
        return arr[::s, ::s].copy()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        arr = as_image(y)
        s = self.factor
        full = (arr.shape[0] * s, arr.shape[1] * s) + arr.shape[2:]
        out = np.zeros(full, dtype=np.float64)
        out[::s, ::s] = arr
        return out

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        s = self.factor
        if in_shape[0] % s or in_shape[1] % s:
            raise ValidationError(f"shape {in_shape} not divisible by factor {s}")
        return (in_shape[0] // s, in_shape[1] // s) + tuple(in_shape[2:])

    @property
    def preserves_shape(self) -> bool:
        return self.factor == 1


def simulate_poisson(
    x: np.ndarray, spec: NoiseSpec, op: LinearOperator | None = None
) -> np.ndarray:
    """Draw a scaled Poisson observation ``Poisson(peak * Kx) / peak``.

    The draw is pixelwise independent and fully determined by ``spec.seed``.
    """
    arr = as_image(x)
    if np.any(arr < 0):
        raise ValidationError("Poisson intensities require a nonnegative image")
    mean = op.forward(arr) if op is not None else arr
    # A nonnegative kernel keeps the blur nonnegative; clip FFT roundoff only.
    mean = np.maximum(mean, 0.0)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    counts = rng.poisson(spec.peak * mean)
    return counts.astype(np.float64) / spec.peak


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for near-equal inputs."""
    x = as_image(a)
    y = as_image(b)
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse < _MSE_FLOOR:
        return _PSNR_CAP
    return min(_PSNR_CAP, 10.0 * np.log10(peak * peak / mse))
