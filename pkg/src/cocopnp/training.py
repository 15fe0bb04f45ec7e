"""Training with conservativeness and cocoercivity penalties.

The loss has three terms, evaluated on a batch of (clean, noisy) pairs:

* data: mean L1 reconstruction error ``||D(x + noise) - x||_1``;
* hamiltonian: mean spectral norm of the antisymmetric Jacobian part,
  which is zero exactly for conservative maps;
* spectral: mean hinge ``max(||2*gamma*J - I||, 1 - epsilon)``, which is
  flat (zero subgradient) once the cocoercivity norm is eps-safely inside
  the certified ball.

``total = data + alpha1 * hamiltonian + alpha2 * spectral`` by definition.

Training is deterministic full-batch subgradient descent on a fixed seeded
dataset.  The spectral penalties are nonsmooth, so a constant learning rate
stalls in an oscillation band proportional to the rate; the schedule
therefore holds the rate constant for the first half of the run and then
decays it geometrically, which lets the antisymmetric part reach the 1e-6
certification scale instead of orbiting it.

For the linear family all subgradients are exact: sign patterns for the
data term and top singular pairs (from power iteration) for the penalties.
For the small net the data gradient is exact reverse-mode; penalty
gradients are estimated by central finite differences over the parameters
or by simultaneous perturbation, selectable in the config.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoisers import (
    Denoiser,
    LinearDenoiser,
    SmallNetDenoiser,
    small_net_denoiser,
)
from .errors import NumericalError, ValidationError
from .fileio import load_png
from .spectral import (
    CERTIFY_ITERS,
    MatrixFreeMap,
    SpectralReport,
    certify_point,
    power_iteration,
)

__all__ = [
    "TrainingConfig",
    "TrainingBatch",
    "LossBreakdown",
    "synthetic_patches",
    "make_training_batch",
    "loss_terms",
    "train_linear",
    "train_small_net",
    "certify_denoiser",
    "write_loss_csv",
]


@dataclass
class TrainingConfig:
    """Hyperparameters for penalty-regularized denoiser training."""

    alpha1: float = 1.0
    alpha2: float = 0.01
    epsilon: float = 0.1
    gamma: float = 0.25
    sigma_range: tuple[float, float] = (0.0, 50.0 / 255.0)
    power_iters: int = 30
    batch_size: int = 128
    steps: int = 800
    learning_rate: float = 1e-3
    seed: int = 0
    patch_size: int = 8
    hidden: int = 12
    dataset_dir: str | None = None
    penalty_grad: str = "spsa"
    fd_step: float = 1e-5
    spsa_step: float = 1e-3
    lr_decay_start: int | None = None
    lr_floor: float = 1e-9

    def __post_init__(self) -> None:
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValidationError("alpha1 and alpha2 must be nonnegative")
        if not (0.0 < self.epsilon < 1.0):
            raise ValidationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ValidationError(f"bad sigma_range {self.sigma_range}")
        if self.batch_size < 1 or self.steps < 1 or self.power_iters < 1:
            raise ValidationError("batch_size, steps, power_iters must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.penalty_grad not in ("spsa", "fd"):
            raise ValidationError(f"penalty_grad must be 'spsa' or 'fd', got {self.penalty_grad}")

    @property
    def dim(self) -> int:
        return self.patch_size * self.patch_size


@dataclass
class TrainingBatch:
    """Fixed batch of clean patches, their noisy versions, and noise levels."""

    clean: np.ndarray
    noisy: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return self.clean.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    data_l1: float
    hamiltonian: float
    spectral: float
    total: float


def synthetic_patches(
    n: int, size: int, seed: int, dataset_dir: str | None = None
) -> np.ndarray:
    """Seeded patch corpus: piecewise-constant blocks and smooth ramps.

    When ``dataset_dir`` is given, patches are random crops from the PNG
    files found there instead of synthetic textures.
    """
    rng = np.random.default_rng(seed)
    if dataset_dir is not None:
        files = sorted(Path(dataset_dir).glob("*.png"))
        if not files:
            raise ValidationError(f"no PNG files found in {dataset_dir}")
        images = [load_png(f) for f in files]
        out = np.empty((n, size, size), dtype=np.float64)
        for i in range(n):
            img = images[int(rng.integers(len(images)))]
            gray = img if img.ndim == 2 else img.mean(axis=2)
            if gray.shape[0] < size or gray.shape[1] < size:
                raise ValidationError(f"image smaller than patch size {size}")
            r = int(rng.integers(gray.shape[0] - size + 1))
            c = int(rng.integers(gray.shape[1] - size + 1))
            out[i] = gray[r : r + size, c : c + size]
        return out
    out = np.empty((n, size, size), dtype=np.float64)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    for i in range(n):
        if rng.uniform() < 0.5:
            patch = np.full((size, size), rng.uniform(0.1, 0.9))
            for _ in range(int(rng.integers(1, 4))):
                r0, r1 = np.sort(rng.integers(0, size + 1, size=2))
                c0, c1 = np.sort(rng.integers(0, size + 1, size=2))
                patch[r0:r1, c0:c1] = rng.uniform(0.1, 0.9)
        else:
            gx, gy = rng.uniform(-1.0, 1.0, size=2)
            plane = gx * rows + gy * cols
            span = plane.max() - plane.min()
            if span < 1e-12:
                patch = np.full((size, size), rng.uniform(0.1, 0.9))
            else:
                patch = 0.1 + 0.8 * (plane - plane.min()) / span
        out[i] = patch
    return out


def make_training_batch(cfg: TrainingConfig, seed: int | None = None) -> TrainingBatch:
    """Draw the fixed training batch from the config seed."""
    root = cfg.seed if seed is None else seed
    clean = synthetic_patches(cfg.batch_size, cfg.patch_size, root, cfg.dataset_dir)
    rng = np.random.default_rng(root + 1)
    lo, hi = cfg.sigma_range
    sigma = rng.uniform(lo, hi, size=cfg.batch_size)
    noise = rng.standard_normal(clean.shape) * sigma[:, None, None]
    return TrainingBatch(clean=clean, noisy=clean + noise, sigma=sigma)


def _penalty_norms(
    d: Denoiser, x: np.ndarray, sigma: float, gamma: float, n: int, seed: int
) -> tuple[float, float]:
    """(symmetry norm, cocoercivity norm) at one probe point, n power steps."""
    size = x.size
    shape = x.shape

    def jv(v: np.ndarray) -> np.ndarray:
        return d.jvp(x, v.reshape(shape), sigma).ravel()

    def jtv(v: np.ndarray) -> np.ndarray:
        return d.vjp(x, v.reshape(shape), sigma).ravel()

    anti = MatrixFreeMap(size, lambda v: jv(v) - jtv(v), lambda v: jtv(v) - jv(v))
    g2 = 2.0 * gamma
    coco = MatrixFreeMap(size, lambda v: g2 * jv(v) - v, lambda v: g2 * jtv(v) - v)
    ham = power_iteration(anti, n, seed).value
    cnorm = power_iteration(coco, n, seed + 1).value
    return ham, cnorm


def loss_terms(d: Denoiser, batch: TrainingBatch, cfg: TrainingConfig) -> LossBreakdown:
    """Evaluate the three loss terms on a batch with the config's budgets."""
    data = 0.0
    ham = 0.0
    spec = 0.0
    for i in range(len(batch)):
        x = batch.clean[i]
        y = batch.noisy[i]
        s = float(batch.sigma[i])
        data += float(np.abs(d.apply(y, s) - x).sum())
        h, c = _penalty_norms(d, y, s, cfg.gamma, cfg.power_iters, cfg.seed + 7 * i)
        ham += h
        spec += max(c, 1.0 - cfg.epsilon)
    n = len(batch)
    data /= n
    ham /= n
    spec /= n
    return LossBreakdown(
        data_l1=data,
        hamiltonian=ham,
        spectral=spec,
        total=data + cfg.alpha1 * ham + cfg.alpha2 * spec,
    )


def _learning_rate(cfg: TrainingConfig, step: int) -> float:
    """Constant phase, then geometric decay to the floor at the final step."""
    start = cfg.lr_decay_start if cfg.lr_decay_start is not None else cfg.steps // 2
    if step < start or cfg.steps <= start:
        return cfg.learning_rate
    frac = (step - start) / (cfg.steps - start)
    return cfg.learning_rate * (cfg.lr_floor / cfg.learning_rate) ** frac


def _top_pair(m: np.ndarray, n_iters: int, seed: int) -> tuple[float, np.ndarray, np.ndarray] | None:
    """Top singular triple (value, u, v) of a dense matrix via power iteration."""
    mm = MatrixFreeMap(m.shape[0], lambda q: m @ q, lambda q: m.T @ q)
    res = power_iteration(mm, n_iters, seed)
    if res.value <= 0.0:
        return None
    mv = m @ res.vector
    nmv = float(np.linalg.norm(mv))
    if nmv == 0.0:
        return None
    return res.value, mv / nmv, res.vector


def _check_divergence(history: list[LossBreakdown], streak: int = 50) -> None:
    if len(history) < streak + 1:
        return
    tail = [h.total for h in history[-(streak + 1) :]]
    if all(tail[i + 1] > tail[i] for i in range(streak)):
        raise NumericalError(f"loss increased for {streak} consecutive steps")


def train_linear(
    cfg: TrainingConfig, batch: TrainingBatch | None = None
) -> tuple[LinearDenoiser, list[LossBreakdown]]:
    """Train an affine denoiser by exact full-batch subgradient descent."""
    batch = batch if batch is not None else make_training_batch(cfg)
    dim = batch.clean.shape[1] * batch.clean.shape[2]
    nb = len(batch)
    x = batch.clean.reshape(nb, dim)
    y = batch.noisy.reshape(nb, dim)
    rng = np.random.default_rng(cfg.seed + 2)
    w = np.eye(dim) + 0.05 * rng.standard_normal((dim, dim))
    b = np.zeros(dim)
    eye = np.eye(dim)
    history: list[LossBreakdown] = []
    for step in range(cfg.steps):
        resid = y @ w.T + b - x
        data_val = float(np.abs(resid).sum(axis=1).mean())
        signs = np.sign(resid)
        gw = signs.T @ y / nb
        gb = signs.mean(axis=0)

        anti = w - w.T
        pair = _top_pair(anti, cfg.power_iters, cfg.seed + 3 * step)
        ham_val = 0.0
        if pair is not None:
            ham_val, uvec, vvec = pair
            gw += cfg.alpha1 * (np.outer(uvec, vvec) - np.outer(vvec, uvec))

        m = 2.0 * cfg.gamma * w - eye
        pair = _top_pair(m, cfg.power_iters, cfg.seed + 3 * step + 1)
        coco_norm = pair[0] if pair is not None else 0.0
        spec_val = max(coco_norm, 1.0 - cfg.epsilon)
        if pair is not None and coco_norm > 1.0 - cfg.epsilon:
            _, uvec, vvec = pair
            gw += cfg.alpha2 * 2.0 * cfg.gamma * np.outer(uvec, vvec)

        history.append(
            LossBreakdown(
                data_l1=data_val,
                hamiltonian=ham_val,
                spectral=spec_val,
                total=data_val + cfg.alpha1 * ham_val + cfg.alpha2 * spec_val,
            )
        )
        _check_divergence(history)
        lr = _learning_rate(cfg, step)
        w -= lr * gw
        b -= lr * gb
    return LinearDenoiser(w, b, claimed_gamma=cfg.gamma), history


def _net_data_grad(
    net: SmallNetDenoiser, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Exact reverse-mode gradient of the mean L1 data term for the net."""
    nb = x.shape[0]
    h = y @ net.w1.T + net.b1
    a = np.tanh(h)
    out = a @ net.w2.T + net.b2
    resid = out - x
    val = float(np.abs(resid).sum(axis=1).mean())
    dout = np.sign(resid) / nb
    gw2 = dout.T @ a
    gb2 = dout.sum(axis=0)
    da = dout @ net.w2
    dh = da * (1.0 - a * a)
    gw1 = dh.T @ y
    gb1 = dh.sum(axis=0)
    grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
    return val, grad


def _net_penalty(
    net: SmallNetDenoiser, batch: TrainingBatch, cfg: TrainingConfig, seed: int
) -> tuple[float, float, float]:
    """(weighted penalty, mean hamiltonian, mean hinged spectral) on the batch."""
    ham = 0.0
    spec = 0.0
    for i in range(len(batch)):
        yv = batch.noisy[i]
        s = float(batch.sigma[i])
        h, c = _penalty_norms(net, yv, s, cfg.gamma, cfg.power_iters, seed + 11 * i)
        ham += h
        spec += max(c, 1.0 - cfg.epsilon)
    n = len(batch)
    ham /= n
    spec /= n
    return cfg.alpha1 * ham + cfg.alpha2 * spec, ham, spec


def train_small_net(
    cfg: TrainingConfig, batch: TrainingBatch | None = None
) -> tuple[SmallNetDenoiser, list[LossBreakdown]]:
    """Train a two-layer net; exact data gradients, estimated penalty gradients."""
    batch = batch if batch is not None else make_training_batch(cfg)
    dim = batch.clean.shape[1] * batch.clean.shape[2]
    net = small_net_denoiser(dim, cfg.hidden, cfg.seed + 5)
    net.claimed_gamma = cfg.gamma
    theta = net.pack_params()
    nparams = theta.size
    nb = len(batch)
    x = batch.clean.reshape(nb, dim)
    y = batch.noisy.reshape(nb, dim)
    rng = np.random.default_rng(cfg.seed + 6)
    history: list[LossBreakdown] = []

    def penalty_at(vec: np.ndarray, seed: int) -> float:
        return _net_penalty(net.with_params(vec), batch, cfg, seed)[0]

    for step in range(cfg.steps):
        net = net.with_params(theta)
        data_val, gdata = _net_data_grad(net, x, y)
        pen_seed = cfg.seed + 13 * step
        _, ham_val, spec_val = _net_penalty(net, batch, cfg, pen_seed)
        if cfg.penalty_grad == "spsa":
            delta = rng.choice([-1.0, 1.0], size=nparams)
            c = cfg.spsa_step
            diff = penalty_at(theta + c * delta, pen_seed) - penalty_at(
                theta - c * delta, pen_seed
            )
            gpen = (diff / (2.0 * c)) * delta
        else:
            gpen = np.empty(nparams)
            c = cfg.fd_step
            basis = np.zeros(nparams)
            for k in range(nparams):
                basis[k] = c
                gpen[k] = (
                    penalty_at(theta + basis, pen_seed)
                    - penalty_at(theta - basis, pen_seed)
                ) / (2.0 * c)
                basis[k] = 0.0
        history.append(
            LossBreakdown(
                data_l1=data_val,
                hamiltonian=ham_val,
                spectral=spec_val,
                total=data_val + cfg.alpha1 * ham_val + cfg.alpha2 * spec_val,
            )
        )
        _check_divergence(history)
        lr = _learning_rate(cfg, step)
        theta = theta - lr * (gdata + gpen)
    final = net.with_params(theta)
    final.claimed_gamma = cfg.gamma
    return final, history


def certify_denoiser(
    d: Denoiser,
    points: list[tuple[np.ndarray, float]],
    gamma: float,
    n: int = CERTIFY_ITERS,
    seed: int = 0,
) -> tuple[list[SpectralReport], dict[str, float]]:
    """Certification norms at each probe point, plus the summary the tables use.

    Summary reports the mean symmetry error and the max cocoercivity norm,
    the two numbers that must be ~0 and <= 1 for a certified denoiser.
    """
    reports = [
        certify_point(d, x, s, gamma, n=n, seed=seed + i)
        for i, (x, s) in enumerate(points)
    ]
    if not reports:
        raise ValidationError("certification needs at least one probe point")
    return reports, {
        "mean_symmetry": float(np.mean([r.norm_symmetry for r in reports])),
        "max_coco": float(np.max([r.norm_coco for r in reports])),
        "points": float(len(reports)),
    }


def write_loss_csv(history: list[LossBreakdown], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "data_l1", "hamiltonian", "spectral", "total"])
        for k, row in enumerate(history):
            writer.writerow(
                [
                    k + 1,
                    f"{row.data_l1:.12e}",
                    f"{row.hamiltonian:.12e}",
                    f"{row.spectral:.12e}",
                    f"{row.total:.12e}",
                ]
            )
