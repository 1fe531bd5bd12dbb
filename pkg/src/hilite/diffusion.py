"""Forward-process math and a deterministic x0-prediction sampler.

Timesteps are 1-based: ``t`` runs from 1 to ``T`` and ``alpha_bar(t)`` is
the product of ``alphas[0..t-1]``. The denoiser is any callable
``denoiser(x_t, t, y) -> x0_hat``; no network lives here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import imagecore, pyramid
from .errors import DimensionMismatchError, InvalidRangeError

Denoiser = Callable[[np.ndarray, int, np.ndarray], np.ndarray]
StepCallback = Callable[[int, int, np.ndarray, np.ndarray], None]

DEFAULT_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        self.check_step(t)
        return float(self.alpha_bars[t - 1])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise InvalidRangeError(f"timestep {t} outside [1, {self.steps}]")


def schedule_from_betas(betas) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise InvalidRangeError("betas must be a non-empty 1-D sequence")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise InvalidRangeError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    # sequential product: alpha_bars[t] == alpha_bars[t-1] * alphas[t] exactly
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def linear_schedule(steps: int = DEFAULT_STEPS, beta_start: float = DEFAULT_BETA_START,
                    beta_end: float = DEFAULT_BETA_END) -> DiffusionSchedule:
    if steps < 1:
        raise InvalidRangeError(f"steps must be at least 1, got {steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidRangeError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return schedule_from_betas(np.linspace(beta_start, beta_end, steps))


def _check_same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def forward_sample(x0, t: int, eps, sched: DiffusionSchedule) -> np.ndarray:
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``; broadcasting over leading draw axes of ``eps`` is allowed."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[eps.ndim - x0.ndim:] != x0.shape:
        raise DimensionMismatchError(f"forward_sample: eps {eps.shape} does not match x0 {x0.shape}")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def build_target(h_gt, h_in) -> np.ndarray:
    """Residual the denoiser learns: ground-truth high band minus input high band."""
    h_gt = np.asarray(h_gt)
    h_in = np.asarray(h_in)
    _check_same(h_gt, h_in, "build_target")
    return h_gt - h_in


def _as_planes(img: np.ndarray) -> np.ndarray:
    return img[:, :, None] if img.ndim == 2 else img


def build_conditioning(h, base_in, base_out) -> np.ndarray:
    """Stack ``[h, Up(base_in), Up(base_out)]`` along the channel axis.

    Both bases must sit exactly one pyramid level below ``h``. The result is
    ``(H, W, C)`` with channels in that order.
    """
    h = imagecore.as_image(h, "h")
    hh, hw = h.shape[:2]
    expected = ((hh + 1) // 2, (hw + 1) // 2)
    planes = [_as_planes(h)]
    for name, base in (("base_in", base_in), ("base_out", base_out)):
        base = imagecore.as_image(base, name)
        if base.shape[:2] != expected:
            raise DimensionMismatchError(
                f"{name} is {base.shape[:2]}, expected {expected} (one level below h)"
            )
        planes.append(_as_planes(pyramid.upsample_to(base, hw, hh)))
    return np.concatenate([p.astype(np.float32) for p in planes], axis=2)


def dm_loss(x0, predicted_x0) -> float:
    """Mean squared error between the target residual and the prediction."""
    x0 = np.asarray(x0, dtype=np.float64)
    predicted_x0 = np.asarray(predicted_x0, dtype=np.float64)
    _check_same(x0, predicted_x0, "dm_loss")
    return float(np.mean((x0 - predicted_x0) ** 2))


def sampling_timesteps(steps: int, n_steps: int) -> list[int]:
    """``n_steps`` evenly strided timesteps from ``steps`` down to 1."""
    if not 1 <= n_steps <= steps:
        raise InvalidRangeError(f"n_steps must be in [1, {steps}], got {n_steps}")
    if n_steps == 1:
        return [steps]
    return [int(t) for t in np.rint(np.linspace(steps, 1, n_steps))]


def sample(denoiser: Denoiser, y, sched: DiffusionSchedule, n_steps: int, seed: int,
           shape: Optional[tuple[int, ...]] = None,
           callback: Optional[StepCallback] = None) -> np.ndarray:
    """Deterministic (eta = 0) reverse process with x0 prediction.

    Starts from seeded standard-normal noise of ``shape`` (default: the
    spatial size of ``y``, single channel) and returns the final ``x0``
    prediction. ``callback(i, t, x_t, x0_hat)`` is invoked at every step.
    """
    timesteps = sampling_timesteps(sched.steps, n_steps)
    y = np.asarray(y)
    if shape is None:
        shape = tuple(y.shape[:2])
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(shape)
    x0_hat = x
    for i, t in enumerate(timesteps):
        x0_hat = np.asarray(denoiser(x, t, y), dtype=np.float64)
        if x0_hat.shape != x.shape:
            raise DimensionMismatchError(f"denoiser returned {x0_hat.shape}, expected {x.shape}")
        if callback is not None:
            callback(i, t, x, x0_hat)
        if i + 1 == len(timesteps):
            break
        ab = sched.alpha_bar(t)
        ab_next = sched.alpha_bar(timesteps[i + 1])
        eps_hat = (x - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
        x = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat
    return x0_hat
