"""Noise schedule tables, forward noising, and the deterministic reverse update.

Steps are 1-indexed: step t in [1, t_train] has cumulative signal level
alpha_bar[t - 1]; step 0 denotes the clean image (alpha_bar == 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .validation import check_grid, check_index, check_same_shape, ensure_finite, require


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule plus the decreasing subsequence of sampling steps."""

    t_train: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    ddim_steps: np.ndarray
    _step_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        require(self.t_train >= 1, f"t_train must be >= 1, got {self.t_train}")
        require(self.beta.shape == (self.t_train,), "beta must have one entry per training step")
        require(self.alpha_bar.shape == (self.t_train,), "alpha_bar must have one entry per training step")
        require(bool((self.beta > 0).all() and (self.beta < 1).all()), "beta values must lie in (0, 1)")
        require(
            bool((self.alpha_bar > 0).all() and (self.alpha_bar < 1).all()),
            "alpha_bar values must lie in (0, 1)",
        )
        require(bool((np.diff(self.alpha_bar) < 0).all()), "alpha_bar must be strictly decreasing")
        steps = np.asarray(self.ddim_steps, dtype=np.int64)
        require(steps.ndim == 1 and steps.size >= 1, "ddim_steps must be a non-empty 1-D sequence")
        require(bool((np.diff(steps) < 0).all()), "ddim_steps must be strictly decreasing")
        require(int(steps[0]) == self.t_train, "ddim_steps must start at t_train")
        require(int(steps[-1]) >= 1, "ddim_steps must stay within [1, t_train]")
        object.__setattr__(self, "ddim_steps", steps)
        object.__setattr__(self, "_step_index", {int(t): i for i, t in enumerate(steps)})

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal level at step t; step 0 means the clean image."""
        t = check_index(t, 0, self.t_train, "t")
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def next_step(self, t: int) -> int:
        """The selected step after t in the reverse traversal, or 0 past the end."""
        require(int(t) in self._step_index, f"step {t} is not in the sampling subsequence")
        i = self._step_index[int(t)]
        return int(self.ddim_steps[i + 1]) if i + 1 < len(self.ddim_steps) else 0

    def step_pairs(self) -> list[tuple[int, int]]:
        """(t, t_next) pairs covering the full reverse traversal, ending at (.., 0)."""
        return [(int(t), self.next_step(int(t))) for t in self.ddim_steps]


def make_linear_schedule(
    t_train: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
    ddim_count: int = 50,
) -> NoiseSchedule:
    """Linearly spaced beta in [beta_start, beta_end] with an evenly spaced
    reverse-step subsequence from t_train down to 1."""
    require(t_train >= 1, f"t_train must be >= 1, got {t_train}")
    require(0.0 < beta_start <= beta_end < 1.0, f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    require(1 <= ddim_count <= t_train, f"ddim_count must be in [1, {t_train}], got {ddim_count}")
    beta = np.linspace(beta_start, beta_end, t_train)
    alpha_bar = np.cumprod(1.0 - beta)
    steps = np.rint(np.linspace(t_train, 1, ddim_count)).astype(np.int64)
    require(bool((np.diff(steps) < 0).all()), "rounded step subsequence collided; reduce ddim_count")
    return NoiseSchedule(t_train=t_train, beta=beta, alpha_bar=alpha_bar, ddim_steps=steps)


def forward_noise(x0: np.ndarray, t: int, z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * z."""
    x0 = check_grid(x0, "x0")
    z = check_grid(z, "z")
    check_same_shape(x0, z, "x0", "z")
    ab = sched.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Noise-free estimate implied by a noise prediction at step t."""
    x_t = check_grid(x_t, "x_t")
    eps_hat = check_grid(eps_hat, "eps_hat")
    check_same_shape(x_t, eps_hat, "x_t", "eps_hat")
    ab = sched.alpha_bar_at(t)
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic reverse update from step t to t_prev.

    t must belong to the sampling subsequence and t_prev must be the next
    selected step (or 0, in which case the noise-free estimate is returned).
    """
    require(int(t_prev) == sched.next_step(t), f"t_prev={t_prev} is not the step after t={t} in the schedule")
    x0 = predict_x0(x_t, eps_hat, t, sched)
    ab_prev = sched.alpha_bar_at(t_prev)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat
    return ensure_finite(out, "ddim_step output")


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Classifier-free guidance: returns (combined prediction, class direction).

    `scale` is the full multiplier applied to the class direction
    (conditional minus unconditional); scale 1 reproduces the conditional
    prediction, scale 0 the unconditional one.
    """
    eps_uncond = check_grid(eps_uncond, "eps_uncond")
    eps_cond = check_grid(eps_cond, "eps_cond")
    check_same_shape(eps_uncond, eps_cond, "eps_uncond", "eps_cond")
    require(scale >= 0.0, f"guidance scale must be non-negative, got {scale}")
    direction = eps_cond - eps_uncond
    eps_hat = eps_uncond + scale * direction
    return eps_hat, direction


def cfg_ddim_sample(
    x_t: np.ndarray,
    eps_pair_fn: Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray]],
    scale: float,
    sched: NoiseSchedule,
    uncond_transform: Callable[[np.ndarray], np.ndarray] | None = None,
    direction_transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Plain guided deterministic sampling loop at a fixed size.

    `eps_pair_fn(x, t)` must return (unconditional, conditional) noise
    predictions.  The optional transforms intercept the unconditional score
    and the class direction before they are combined, which is how the
    score-sharing experiments are expressed.

    Returns the final grid and the latent after every step.
    """
    x = check_grid(x_t, "x_t")
    require(scale >= 0.0, f"guidance scale must be non-negative, got {scale}")
    latents: list[np.ndarray] = []
    for t, t_prev in sched.step_pairs():
        eps_u, eps_c = eps_pair_fn(x, t)
        direction = eps_c - eps_u
        if direction_transform is not None:
            direction = direction_transform(direction)
        base = eps_u if uncond_transform is None else uncond_transform(eps_u)
        eps_hat = base + scale * direction
        x = ddim_step(x, eps_hat, t, t_prev, sched)
        latents.append(x)
    return x, latents
