"""Discrete-time diffusion arithmetic shared by training and sampling.

Conventions: timesteps are 1-based (1 <= t <= T); t = 0 denotes the clean
signal and is only valid as a DDIM target step. Schedule coefficients are
kept in float64 and cast to the operand dtype at use sites, so the same
schedule serves float32 training and float64 gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math
import torch

__all__ = ["NoiseSchedule", "build_schedule", "q_sample", "eps_to_x0", "ddim_step"]

ALPHA_BAR_FLOOR = 1e-8  # refuse to divide by smaller cumulative signal


def _check_finite(name: str, x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise coefficients: beta_t, alpha_t = 1 - beta_t, and the
    running product alpha_bar_t, all of length T."""

    betas: torch.Tensor
    alphas: torch.Tensor = field(init=False)
    alpha_bars: torch.Tensor = field(init=False)

    def __post_init__(self) -> None:
        betas = self.betas.to(torch.float64)
        if betas.ndim != 1 or betas.numel() < 2:
            raise ValueError("betas must be a 1-D sequence with T >= 2")
        if not ((betas > 0) & (betas < 1)).all():
            raise ValueError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", torch.cumprod(1.0 - betas, dim=0))
        if not (self.alpha_bars[1:] < self.alpha_bars[:-1]).all():
            raise ValueError("alpha_bars must be strictly decreasing")

    @property
    def T(self) -> int:
        return int(self.betas.numel())

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal coefficient at 1-based step t; t=0 returns 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} out of range [1, {self.T}]")
        return float(self.alpha_bars[t - 1])

    def gather_alpha_bar(self, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """alpha_bar for a batch of 1-based timesteps, shaped to broadcast
        against `like` (batch dim first)."""
        if ((t < 1) | (t > self.T)).any():
            raise ValueError(f"timesteps out of range [1, {self.T}]")
        ab = self.alpha_bars[(t - 1).long()].to(like.dtype)
        return ab.view(-1, *([1] * (like.ndim - 1)))


def build_schedule(
    kind: str, T: int, beta_min: float = 1e-4, beta_max: float = 2e-2
) -> NoiseSchedule:
    """Construct a linear or cosine beta schedule.

    For the cosine kind the betas derived from the squared-cosine
    alpha_bar curve are clamped into [beta_min, beta_max].
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0 < beta_min <= beta_max < 1):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")

    if kind == "linear":
        betas = torch.linspace(beta_min, beta_max, T, dtype=torch.float64)
    elif kind == "cosine":
        s = 0.008
        steps = torch.arange(T + 1, dtype=torch.float64)
        f = torch.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
        alpha_bar = f / f[0]
        betas = (1.0 - alpha_bar[1:] / alpha_bar[:-1]).clamp(beta_min, beta_max)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas=betas)


def q_sample(
    z0: torch.Tensor,
    t: int | torch.Tensor,
    eps: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Forward-noise a clean latent: z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    _check_finite("z0", z0)
    if isinstance(t, torch.Tensor):
        ab = sched.gather_alpha_bar(t, z0)
    else:
        if not 1 <= t <= sched.T:
            raise ValueError(f"t={t} out of range [1, {sched.T}]")
        ab = torch.tensor(sched.alpha_bar(t), dtype=z0.dtype)
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps


def eps_to_x0(
    z_t: torch.Tensor,
    t: int | torch.Tensor,
    eps_hat: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Invert the forward closed form: x0_hat = (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)."""
    if eps_hat.shape != z_t.shape:
        raise ValueError(f"eps_hat shape {tuple(eps_hat.shape)} != z_t shape {tuple(z_t.shape)}")
    if isinstance(t, torch.Tensor):
        ab = sched.gather_alpha_bar(t, z_t)
        if (ab < ALPHA_BAR_FLOOR).any():
            raise ValueError(f"alpha_bar below {ALPHA_BAR_FLOOR}; schedule too aggressive for inversion")
    else:
        if not 1 <= t <= sched.T:
            raise ValueError(f"t={t} out of range [1, {sched.T}]")
        ab_f = sched.alpha_bar(t)
        if ab_f < ALPHA_BAR_FLOOR:
            raise ValueError(f"alpha_bar(t={t})={ab_f:.3e} below {ALPHA_BAR_FLOOR}")
        ab = torch.tensor(ab_f, dtype=z_t.dtype)
    return (z_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt()


def ddim_step(
    z_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    t_prev: int,
    eta: float,
    sched: NoiseSchedule,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One deterministic (eta=0) or stochastic DDIM update from t to t_prev.

    t_prev = 0 lands on the clean estimate itself.
    """
    if t_prev >= t:
        raise ValueError(f"t_prev={t_prev} must be < t={t}")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta > 0 and noise is None:
        raise ValueError("noise tensor required when eta > 0")

    x0_hat = eps_to_x0(z_t, t, eps_hat, sched)
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)

    sigma = 0.0
    if eta > 0:
        sigma = (
            eta
            * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t))
            * math.sqrt(1.0 - ab_t / ab_prev)
        )
    dir_coef = math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0))
    z_prev = math.sqrt(ab_prev) * x0_hat + dir_coef * eps_hat
    if eta > 0:
        z_prev = z_prev + sigma * noise
    return z_prev


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Strided descending timestep grid for a `steps`-step DDIM chain."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps == 1:
        return [T]
    grid = torch.linspace(T, 1, steps, dtype=torch.float64).round().long()
    # deduplicate while preserving descending order (possible when steps > T)
    out: list[int] = []
    for v in grid.tolist():
        if not out or v < out[-1]:
            out.append(int(v))
    return out
