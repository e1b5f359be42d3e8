"""Discrete noise schedules and the forward (noising) process.

A schedule is the beta table of one diffusion process together with its
derived alpha and alpha-bar tables. Different denoising experts may run on
different schedules; everything downstream (x0 prediction, deterministic
reverse steps, re-noising between schedules) queries alpha-bar through the
objects defined here.

Timesteps are 1-indexed: ``t`` runs over ``1..total_steps`` and
``alpha_bar(0) == 1`` by convention, so a reverse step that lands on t=0
returns the clean sample exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha/alpha-bar tables for one diffusion process.

    Attributes:
        betas: per-step noise levels, shape (total_steps,), each in (0, 1).
        alphas: 1 - betas.
        alpha_bars: running product of alphas; strictly decreasing.
        schedule_id: opaque label used in records and serialized configs.
        beta_start, beta_end: endpoints the table was built from (kept so the
            schedule can be serialized compactly; tables are recomputed on
            load, never stored).
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    schedule_id: str
    beta_start: float
    beta_end: float

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """Return the cumulative signal-retention coefficient at step ``t``.

        ``t`` must lie in ``[0, total_steps]``; ``t = 0`` returns 1.
        """
        if not 0 <= t <= self.total_steps:
            raise ValueError(
                f"timestep {t} outside [0, {self.total_steps}] for schedule "
                f"{self.schedule_id!r}"
            )
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def to_json(self) -> str:
        return json.dumps(
            {
                "schedule_id": self.schedule_id,
                "beta_start": self.beta_start,
                "beta_end": self.beta_end,
                "total_steps": self.total_steps,
            }
        )

    @staticmethod
    def from_json(doc: str) -> "NoiseSchedule":
        d = json.loads(doc)
        return make_linear_schedule(
            d["beta_start"], d["beta_end"], d["total_steps"], d["schedule_id"]
        )


def make_linear_schedule(
    beta_start: float,
    beta_end: float,
    total_steps: int,
    schedule_id: str = "linear",
) -> NoiseSchedule:
    """Build a schedule with betas linearly spaced from start to end inclusive.

    Requires ``0 < beta_start <= beta_end < 1`` and ``total_steps >= 1``.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if total_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        schedule_id=schedule_id,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly increasing sampling timesteps ending at ``t_max``."""

    steps: tuple[int, ...]
    t_max: int

    @property
    def k(self) -> int:
        return len(self.steps)


def uniform_grid(k: int, t_max: int) -> TimestepGrid:
    """Select ``k`` timesteps at uniform intervals in ``[1, t_max]``.

    Uses ``round(i * t_max / k)`` for ``i = 1..k``, so the last entry is
    always ``t_max``. A rounding collision (two identical entries) is an
    error rather than being silently deduplicated, so ``k`` stays meaningful.
    """
    if not 1 <= k <= t_max:
        raise ValueError(f"need 1 <= k <= t_max, got k={k}, t_max={t_max}")
    steps = tuple(int(round(i * t_max / k)) for i in range(1, k + 1))
    if len(set(steps)) != k:
        raise ValueError(
            f"uniform grid k={k}, t_max={t_max} collides after rounding: {steps}"
        )
    return TimestepGrid(steps=steps, t_max=t_max)


def forward_diffuse(
    x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray
) -> np.ndarray:
    """Noise a clean sample to step ``t``: sqrt(abar)*x0 + sqrt(1-abar)*noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def renoise_to(
    x0_like: np.ndarray,
    t_e: int,
    target_schedule: NoiseSchedule,
    rng: np.random.Generator,
    noise_sink: list | None = None,
) -> np.ndarray:
    """Re-inject ``t_e`` steps of fresh noise under ``target_schedule``.

    Draws standard-normal noise from ``rng`` and applies the forward process
    at depth ``t_e``. The drawn noise is appended to ``noise_sink`` when the
    caller wants it recorded.
    """
    if not 1 <= t_e <= target_schedule.total_steps:
        raise ValueError(
            f"t_e={t_e} outside [1, {target_schedule.total_steps}]"
        )
    x0_like = np.asarray(x0_like, dtype=np.float64)
    noise = rng.standard_normal(x0_like.shape)
    if noise_sink is not None:
        noise_sink.append(noise)
    return forward_diffuse(x0_like, t_e, target_schedule, noise)
