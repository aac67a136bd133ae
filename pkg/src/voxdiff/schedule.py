"""Noise schedules and the resampling timestep plan.

Timesteps are 1-based: ``t = 1..T`` index the noisy states and ``t = 0`` is
clean data with cumulative signal fraction fixed at 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables. ``beta[t-1]`` holds the value for timestep ``t``.

    ``timesteps[t-1]`` is the timestep of the originating (training) schedule
    that step ``t`` corresponds to; it is ``t`` itself for an unrespaced table.
    """

    beta: np.ndarray
    timesteps: np.ndarray
    alpha_bar: np.ndarray | None = None
    alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1D table")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        ts = np.array(self.timesteps, dtype=np.int64)
        if ts.shape != beta.shape:
            raise ValueError("timesteps must match beta in length")
        alpha = 1.0 - beta
        if self.alpha_bar is None:
            alpha_bar = np.cumprod(alpha)
        else:
            alpha_bar = np.array(self.alpha_bar, dtype=np.float64)
            if alpha_bar.shape != beta.shape:
                raise ValueError("alpha_bar must match beta in length")
        for name, arr in (("beta", beta), ("timesteps", ts), ("alpha", alpha), ("alpha_bar", alpha_bar)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def abar(self, t: int) -> float:
        """Cumulative signal fraction at ``t``; 1 at ``t = 0``."""
        self.check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def check_t(self, t: int, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")

    def source_timestep(self, t: int) -> int:
        self.check_t(t)
        return int(self.timesteps[t - 1])


def linear_beta_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas linearly interpolated between the endpoints, both inclusive."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        beta = np.array([beta_start])
    else:
        beta = np.linspace(beta_start, beta_end, T)
        beta[-1] = beta_end
    return NoiseSchedule(beta, np.arange(1, T + 1))


def respaced_indices(T: int, T_sample: int) -> np.ndarray:
    """Evenly strided original timesteps ``floor(k·T / T_sample)`` for k = 1..T_sample."""
    if not 1 <= T_sample <= T:
        raise ValueError(f"T_sample must be in [1, {T}], got {T_sample}")
    k = np.arange(1, T_sample + 1, dtype=np.int64)
    return (k * T) // T_sample


def subsample_schedule(s: NoiseSchedule, T_sample: int) -> NoiseSchedule:
    """Shorten a schedule while keeping its cumulative products at the kept steps.

    The selected cumulative values are stored verbatim; step betas are derived
    from them as ``1 - abar_k / abar_{k-1}``.
    """
    idx = respaced_indices(s.T, T_sample)
    if T_sample == s.T:
        return s
    kept = s.alpha_bar[idx - 1]
    prev = np.concatenate(([1.0], kept[:-1]))
    beta = 1.0 - kept / prev
    return NoiseSchedule(beta, s.timesteps[idx - 1], kept)


@dataclass(frozen=True)
class RePaintPlan:
    """Ordered unit transitions ``(t_from, t_to)``; ``t_to > t_from`` re-noises."""

    transitions: tuple[tuple[int, int], ...]
    T_sample: int
    jump_length: int
    n_resample: int

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.transitions)

    @property
    def n_down(self) -> int:
        return sum(1 for a, b in self.transitions if b < a)

    @property
    def n_up(self) -> int:
        return sum(1 for a, b in self.transitions if b > a)

    def up_jumps(self) -> list[tuple[int, int]]:
        """Maximal runs of consecutive up-transitions as (start, end) timesteps."""
        runs: list[tuple[int, int]] = []
        start = None
        for a, b in self.transitions:
            if b > a:
                if start is None:
                    start = a
                end = b
            elif start is not None:
                runs.append((start, end))
                start = None
        if start is not None:
            runs.append((start, end))
        return runs


def repaint_plan(T_sample: int, jump_length: int = 10, n_resample: int = 10) -> RePaintPlan:
    """Build the descend-and-jump timestep plan.

    The chain descends one step at a time from ``T_sample``. Each time it lands
    on a jump point ``p = 1 + m·jump_length <= T_sample - jump_length`` it climbs
    back ``jump_length`` steps and descends to ``p`` again, ``n_resample - 1``
    times, before continuing down to 0.
    """
    if min(T_sample, jump_length, n_resample) < 1:
        raise ValueError("T_sample, jump_length and n_resample must be positive")
    if jump_length > T_sample:
        raise ValueError("jump_length cannot exceed T_sample")

    def descent(hi: int, lo: int) -> list[tuple[int, int]]:
        return [(t, t - 1) for t in range(hi, lo, -1)]

    def climb(lo: int, hi: int) -> list[tuple[int, int]]:
        return [(t, t + 1) for t in range(lo, hi)]

    points = range(1, T_sample - jump_length + 1, jump_length)[::-1]

    out: list[tuple[int, int]] = []
    t = T_sample
    for p in points:
        out += descent(t, p)
        for _ in range(n_resample - 1):
            out += climb(p, p + jump_length)
            out += descent(p + jump_length, p)
        t = p
    out += descent(t, 0)
    return RePaintPlan(tuple(out), T_sample, jump_length, n_resample)
