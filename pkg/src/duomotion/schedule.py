"""Forward-diffusion noise schedule and its closed forms.

``alpha[t]`` is the per-step retention factor of the Markov forward
process q(z_t | z_{t-1}) = N(sqrt(alpha_t) z_{t-1}, (1 - alpha_t) I);
``alpha_bar`` is its running product, giving the marginal
q(z_t | z_0) = N(sqrt(alpha_bar_t) z_0, (1 - alpha_bar_t) I).

Levels are indexed t = 0..T-1 from nearly clean to nearly pure noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("cosine", "scaled_linear")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    total_steps: int
    alpha: np.ndarray      # (T,)
    alpha_bar: np.ndarray  # (T,) strictly decreasing

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar at level t-1, with the t=0 convention alpha_bar_{-1} = 1."""
        return float(self.alpha_bar[t - 1]) if t > 0 else 1.0

    def log_snr(self, t) -> np.ndarray:
        """lambda_t = ln(sqrt(alpha_bar)/sqrt(1 - alpha_bar)); increases as t -> 0."""
        ab = self.alpha_bar[t]
        return 0.5 * (np.log(ab) - np.log1p(-ab))


def build_schedule(kind: str, total_steps: int) -> NoiseSchedule:
    """Cosine (default) or scaled-linear betas, normalized so the endpoint
    contracts hold for any T: alpha_bar strictly decreasing from ~1 to < 0.01."""
    if total_steps < 2:
        raise ScheduleError(f"need T >= 2, got {total_steps}")
    t = np.arange(total_steps + 1, dtype=np.float64)
    if kind == "cosine":
        s = 0.008
        f = np.cos((t / total_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        betas = 1.0 - f[1:] / f[:-1]
    elif kind == "scaled_linear":
        # stable-diffusion betas defined at T=1000 density, rescaled to T
        betas = np.linspace(0.00085 ** 0.5, 0.012 ** 0.5, total_steps) ** 2
        betas = betas * (1000.0 / total_steps)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r} (have {SCHEDULE_KINDS})")
    betas = np.clip(betas, 1e-8, 0.999)
    alpha = 1.0 - betas
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(kind, total_steps, alpha, alpha_bar)


def _gather(values: np.ndarray, t, like: np.ndarray) -> np.ndarray:
    """Pick per-sample schedule entries and shape them for broadcasting."""
    picked = np.asarray(values[t], dtype=like.dtype)
    if picked.ndim == 0:
        return picked
    return picked.reshape(picked.shape + (1,) * (like.ndim - 1))


def q_step(z_prev: np.ndarray, t, schedule: NoiseSchedule,
           rng: np.random.Generator) -> np.ndarray:
    """One forward transition: sqrt(alpha_t) z + sqrt(1 - alpha_t) xi."""
    a = _gather(schedule.alpha, t, z_prev)
    noise = rng.standard_normal(z_prev.shape).astype(z_prev.dtype)
    return np.sqrt(a) * z_prev + np.sqrt(1.0 - a) * noise


def q_sample(z0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal: sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    ab = _gather(schedule.alpha_bar, t, z0)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def eps_to_x0(z_t: np.ndarray, eps_hat: np.ndarray, t, schedule: NoiseSchedule) -> np.ndarray:
    """Invert q_sample: x0 = (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)."""
    ab = _gather(schedule.alpha_bar, t, z_t)
    if np.any(ab <= 0.0):
        raise ScheduleError(f"alpha_bar[{t}] <= 0; cannot invert the marginal")
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
