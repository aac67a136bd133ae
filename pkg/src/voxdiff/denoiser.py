"""Noise predictors ``eps(z_t, t, c)``.

Two implementations share the :class:`Denoiser` protocol:

* :class:`GaussianOracleDenoiser` returns the exact posterior-mean noise for
  latents drawn from a Gaussian prior. It is the optimal predictor under the
  squared-error objective and serves as the reference for sampler tests.
* :class:`AffineDenoiser` is a small trainable model,
  ``eps = (a + g_t)·z_t + sum_k b_k·c_k + bias``, whose conditioning enters
  additively. Its gradients are written out by hand.

``t`` passed to a denoiser is always a timestep of the denoiser's own
(training) schedule.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .condition import ConditioningField
from .errors import ConfigError, NumericError
from .schedule import NoiseSchedule, linear_beta_schedule
from .volume import atomic_write_bytes

log = logging.getLogger(__name__)


class Denoiser(Protocol):
    schedule: NoiseSchedule

    def predict_noise(self, z_t: np.ndarray, t: int, c: ConditioningField | None) -> np.ndarray: ...


def _cond_array(c: ConditioningField | np.ndarray | None) -> np.ndarray | None:
    if c is None:
        return None
    return c.data if isinstance(c, ConditioningField) else np.asarray(c, dtype=np.float64)


def predict_noise(d: Denoiser, z_t, t: int, c: ConditioningField | None = None) -> np.ndarray:
    """Validated call into ``d.predict_noise``."""
    z = np.asarray(z_t, dtype=np.float64)
    d.schedule.check_t(int(t))
    ca = _cond_array(c)
    if ca is not None and ca.shape[1:] != z.shape[1:]:
        raise ValueError(f"conditioning grid {ca.shape[1:]} does not match latent grid {z.shape[1:]}")
    out = d.predict_noise(z, int(t), c)
    if out.shape != z.shape:
        raise ValueError(f"denoiser returned shape {out.shape} for input {z.shape}")
    return out


# ----------------------------------------------------------------- Gaussian oracle


@dataclass(frozen=True)
class GaussianPrior:
    """Latent prior ``N(mean, variance)``.

    ``mean`` and ``variance`` broadcast against the latent array. With
    ``spatial_covariance`` (V x V, V = number of grid voxels) the voxels of each
    channel are jointly Gaussian with that covariance and channels are
    independent; ``variance`` is then ignored.
    """

    mean: np.ndarray | float = 0.0
    variance: np.ndarray | float = 1.0
    spatial_covariance: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        var = np.asarray(self.variance, dtype=np.float64)
        if self.spatial_covariance is None:
            if not np.all(var > 0):
                raise ValueError("prior variance must be strictly positive")
        else:
            cov = np.asarray(self.spatial_covariance, dtype=np.float64)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise ValueError("spatial_covariance must be square")
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() <= 0:
                raise ValueError("spatial_covariance must be symmetric positive definite")
            object.__setattr__(self, "spatial_covariance", cov)
            var = np.diag(cov).copy()
        object.__setattr__(self, "variance", var)

    def sample(self, shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal(shape)
        if self.spatial_covariance is None:
            return self.mean + np.sqrt(self.variance) * eps
        chol = np.linalg.cholesky(self.spatial_covariance)
        flat = eps.reshape(shape[0], -1) @ chol.T
        return self.mean + flat.reshape(shape)


class GaussianOracleDenoiser:
    """Posterior-mean noise predictor for a Gaussian latent prior.

    With ``z_t = sqrt(ab)·z_0 + sqrt(1-ab)·eps`` and ``z_0 ~ N(mu, s2)``::

        E[z_0 | z_t] = (sqrt(ab)·s2·z_t + (1-ab)·mu) / (ab·s2 + 1 - ab)
        eps_hat      = (z_t - sqrt(ab)·E[z_0 | z_t]) / sqrt(1 - ab)
    """

    def __init__(self, prior: GaussianPrior, schedule: NoiseSchedule):
        self.prior = prior
        self.schedule = schedule
        self._gain: dict[int, np.ndarray] = {}

    def _abar(self, t: int) -> float:
        ab = self.schedule.abar(t)
        if ab >= 1.0:
            raise ValueError(f"noise prediction undefined at t={t} (alpha_bar = 1)")
        return ab

    def posterior_mean(self, z_t: np.ndarray, t: int) -> np.ndarray:
        ab = self._abar(t)
        mu = self.prior.mean
        if self.prior.spatial_covariance is None:
            s2 = self.prior.variance
            return (math.sqrt(ab) * s2 * z_t + (1.0 - ab) * mu) / (ab * s2 + 1.0 - ab)
        gain = self._gain.get(t)
        if gain is None:
            cov = self.prior.spatial_covariance
            # K = sqrt(ab)·S·(ab·S + (1-ab)·I)^-1, applied to row vectors
            a = ab * cov + (1.0 - ab) * np.eye(cov.shape[0])
            gain = math.sqrt(ab) * np.linalg.solve(a, cov).T
            self._gain[t] = gain
        n = z_t.shape[0]
        mu_b = np.broadcast_to(mu, z_t.shape)
        resid = (z_t - math.sqrt(ab) * mu_b).reshape(n, -1)
        return mu_b + (resid @ gain).reshape(z_t.shape)

    def predict_noise(self, z_t: np.ndarray, t: int, c=None) -> np.ndarray:
        ab = self._abar(t)
        x0 = self.posterior_mean(z_t, t)
        return (z_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)


def gaussian_oracle_denoiser(prior: GaussianPrior, s: NoiseSchedule) -> GaussianOracleDenoiser:
    return GaussianOracleDenoiser(prior, s)


# ------------------------------------------------------------------ affine model


@dataclass
class AffineDenoiser:
    """``eps = (weight_z + time_embedding[t-1])·z + sum_k weight_c[k]·c_k + bias``."""

    schedule: NoiseSchedule
    latent_shape: tuple[int, ...]
    weight_z: float = 0.0
    weight_c: np.ndarray = field(default_factory=lambda: np.zeros(4))
    bias: np.ndarray | None = None
    time_embedding: np.ndarray | None = None
    loss_history: list[float] = field(default_factory=list, repr=False)
    zero_loss_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.latent_shape = tuple(int(s) for s in self.latent_shape)
        self.weight_z = float(self.weight_z)
        self.weight_c = np.array(self.weight_c, dtype=np.float64).reshape(4)
        self.bias = np.zeros(self.latent_shape) if self.bias is None else np.array(self.bias, dtype=np.float64)
        if self.bias.shape != self.latent_shape:
            raise ValueError(f"bias shape {self.bias.shape} != latent shape {self.latent_shape}")
        T = self.schedule.T
        self.time_embedding = (
            np.zeros(T) if self.time_embedding is None else np.array(self.time_embedding, dtype=np.float64)
        )
        if self.time_embedding.shape != (T,):
            raise ValueError(f"time embedding must have {T} entries")

    # flat parameter vector: [a, b_0..b_3, g_1..g_T, bias...]
    def get_params(self) -> np.ndarray:
        return np.concatenate(([self.weight_z], self.weight_c, self.time_embedding, self.bias.ravel()))

    def set_params(self, theta: np.ndarray) -> None:
        T = self.schedule.T
        self.weight_z = float(theta[0])
        self.weight_c = np.array(theta[1:5])
        self.time_embedding = np.array(theta[5 : 5 + T])
        self.bias = np.array(theta[5 + T :]).reshape(self.latent_shape)

    def predict_noise(self, z_t: np.ndarray, t: int, c: ConditioningField | np.ndarray | None = None) -> np.ndarray:
        out = (self.weight_z + self.time_embedding[t - 1]) * z_t + self.bias
        ca = _cond_array(c)
        if ca is not None:
            out = out + np.tensordot(self.weight_c, ca, axes=1)[None]
        return out

    def loss_and_grad(
        self, batch: Sequence[tuple[np.ndarray, np.ndarray | None, int, np.ndarray]]
    ) -> tuple[float, np.ndarray]:
        """Mean squared noise error over ``(z_t, c, t, eps)`` samples and its gradient."""
        T = self.schedule.T
        grad = np.zeros(5 + T + self.bias.size)
        g_bias = grad[5 + T :].reshape(self.latent_shape)
        loss = 0.0
        for z_t, c, t, eps in batch:
            r = self.predict_noise(z_t, t, c) - eps
            n = r.size * len(batch)
            loss += float(np.sum(r * r)) / n
            gr = 2.0 * r / n
            gz = float(np.sum(gr * z_t))
            grad[0] += gz
            grad[4 + t] += gz
            if c is not None:
                ca = _cond_array(c)
                grad[1:5] += np.tensordot(ca, gr.sum(axis=0), axes=3)
            g_bias += gr
        return loss, grad

    def to_json(self) -> dict:
        return {
            "kind": "affine",
            "schedule": {"T": self.schedule.T, "beta": self.schedule.beta.tolist()},
            "latent_shape": list(self.latent_shape),
            "weight_z": self.weight_z,
            "weight_c": self.weight_c.tolist(),
            "time_embedding": self.time_embedding.tolist(),
            "bias": self.bias.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, meta: dict) -> AffineDenoiser:
        if meta.get("kind") != "affine":
            raise ConfigError("parameter file is not an affine denoiser")
        sched = NoiseSchedule(np.array(meta["schedule"]["beta"]), np.arange(1, meta["schedule"]["T"] + 1))
        shape = tuple(meta["latent_shape"])
        return cls(
            sched,
            shape,
            meta["weight_z"],
            np.array(meta["weight_c"]),
            np.array(meta["bias"]).reshape(shape),
            np.array(meta["time_embedding"]),
        )

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_bytes(Path(path), json.dumps(self.to_json()).encode())

    @classmethod
    def load(cls, path: str | os.PathLike) -> AffineDenoiser:
        return cls.from_json(json.loads(Path(path).read_text()))


def _draw_batch(dataset, s: NoiseSchedule, rng: np.random.Generator, batch_size: int):
    batch = []
    for _ in range(batch_size):
        i = int(rng.integers(len(dataset)))
        z0, c = dataset[i]
        z0 = np.asarray(z0, dtype=np.float64)
        t = int(rng.integers(1, s.T + 1))
        eps = rng.standard_normal(z0.shape)
        ab = s.abar(t)
        z_t = math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps
        batch.append((z_t, _cond_array(c), t, eps))
    return batch


def train_affine_denoiser(
    dataset: Sequence[tuple[object, ConditioningField | None]],
    s: NoiseSchedule,
    steps: int,
    lr: float,
    seed: int,
    batch_size: int = 1,
) -> AffineDenoiser:
    """Plain SGD on the noise-prediction objective with uniformly drawn timesteps.

    Parameters start at zero. The per-step loss of the model and of the zero
    predictor on the same draws are kept in ``loss_history`` and
    ``zero_loss_history``.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if steps < 0 or batch_size < 1:
        raise ValueError("steps must be >= 0 and batch_size >= 1")
    shape = np.asarray(dataset[0][0]).shape
    model = AffineDenoiser(s, shape)
    rng = np.random.default_rng(seed)
    theta = model.get_params()
    for step in range(steps):
        batch = _draw_batch(dataset, s, rng, batch_size)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = model.loss_and_grad(batch)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"training diverged at step {step} (loss={loss}); lower the learning rate")
        zero = sum(float(np.mean(eps * eps)) for *_, eps in batch) / len(batch)
        model.loss_history.append(loss)
        model.zero_loss_history.append(zero)
        theta = theta - lr * grad
        model.set_params(theta)
    if steps >= 10:
        tail = max(1, steps // 10)
        final, base = np.mean(model.loss_history[-tail:]), np.mean(model.zero_loss_history[-tail:])
        if final > base:
            log.warning("final training loss %.4f exceeds zero-predictor loss %.4f", final, base)
    return model


def default_schedule() -> NoiseSchedule:
    return linear_beta_schedule(1000, 1e-4, 0.02)
