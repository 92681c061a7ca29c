"""DDPM machinery: noise schedule, forward corruption, loss, reverse sampling, EMA.

The schedule is plain numpy; the math ops accept scalars, numpy arrays, or
torch tensors so the same functions back both the unit-level oracles and the
training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class DiffusionSchedule:
    beta: np.ndarray       # (N,), index 0 holds beta_1
    alpha: np.ndarray      # 1 - beta
    alpha_bar: np.ndarray  # cumulative product of alpha

    @property
    def n_steps(self) -> int:
        return len(self.beta)

    def _at(self, arr: np.ndarray, n):
        """Index a per-step array with a 1-based step (int or int array)."""
        n = np.asarray(n)
        if np.any(n < 1) or np.any(n > self.n_steps):
            raise ValueError(f"step index out of range [1, {self.n_steps}]")
        out = arr[n - 1]
        return float(out) if out.ndim == 0 else out

    def beta_at(self, n):
        return self._at(self.beta, n)

    def alpha_at(self, n):
        return self._at(self.alpha, n)

    def alpha_bar_at(self, n):
        return self._at(self.alpha_bar, n)


def make_linear_schedule(n_steps: int = 1000, beta1: float = 1e-4, beta_n: float = 0.02) -> DiffusionSchedule:
    if not (0.0 < beta1 < beta_n < 1.0):
        raise ValueError(f"need 0 < beta1 < betaN < 1, got ({beta1}, {beta_n})")
    if n_steps < 2:
        raise ValueError("schedule needs at least 2 steps")
    beta = np.linspace(beta1, beta_n, n_steps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(beta, alpha, alpha_bar)


def _coeff(value, like):
    """Broadcast a per-step coefficient against the data it scales."""
    if isinstance(like, torch.Tensor):
        c = torch.as_tensor(value, dtype=like.dtype, device=like.device)
        while c.dim() < like.dim():
            c = c.unsqueeze(-1)
        return c
    if isinstance(like, np.ndarray) and np.ndim(value) > 0:
        return np.reshape(value, (-1,) + (1,) * (like.ndim - 1))
    return value


def forward_sample(schedule: DiffusionSchedule, x0, n, eps):
    """Closed-form corruption x_n = sqrt(abar_n) x0 + sqrt(1 - abar_n) eps."""
    if np.shape(x0) != np.shape(eps):
        raise ValueError(f"x0 shape {np.shape(x0)} != eps shape {np.shape(eps)}")
    ab = schedule.alpha_bar_at(n)
    return _coeff(np.sqrt(ab), x0) * x0 + _coeff(np.sqrt(1.0 - ab), eps) * eps


def training_loss(eps_true, eps_pred):
    """Mean squared error between true and predicted noise, over all elements."""
    if np.shape(eps_true) != np.shape(eps_pred):
        raise ValueError("noise tensors must share a shape")
    diff = eps_true - eps_pred
    return (diff * diff).mean()


def reverse_step(schedule: DiffusionSchedule, x_n, n: int, eps_pred, z):
    """One ancestral step: posterior mean from predicted noise plus sqrt(beta_n) z.

    z must be zero at n == 1.
    """
    if n == 1:
        z_arr = np.asarray(z.detach().cpu() if isinstance(z, torch.Tensor) else z)
        if np.any(z_arr != 0):
            raise ValueError("z must be 0 at the final reverse step (n == 1)")
    beta = schedule.beta_at(n)
    alpha = schedule.alpha_at(n)
    ab = schedule.alpha_bar_at(n)
    mean = (x_n - (beta / np.sqrt(1.0 - ab)) * eps_pred) / np.sqrt(alpha)
    return mean + np.sqrt(beta) * z


def sample(denoiser, shape: tuple, schedule: DiffusionSchedule, rng: np.random.Generator) -> torch.Tensor:
    """Ancestral sampling from unit Gaussian noise down to x0.

    ``denoiser(x, n)`` must return a same-shaped noise prediction. All noise
    is drawn from ``rng`` so the whole chain is reproducible under a seed.
    """
    x = torch.from_numpy(rng.standard_normal(shape)).float()
    for n in range(schedule.n_steps, 0, -1):
        with torch.no_grad():
            eps = denoiser(x, n)
        if not isinstance(eps, torch.Tensor) or eps.shape != x.shape:
            raise ValueError(f"denoiser returned shape {getattr(eps, 'shape', None)}, expected {tuple(x.shape)}")
        if n > 1:
            z = torch.from_numpy(rng.standard_normal(shape)).float()
        else:
            z = torch.zeros(shape)
        x = reverse_step(schedule, x, n, eps, z)
    return x


class EmaState:
    """Exponential moving average of a module's parameters.

    shadow <- rate * shadow + (1 - rate) * live. Inference uses the shadow.
    """

    def __init__(self, model: torch.nn.Module, rate: float = 0.9):
        if not (0.0 < rate < 1.0):
            raise ValueError("EMA rate must be in (0, 1)")
        self.rate = rate
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    def update(self, model: torch.nn.Module) -> None:
        for k, v in model.state_dict().items():
            if k not in self.shadow or self.shadow[k].shape != v.shape:
                raise ValueError(f"EMA shadow mismatch for parameter {k!r}")
            if v.dtype.is_floating_point:
                # unfused on purpose: rate*s + (1-rate)*v with separate roundings
                self.shadow[k] = self.shadow[k] * self.rate + v.detach() * (1.0 - self.rate)
            else:
                self.shadow[k] = v.detach().clone()

    def copy_to(self, model: torch.nn.Module) -> None:
        model.load_state_dict(self.shadow)

    def state_dict(self) -> dict:
        return {"rate": self.rate, "shadow": self.shadow}

    def load_state_dict(self, state: dict) -> None:
        self.rate = state["rate"]
        self.shadow = state["shadow"]
