"""Training losses: constraint, noise-reconstruction, and posterior KL.

The KL term compares the reverse-step mean against the closed-form
posterior of the unconditioned chain (road weight zero), with matched
fixed variances, so it collapses to a scaled squared distance between
means summed over state elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .diffusion import DiffusionSchedule, aggregate_lanes, reverse_step
from .errors import ContractError, ShapeError
from .graphs import LaneNetwork
from .tensor import Tensor


@dataclass(frozen=True)
class LossBreakdown:
    l_recon: float
    l_kl: float
    l_con: float
    lam: float
    total: float

    def to_dict(self) -> dict:
        return {"l_recon": self.l_recon, "l_kl": self.l_kl, "l_con": self.l_con,
                "lambda": self.lam, "total": self.total}


def constraint_loss(lanes, roads, kind: str, lane_net: LaneNetwork):
    """Sum over roads of squared aggregation residual, averaged over any
    leading batch/time axes. Expects physical units."""
    agg = aggregate_lanes(lanes, lane_net, kind)
    if isinstance(lanes, Tensor) or isinstance(roads, Tensor):
        roads_t = roads if isinstance(roads, Tensor) else Tensor(roads)
        residual = T.sub(roads_t, agg)
        per_slice = T.reduce_sum(T.mul(residual, residual), axis=-1)
        return T.reduce_mean(per_slice) if per_slice.ndim > 0 else per_slice
    residual = np.asarray(roads) - agg
    return float(np.mean(np.sum(residual * residual, axis=-1)))


def recon_loss(eps_true, eps_pred):
    """Mean squared error between injected and predicted noise."""
    true_t = eps_true if isinstance(eps_true, Tensor) else Tensor(eps_true)
    pred_t = eps_pred if isinstance(eps_pred, Tensor) else Tensor(eps_pred)
    if true_t.shape != pred_t.shape:
        raise ShapeError(f"noise shapes differ: {true_t.shape} vs {pred_t.shape}")
    diff = T.sub(pred_t, true_t)
    out = T.reduce_mean(T.mul(diff, diff))
    if isinstance(eps_true, Tensor) or isinstance(eps_pred, Tensor):
        return out
    return out.item()


def posterior_coefficients(schedule: DiffusionSchedule, n: int) -> tuple[float, float, float]:
    """(weight on x0, weight on x_n, variance) of q(x_{n-1} | x_n, x0) at
    road weight zero."""
    if not (2 <= n <= schedule.steps):
        raise ContractError(f"posterior needs n in [2, {schedule.steps}], got {n}")
    beta_n = float(schedule.beta[n - 1])
    abar_n = float(schedule.alpha_bar[n - 1])
    abar_prev = float(schedule.alpha_bar[n - 2])
    coef_x0 = math.sqrt(abar_prev) * beta_n / (1.0 - abar_n)
    coef_xn = math.sqrt(1.0 - beta_n) * (1.0 - abar_prev) / (1.0 - abar_n)
    var = beta_n * (1.0 - abar_prev) / (1.0 - abar_n)
    return coef_x0, coef_xn, var


def kl_loss(x0, x_n, denoiser, schedule: DiffusionSchedule, n: int,
            road_cond, gamma_sign: float = 1.0):
    """KL(q(x_{n-1}|x_n, x0) || p(x_{n-1}|x_n)) with matched variances.

    Both Gaussians are diagonal with the posterior variance, so the value
    is ||mu_q - mu_p||^2 / (2 var) summed over state elements.
    """
    coef_x0, coef_xn, var = posterior_coefficients(schedule, n)
    x0_t = x0 if isinstance(x0, Tensor) else Tensor(x0)
    xn_t = x_n if isinstance(x_n, Tensor) else Tensor(x_n)
    road_t = road_cond if isinstance(road_cond, Tensor) else Tensor(road_cond)
    mu_q = T.add(T.mul(x0_t, Tensor(coef_x0)), T.mul(xn_t, Tensor(coef_xn)))
    mu_p = reverse_step(xn_t, road_t, n, denoiser, schedule, z=None,
                        gamma_sign=gamma_sign)
    diff = T.sub(mu_q, mu_p)
    out = T.mul(T.reduce_sum(T.mul(diff, diff)), Tensor(0.5 / var))
    if isinstance(x0, Tensor) or isinstance(x_n, Tensor):
        return out
    return out.item()


def total_loss(l_recon: float, l_kl: float, l_con: float, lam: float) -> LossBreakdown:
    return LossBreakdown(l_recon=float(l_recon), l_kl=float(l_kl), l_con=float(l_con),
                         lam=float(lam), total=float(l_kl) + float(l_recon) + lam * float(l_con))
