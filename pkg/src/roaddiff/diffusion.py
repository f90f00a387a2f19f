"""Road-conditioned diffusion refiner for lane states.

Forward steps mix the lane state with Gaussian noise and a scaled copy of
the parent road's state; reverse steps undo the noise with a learned
predictor and re-inject the road conditioning. A projection step after
each reverse update walks the state down the constraint-loss gradient in
physical units, so sampled lanes aggregate back to the observed roads.

The chain runs in normalized units; only the projection detours through
physical units. All step indices n are 1-based, matching beta[n-1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .graphs import LaneNetwork
from .optim import ParamStore
from .tensor import Tensor


@dataclass(frozen=True)
class DiffusionSchedule:
    steps: int
    beta: np.ndarray        # [steps], noise variance per step
    gamma: np.ndarray       # [steps], road-influence weight per step
    alpha_bar: np.ndarray   # [steps], cumulative product of (1 - beta)


def make_schedule(steps: int, beta_min: float = 1e-4, beta_max: float = 0.02,
                  gamma_scale: float = 0.1) -> DiffusionSchedule:
    """Linear beta schedule with road influence tied to the noise scale."""
    if steps < 1:
        raise ConfigError(f"need at least one diffusion step, got {steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"invalid beta range [{beta_min}, {beta_max}]")
    if not np.isfinite(gamma_scale) or gamma_scale < 0.0:
        raise ConfigError(f"gamma_scale must be finite and >= 0, got {gamma_scale}")
    beta = np.linspace(beta_min, beta_max, steps)
    gamma = gamma_scale * beta
    alpha_bar = np.cumprod(1.0 - beta)
    return DiffusionSchedule(steps=steps, beta=beta, gamma=gamma, alpha_bar=alpha_bar)


def _coeffs(schedule: DiffusionSchedule, n: int) -> tuple[float, float]:
    if not (1 <= n <= schedule.steps):
        raise ContractError(f"step {n} outside [1, {schedule.steps}]")
    return float(schedule.beta[n - 1]), float(schedule.gamma[n - 1])


def forward_step(x_prev: Tensor, road_prev: Tensor, n: int,
                 schedule: DiffusionSchedule, noise: np.ndarray) -> Tensor:
    """x_n = sqrt(1-beta_n) x_{n-1} + gamma_n road + sqrt(beta_n) eps."""
    beta_n, gamma_n = _coeffs(schedule, n)
    if x_prev.shape != road_prev.shape or x_prev.shape != np.shape(noise):
        raise ShapeError(
            f"forward_step shapes differ: {x_prev.shape}, {road_prev.shape}, "
            f"{np.shape(noise)}")
    out = T.mul(x_prev, Tensor(math.sqrt(1.0 - beta_n)))
    out = T.add(out, T.mul(road_prev, Tensor(gamma_n)))
    return T.add(out, Tensor(math.sqrt(beta_n) * np.asarray(noise)))


def reverse_step(x_n: Tensor, road_n: Tensor, n: int, denoiser,
                 schedule: DiffusionSchedule, z: np.ndarray | None = None,
                 gamma_sign: float = 1.0) -> Tensor:
    """One denoising step; z is the extra variance draw, skipped at n = 1."""
    beta_n, gamma_n = _coeffs(schedule, n)
    eps_hat = denoiser.predict(x_n, road_n, n)
    root = math.sqrt(1.0 - beta_n)
    mean = T.mul(T.sub(x_n, T.mul(eps_hat, Tensor(beta_n / root))), Tensor(1.0 / root))
    mean = T.add(mean, T.mul(road_n, Tensor(gamma_sign * gamma_n)))
    if z is not None and n > 1:
        mean = T.add(mean, Tensor(math.sqrt(beta_n) * np.asarray(z)))
    return mean


def lane_membership(lane_net: LaneNetwork) -> np.ndarray:
    """[N, I] indicator of lane -> parent road."""
    m = np.zeros((lane_net.lane_count, len(lane_net.lane_counts)))
    m[np.arange(lane_net.lane_count), lane_net.parent_road] = 1.0
    return m


def aggregate_lanes(lanes, lane_net: LaneNetwork, kind: str):
    """Road-level aggregate of lane states: mean for speed, sum for flow."""
    member = lane_membership(lane_net)
    if kind == "speed":
        member = member / lane_net.lane_counts[lane_net.parent_road][:, None]
    elif kind != "flow":
        raise ContractError(f"unknown traffic kind {kind!r}")
    if isinstance(lanes, Tensor):
        return T.matmul(lanes, Tensor(member))
    return np.asarray(lanes) @ member


def constraint_gradient(lanes, roads, kind: str, lane_net: LaneNetwork):
    """Analytic d L_con / d lanes in physical units.

    flow:  component j of road i is -2 (r_i - sum_j l_ij)
    speed: component j of road i is -(2/J_i) (r_i - mean_j l_ij)
    """
    residual_weight = lane_membership(lane_net)          # [N, I]
    if kind == "speed":
        counts = lane_net.lane_counts[lane_net.parent_road]
        residual_weight = residual_weight / counts[:, None]
    elif kind != "flow":
        raise ContractError(f"unknown traffic kind {kind!r}")
    agg = aggregate_lanes(lanes, lane_net, kind)          # [..., I]
    if isinstance(lanes, Tensor):
        residual = T.sub(roads if isinstance(roads, Tensor) else Tensor(roads), agg)
        return T.mul(T.matmul(residual, Tensor(residual_weight.T)), Tensor(-2.0))
    residual = np.asarray(roads) - agg
    return -2.0 * (residual @ residual_weight.T)


def constraint_project(lanes, roads, kind: str, eta: float,
                       lane_net: LaneNetwork):
    """One gradient-descent step on the constraint loss: x - eta * dL/dx."""
    grad = constraint_gradient(lanes, roads, kind, lane_net)
    if isinstance(lanes, Tensor):
        return T.sub(lanes, T.mul(grad, Tensor(eta)))
    return np.asarray(lanes) - eta * grad


def projection_eta_bound(kind: str, lane_net: LaneNetwork) -> float:
    """Largest step size below which one projection strictly shrinks L_con."""
    if kind == "flow":
        return 1.0 / (2.0 * float(lane_net.lane_counts.max()))
    if kind == "speed":
        return float(lane_net.lane_counts.min()) / 2.0
    raise ContractError(f"unknown traffic kind {kind!r}")


def default_eta(kind: str, lane_net: LaneNetwork) -> float:
    # 40% of the stability bound: contracts the residual without ringing
    return 0.4 * projection_eta_bound(kind, lane_net)


def step_embedding(n: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the 1-based step index."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = n * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if emb.size < dim:
        emb = np.concatenate([emb, np.zeros(dim - emb.size)])
    return emb


class NoisePredictor:
    """MLP over [lane state || mapped road state || step embedding].

    Weights are indexed by lane position, so the predictor can learn
    lane-specific corrections that graph message passing cannot separate.
    """

    def __init__(self, n_lanes: int, hidden: int = 64, emb_dim: int = 16):
        self.n_lanes = n_lanes
        self.hidden = hidden
        self.emb_dim = emb_dim

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        d_in = 2 * self.n_lanes + self.emb_dim
        h = self.hidden

        def dense(name, fan_in, shape):
            store.add(name, rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape))

        dense("den.w1", d_in, (d_in, h))
        store.add("den.b1", np.zeros(h))
        dense("den.w2", h, (h, h))
        store.add("den.b2", np.zeros(h))
        dense("den.w3", h, (h, self.n_lanes))
        store.add("den.b3", np.zeros(self.n_lanes))
        self._store = store

    def bind(self, store: ParamStore) -> None:
        self._store = store

    def predict(self, x: Tensor, road: Tensor, n: int) -> Tensor:
        s = self._store
        emb = np.broadcast_to(step_embedding(n, self.emb_dim),
                              x.shape[:-1] + (self.emb_dim,))
        inp = T.concat([x, road, Tensor(emb.copy())], axis=-1)
        h = T.relu(T.add(T.matmul(inp, s["den.w1"]), s["den.b1"]))
        h = T.relu(T.add(T.matmul(h, s["den.w2"]), s["den.b2"]))
        return T.add(T.matmul(h, s["den.w3"]), s["den.b3"])


class OracleDenoiser:
    """Replays the exact per-step noise observed during the forward pass."""

    def __init__(self):
        self.noise: dict[int, np.ndarray] = {}

    def observe(self, n: int, eps: np.ndarray) -> None:
        self.noise[n] = np.asarray(eps).copy()

    def predict(self, x: Tensor, road: Tensor, n: int) -> Tensor:
        if n not in self.noise:
            raise ContractError(f"oracle denoiser never saw forward step {n}")
        return Tensor(self.noise[n])


class ZeroDenoiser:
    """Predicts zero noise everywhere; useful as a formula probe."""

    def predict(self, x: Tensor, road: Tensor, n: int) -> Tensor:
        return Tensor(np.zeros(x.shape))


def forward_chain(x0: Tensor, road: Tensor, schedule: DiffusionSchedule,
                  rng: np.random.Generator, upto: int | None = None,
                  observer=None) -> tuple[list[Tensor], list[np.ndarray]]:
    """Iterate forward steps from x0; returns states [x0..x_upto] and noises."""
    upto = schedule.steps if upto is None else upto
    states = [x0]
    noises: list[np.ndarray] = []
    x = x0
    for n in range(1, upto + 1):
        eps = rng.standard_normal(x.shape)
        if observer is not None:
            observer.observe(n, eps)
        x = forward_step(x, road, n, schedule, eps)
        states.append(x)
        noises.append(eps)
    return states, noises


def sample(initial: np.ndarray, road_cond: np.ndarray, road_physical: np.ndarray,
           kind: str, schedule: DiffusionSchedule, denoiser, eta: float,
           lane_net: LaneNetwork, lane_stats: tuple[np.ndarray, np.ndarray],
           rng_seed: int | np.random.Generator, stochastic: bool = False,
           gamma_sign: float = 1.0) -> np.ndarray:
    """Noise the initial lane estimate, then denoise with per-step projection.

    ``initial`` and ``road_cond`` are normalized [..., T, N]; the projection
    denormalizes with ``lane_stats`` = (mean, std), steps against the
    physical road states [..., T, I], and renormalizes. Deterministic for a
    fixed seed; the reverse chain itself is the mean chain unless
    ``stochastic`` is set.
    """
    if np.shape(initial) != np.shape(road_cond):
        raise ContractError(
            f"initial {np.shape(initial)} and conditioning {np.shape(road_cond)} differ")
    if np.shape(initial)[-1] != lane_net.lane_count:
        raise ContractError(
            f"state has {np.shape(initial)[-1]} lanes, graph has {lane_net.lane_count}")
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    mean, std = lane_stats
    with T.no_grad():
        road = Tensor(road_cond)
        states, _ = forward_chain(Tensor(initial), road, schedule, rng,
                                  observer=denoiser if hasattr(denoiser, "observe") else None)
        x = states[-1]
        for n in range(schedule.steps, 0, -1):
            z = rng.standard_normal(x.shape) if (stochastic and n > 1) else None
            x = reverse_step(x, road, n, denoiser, schedule, z=z, gamma_sign=gamma_sign)
            if eta > 0.0:
                phys = x.values * std + mean
                phys = constraint_project(phys, road_physical, kind, eta, lane_net)
                x = Tensor((phys - mean) / std)
    return x.values
