"""Gradient-free policy search: a small tanh MLP trained with the cross-entropy method."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rewardfusion.environment import ACT_DIM, OBS_DIM, EnvConfig
from rewardfusion.reward_fusion import FusionConfig
from rewardfusion.rollout import BatchResult, rollout_seeds

log = logging.getLogger(__name__)

HIDDEN = (32, 32)
PARAMS_HEADER = "rewardfusion-policy v1"

TRAIN_SEED_OFFSET = 10_000_000
EVAL_SEED_OFFSET = 5_000_000


def layer_shapes(obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM, hidden=HIDDEN):
    sizes = (obs_dim,) + tuple(hidden) + (act_dim,)
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def num_params(obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM, hidden=HIDDEN) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in layer_shapes(obs_dim, act_dim, hidden))


def unpack(params: np.ndarray):
    """Split (..., n_params) into [(W, b), ...] with leading dims kept."""
    params = np.asarray(params, dtype=float)
    lead = params.shape[:-1]
    layers = []
    i = 0
    for n_in, n_out in layer_shapes():
        W = params[..., i : i + n_in * n_out].reshape(lead + (n_in, n_out))
        i += n_in * n_out
        b = params[..., i : i + n_out]
        i += n_out
        layers.append((W, b))
    if i != params.shape[-1]:
        raise ValueError(f"expected {i} parameters, got {params.shape[-1]}")
    return layers


def policy_act(params: np.ndarray, obs: np.ndarray, action_scale: np.ndarray) -> np.ndarray:
    """Forward pass. ``params`` is (n,) or stacked (P, n) with ``obs`` (P, ..., 44)."""
    params = np.asarray(params, dtype=float)
    h = np.asarray(obs, dtype=float)
    stacked = params.ndim == 2
    if stacked:
        extra = h.ndim - 2
        h = h.reshape(h.shape[0], -1, h.shape[-1])
    layers = unpack(params)
    for W, b in layers:
        if stacked:
            h = np.tanh(h @ W + b[:, None, :])
        else:
            h = np.tanh(h @ W + b)
    out = h * action_scale
    if stacked:
        out = out.reshape(obs.shape[:-1] + (ACT_DIM,))
    return out


def init_params(seed: int, hidden_gain: float = 1.0) -> np.ndarray:
    """Initial mean: random hidden layers (std ``hidden_gain / sqrt(fan_in)``),
    zero biases and a zero output layer, so the initial policy outputs zeros."""
    rng = np.random.default_rng([seed, 0xC0FFEE])
    parts = []
    shapes = layer_shapes()
    for k, (n_in, n_out) in enumerate(shapes):
        if k == len(shapes) - 1:
            parts.append(np.zeros(n_in * n_out))
        else:
            parts.append(rng.standard_normal(n_in * n_out) * hidden_gain / np.sqrt(n_in))
        parts.append(np.zeros(n_out))
    return np.concatenate(parts)


class MLPPolicy:
    """Callable policy wrapping a parameter vector (or a stack of them)."""

    def __init__(self, params: np.ndarray, env_cfg: EnvConfig):
        self.params = np.asarray(params, dtype=float)
        self.scale = env_cfg.action_scale

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return policy_act(self.params, obs, self.scale)


@dataclass(frozen=True)
class TrainConfig:
    population: int = 64
    elites: int = 8
    iterations: int = 200
    init_std: float = 0.02
    std_decay: float = 0.995
    episodes_per_eval: int = 4
    seed: int = 0
    min_std: float = 0.002
    # charged per step an episode did not live; see cem_train
    termination_cost: float = 25.0
    hidden_gain: float = 0.5

    def __post_init__(self):
        if not 0 < self.elites <= self.population:
            raise ValueError("need 0 < elites <= population")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.episodes_per_eval <= 0:
            raise ValueError("episodes_per_eval must be positive")
        if not 0 < self.std_decay <= 1:
            raise ValueError("std_decay must be in (0, 1]")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")


def train_seeds(train_seed: int, iteration: int, n: int) -> np.ndarray:
    base = TRAIN_SEED_OFFSET + train_seed * 1_000_000 + iteration * n
    return np.arange(base, base + n, dtype=np.int64)


def eval_seeds(train_seed: int, n: int) -> np.ndarray:
    """Held-out evaluation seeds; disjoint from every training seed."""
    base = EVAL_SEED_OFFSET + train_seed * 100_000
    return np.arange(base, base + n, dtype=np.int64)


@dataclass
class EvalSummary:
    mean_return: float
    returns: np.ndarray
    success_rate: float
    median_d_p: float
    median_d_theta: float
    result: BatchResult = field(repr=False)


def evaluate(params, env_cfg: EnvConfig, fusion_cfg: FusionConfig, seeds, record: bool = False) -> EvalSummary:
    """Mean undiscounted return over ``seeds`` plus tracking aggregates."""
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("need at least one evaluation seed")
    res = rollout_seeds(MLPPolicy(params, env_cfg), env_cfg, fusion_cfg, seeds, record=record)
    ok = ~res.failed
    success = 100.0 * ok.mean()
    med_p = float(np.median(res.final_d_p[ok])) if ok.any() else float("nan")
    med_t = float(np.median(res.final_d_theta[ok])) if ok.any() else float("nan")
    return EvalSummary(float(res.returns.mean()), res.returns, float(success), med_p, med_t, res)


@dataclass
class TrainResult:
    best_params: np.ndarray
    best_fitness: float
    mean_params: np.ndarray
    curve: list[dict]
    seconds: float = 0.0


def cem(
    fitness_fn,
    dim: int,
    cfg: TrainConfig,
    init_mean: np.ndarray | None = None,
    callback=None,
) -> TrainResult:
    """Cross-entropy method maximizing ``fitness_fn(pop, iteration) -> (P,) array``.

    The current mean is evaluated as population member 0 every iteration.
    The sampling std is refit to the elites and floored by an exploration
    term ``init_std * std_decay**k`` (but never below ``min_std``).
    """
    start = time.perf_counter()
    mean = np.zeros(dim) if init_mean is None else np.array(init_mean, dtype=float)
    std = np.full(dim, cfg.init_std)
    best_params, best_fit = mean.copy(), -np.inf
    curve = []
    for it in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, it])
        pop = mean + std * rng.standard_normal((cfg.population, dim))
        pop[0] = mean
        fit, extra = fitness_fn(pop, it)
        fit = np.where(np.isfinite(fit), fit, -np.inf)
        order = np.argsort(-fit, kind="stable")
        elites = pop[order[: cfg.elites]]
        if fit[order[0]] > best_fit:
            best_fit = float(fit[order[0]])
            best_params = pop[order[0]].copy()
        floor = max(cfg.init_std * cfg.std_decay**it, cfg.min_std)
        mean = elites.mean(axis=0)
        std = np.sqrt(elites.var(axis=0) + floor**2)
        row = {
            "iteration": it,
            "mean_return": float(np.mean(fit[np.isfinite(fit)])) if np.isfinite(fit).any() else float("-inf"),
            "max_return": best_fit,
            "elite_return": float(fit[order[: cfg.elites]].mean()),
        }
        row.update(extra or {})
        curve.append(row)
        if callback is not None:
            callback(row)
    return TrainResult(best_params, best_fit, mean, curve, time.perf_counter() - start)


def cem_train(train_cfg: TrainConfig, env_cfg: EnvConfig, fusion_cfg: FusionConfig, callback=None) -> TrainResult:
    """Train the MLP policy; all candidates of an iteration share episode seeds.

    Fitness is the mean episode return minus ``termination_cost`` for every
    step a failed episode cut short. Once the cumulative penalty saturates,
    a surviving step can be worth less than nothing, so without this charge
    crashing early would be the best strategy.
    """
    E = train_cfg.episodes_per_eval
    T = env_cfg.episode_len

    def fitness(pop: np.ndarray, it: int):
        seeds = np.broadcast_to(train_seeds(train_cfg.seed, it, E), (pop.shape[0], E))
        res = rollout_seeds(MLPPolicy(pop, env_cfg), env_cfg, fusion_cfg, seeds)
        lost = np.where(res.failed, T - res.lengths, 0)
        fit = (res.returns - train_cfg.termination_cost * lost).mean(axis=1)
        success = 100.0 * float((~res.failed).mean())
        return fit, {"success_rate": success}

    def log_row(row):
        if row["iteration"] % 10 == 0:
            log.info(
                "iter %d mean %.1f elite %.1f best %.1f success %.1f%%",
                row["iteration"], row["mean_return"], row["elite_return"], row["max_return"], row["success_rate"],
            )
        if callback is not None:
            callback(row)

    init = init_params(train_cfg.seed, train_cfg.hidden_gain)
    return cem(fitness, num_params(), train_cfg, init_mean=init, callback=log_row)


def save_params(params: np.ndarray, path) -> None:
    params = np.asarray(params, dtype=float)
    lines = [PARAMS_HEADER, f"n={params.size}"] + [repr(float(v)) for v in params]
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != PARAMS_HEADER:
        raise ValueError(f"{path}: not a policy parameter file (bad header)")
    n = int(lines[1].split("=", 1)[1])
    values = np.array([float(v) for v in lines[2:]], dtype=float)
    if values.size != n:
        raise ValueError(f"{path}: header says {n} values, found {values.size}")
    return values
