"""Reward fusion: tracking terms, prioritization, enhancement, phase blending.

Every function here is pure and accepts either Python floats or numpy
arrays (broadcast elementwise), so the same code scores one transition in a
unit test and thousands of them inside a batched rollout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from rewardfusion.geometry import Se3Weights


class FusionMode(str, enum.Enum):
    FULL_RFM = "FullRFM"
    NO_LOCO_MANI_FUSION = "NoLocoManiFusion"
    NO_REWARD_PRIORITIZATION = "NoRewardPrioritization"
    NO_ENHANCEMENT = "NoEnhancement"
    NO_RFM = "NoRFM"

    @classmethod
    def parse(cls, name) -> "FusionMode":
        if isinstance(name, cls):
            return name
        for mode in cls:
            if mode.value.lower() == str(name).lower():
                return mode
        raise ValueError(f"unknown fusion mode {name!r}; expected one of {[m.value for m in cls]}")


ALL_MODES = tuple(FusionMode)

# Weights of the ablation variants, as tuned by the original authors.
DEFAULT_MODE_WEIGHTS: dict[FusionMode, tuple[float, ...]] = {
    FusionMode.FULL_RFM: (),
    FusionMode.NO_LOCO_MANI_FUSION: (1.2, 0.4, 1.0),
    FusionMode.NO_REWARD_PRIORITIZATION: (2.0, 3.0, 3.0, -0.6, 3.0, 1.5),
    FusionMode.NO_ENHANCEMENT: (),
    FusionMode.NO_RFM: (1.0, 2.0, 3.0, 3.0, 1.0, 1.2, 0.5, 1.0),
}

MODE_ARITY = {mode: len(w) for mode, w in DEFAULT_MODE_WEIGHTS.items()}


@dataclass(frozen=True)
class BasicWeights:
    """Weights of the always-on basic rewards.

    ``omega_p`` and ``omega_tau`` are per-joint multipliers for the power and
    torque penalties; ``None`` means all ones.
    """

    action_rate: float = -0.003
    action_smoothness: float = -0.001
    collision: float = -5.0
    alive: float = 2.0
    power: float = -3.3e-4
    torque: float = -4e-5
    torque_rate: float = -0.1
    omega_p: tuple[float, ...] | None = None
    omega_tau: tuple[float, ...] | None = None


@dataclass(frozen=True)
class FusionConfig:
    """All reward-fusion parameters.

    ``kappa=None`` couples the cumulative-penalty gain to the phase variable
    (``kappa = 1 - D``); a float pins it to a constant. ``cb_clip_mode``
    selects whether the bound is applied to the accumulator itself
    (``"accumulator"``) or only to the exposed penalty (``"read"``).
    """

    sigma: float = 0.25
    sigma_s: float = 0.25
    m_enh: float = 4.0
    se3_weights: Se3Weights = field(default_factory=Se3Weights)
    v_ref: float = 0.3
    v_min: float = 0.1
    v_max: float = 1.0
    mu: float = 1.5
    l_slope: float = 1.5
    gamma_release: float = 0.1
    cb_clip: float = 20.0
    cb_clip_mode: str = "accumulator"
    mode: FusionMode = FusionMode.FULL_RFM
    mode_weights: tuple[float, ...] | None = None
    basic_weights: BasicWeights = field(default_factory=BasicWeights)
    w_sa: float = 0.15
    kappa: float | None = None
    tau_limit: float = 10.0
    # regularizer scales (see manipulation_regularizer / locomotion_regularizer)
    reg_base_speed: float = 0.5
    reg_base_yaw_rate: float = 1.0
    reg_arm_speed: float = 4.0
    reg_arm_stow: float = 4.0
    # potential is -pb_scale * epsilon
    pb_scale: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "mode", FusionMode.parse(self.mode))
        if self.mode_weights is None:
            object.__setattr__(self, "mode_weights", DEFAULT_MODE_WEIGHTS[self.mode])
        else:
            object.__setattr__(self, "mode_weights", tuple(float(w) for w in self.mode_weights))
        positive = {
            "sigma": self.sigma,
            "sigma_s": self.sigma_s,
            "v_ref": self.v_ref,
            "mu": self.mu,
            "l_slope": self.l_slope,
            "cb_clip": self.cb_clip,
            "tau_limit": self.tau_limit,
        }
        if self.pb_scale < 0:
            raise ValueError("pb_scale must be nonnegative")
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.m_enh > 1:
            raise ValueError(f"m_enh must be > 1, got {self.m_enh}")
        if self.gamma_release < 0:
            raise ValueError("gamma_release must be nonnegative")
        if not self.v_min <= self.v_ref <= self.v_max:
            raise ValueError(f"v_ref={self.v_ref} outside [{self.v_min}, {self.v_max}]")
        if self.cb_clip_mode not in ("accumulator", "read"):
            raise ValueError(f"cb_clip_mode must be 'accumulator' or 'read', got {self.cb_clip_mode!r}")
        if self.kappa is not None and self.kappa < 0:
            raise ValueError("constant kappa must be nonnegative")
        arity = MODE_ARITY[self.mode]
        if len(self.mode_weights) != arity:
            raise ValueError(
                f"mode {self.mode.value} takes {arity} weights, got {len(self.mode_weights)}"
            )

    def with_mode(self, mode) -> "FusionConfig":
        """Copy with another fusion mode and that mode's default weights."""
        return replace(self, mode=FusionMode.parse(mode), mode_weights=None)


@dataclass(frozen=True)
class EpisodeRewardState:
    """Per-episode accumulator. Fields may be arrays for batched rollouts."""

    e_cb: float | np.ndarray = 0.0
    epsilon0: float | np.ndarray = 0.0
    step: int | np.ndarray = 0
    dt: float = 0.02

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def start(cls, epsilon0, dt: float) -> "EpisodeRewardState":
        e0 = np.asarray(epsilon0, dtype=float)
        if e0.ndim == 0:
            return cls(0.0, float(e0), 0, dt)
        return cls(np.zeros_like(e0), e0.copy(), np.zeros(e0.shape, dtype=np.int64), dt)

    def advance(self) -> "EpisodeRewardState":
        return replace(self, step=self.step + 1)

    def relatch(self, epsilon, mask=None) -> "EpisodeRewardState":
        """Restart the reference schedule from ``epsilon`` (command changed)."""
        if mask is None:
            return replace(self, epsilon0=epsilon, step=np.zeros_like(self.step))
        return replace(
            self,
            epsilon0=np.where(mask, epsilon, self.epsilon0),
            step=np.where(mask, 0, self.step),
        )


@dataclass
class RewardTerms:
    """Per-step reward components (scalars or equally shaped arrays)."""

    r_ep: float | np.ndarray = 1.0
    r_eo: float | np.ndarray = 1.0
    r_ep_enh: float | np.ndarray = 2.0
    r_eo_enh: float | np.ndarray = 2.0
    r_cb: float | np.ndarray = 0.0
    r_pb: float | np.ndarray = 0.0
    r_ac: float | np.ndarray = 0.0
    r_reg_mani: float | np.ndarray = 1.0
    r_reg_loco: float | np.ndarray = 1.0
    r_dw: float | np.ndarray = 1.0
    r_sa: float | np.ndarray = 0.0
    r_basic: float | np.ndarray = 0.0
    d_phase: float | np.ndarray = 0.5
    epsilon: float | np.ndarray = 0.0
    epsilon_ref: float | np.ndarray = 0.0


FIELDS = tuple(RewardTerms.__dataclass_fields__)


def tracking_terms(d_p, d_theta, cfg: FusionConfig):
    """Exponential position/orientation tracking rewards, both in (0, 1]."""
    return np.exp(-np.asarray(d_p) / cfg.sigma), np.exp(-np.asarray(d_theta) / cfg.sigma_s)


def prioritize(r_high, r_low):
    """``r_high + r_high * r_low``: ``r_low`` only pays once ``r_high`` does."""
    return r_high * (1.0 + r_low)


def micro_enhance(r, m_enh: float):
    """``r + r**M``; steepens the reward only close to zero error."""
    return r + r**m_enh


def reference_schedule(state: EpisodeRewardState, cfg: FusionConfig):
    """Linearly decaying SE(3) distance reference, floored at zero."""
    return np.maximum(state.epsilon0 - cfg.v_ref * (state.step * state.dt), 0.0)


def phase(epsilon_ref, cfg: FusionConfig):
    """Sigmoid phase variable: near 1 far from the target, near 0 close to it."""
    return 1.0 / (1.0 + np.exp(-5.0 * (np.asarray(epsilon_ref) - cfg.mu) / cfg.l_slope))


def phase_lipschitz_bound(cfg: FusionConfig, dt: float) -> float:
    """Largest per-step change of the phase variable along a schedule."""
    return 5.0 * cfg.v_ref * dt / (4.0 * cfg.l_slope)


def cumulative_update(state: EpisodeRewardState, epsilon, d_phase, cfg: FusionConfig):
    """Accumulate ``kappa * epsilon``; returns ``(new_state, r_cb)``."""
    kappa = (1.0 - d_phase) if cfg.kappa is None else cfg.kappa
    e_cb = state.e_cb + kappa * epsilon
    r_cb = np.minimum(e_cb, cfg.cb_clip)
    if cfg.cb_clip_mode == "accumulator":
        e_cb = r_cb
    return replace(state, e_cb=e_cb), r_cb


def displacement_reward(epsilon_ref, epsilon, cfg: FusionConfig):
    """Reward for keeping the pose error near its reference, with a dead band."""
    e_ref = np.maximum(np.abs(np.asarray(epsilon_ref) - epsilon) - cfg.gamma_release, 0.0)
    return np.exp(-e_ref / cfg.sigma_s)


def default_potential(epsilon, scale: float = 1.0):
    return -scale * np.asarray(epsilon)


def potential_reward(epsilon_prev, epsilon, potential: Callable = default_potential):
    """Potential-difference shaping ``phi(s') - phi(s)`` on the pose error."""
    return potential(epsilon) - potential(epsilon_prev)


def manipulation_regularizer(base_vel, cfg: FusionConfig):
    """In (0, 1]: decays with base linear speed and yaw rate.

    ``exp(-|v_xy| / reg_base_speed) * exp(-|w| / reg_base_yaw_rate)``.
    """
    base_vel = np.asarray(base_vel)
    speed = np.sqrt(base_vel[..., 0] ** 2 + base_vel[..., 1] ** 2)
    return np.exp(-speed / cfg.reg_base_speed) * np.exp(-np.abs(base_vel[..., 2]) / cfg.reg_base_yaw_rate)


def locomotion_regularizer(arm_qd, arm_q, q_stow, cfg: FusionConfig):
    """In (0, 1]: decays with arm joint speed and with distance from stow.

    ``exp(-sum|qd| / reg_arm_speed) * exp(-sum|q - q_stow| / reg_arm_stow)``.
    """
    speed = np.sum(np.abs(arm_qd), axis=-1)
    dev = np.sum(np.abs(np.asarray(arm_q) - q_stow), axis=-1)
    return np.exp(-speed / cfg.reg_arm_speed) * np.exp(-dev / cfg.reg_arm_stow)


def static_arm(arm_q, q_stow):
    return np.sum(np.abs(np.asarray(arm_q) - q_stow), axis=-1)


def all_contact(base_cmd, base_vel, accel_limit: float, yaw_accel_limit: float, dt: float):
    """1 while the commanded base velocity change fits the acceleration limits
    (wheels keep traction), else 0."""
    dv = np.asarray(base_cmd) - np.asarray(base_vel)
    lin = np.sqrt(dv[..., 0] ** 2 + dv[..., 1] ** 2)
    ok = (lin <= accel_limit * dt + 1e-12) & (np.abs(dv[..., 2]) <= yaw_accel_limit * dt + 1e-12)
    return ok.astype(float)


def fuse_manipulation(terms: RewardTerms, cfg: FusionConfig):
    t = terms
    mode = cfg.mode
    if mode in (FusionMode.FULL_RFM, FusionMode.NO_LOCO_MANI_FUSION):
        tracking = t.r_ep_enh + t.r_ep * t.r_eo_enh
        return prioritize(t.r_reg_mani, tracking) + t.r_pb - t.r_cb + t.r_ac
    if mode is FusionMode.NO_ENHANCEMENT:
        tracking = 2.0 * t.r_ep + 2.0 * t.r_ep * t.r_eo
        return prioritize(t.r_reg_mani, tracking) + t.r_pb + t.r_ac
    w = cfg.mode_weights
    if mode is FusionMode.NO_REWARD_PRIORITIZATION:
        return (
            w[0] * t.r_ep_enh
            + w[1] * t.r_eo_enh
            + w[2] * t.r_pb
            + w[3] * t.r_cb
            + w[4] * t.r_reg_mani
            + w[5] * t.r_ac
        )
    return w[0] * t.r_reg_mani + w[1] * t.r_ep + w[2] * t.r_eo + w[3] * t.r_pb + w[4] * t.r_ac


def fuse_locomotion(terms: RewardTerms, cfg: FusionConfig):
    t = terms
    if cfg.mode is FusionMode.NO_RFM:
        return t.r_reg_loco + t.r_dw - cfg.w_sa * t.r_sa
    return prioritize(t.r_reg_loco, t.r_dw) - cfg.w_sa * t.r_sa


def fuse_total(r_mani, r_loco, r_basic, d_phase, cfg: FusionConfig):
    if cfg.mode is FusionMode.NO_LOCO_MANI_FUSION:
        w = cfg.mode_weights
        return w[0] * r_mani + w[1] * r_loco + w[2] * r_basic
    if cfg.mode is FusionMode.NO_RFM:
        w = cfg.mode_weights
        return w[5] * r_mani + w[6] * r_loco + w[7] * r_basic
    return (1.0 - d_phase) * r_mani + d_phase * r_loco + r_basic


def fuse(terms: RewardTerms, cfg: FusionConfig):
    """Total per-step reward for ``terms`` under ``cfg.mode``."""
    r_mani = fuse_manipulation(terms, cfg)
    r_loco = fuse_locomotion(terms, cfg)
    return fuse_total(r_mani, r_loco, terms.r_basic, terms.d_phase, cfg)


@dataclass
class BasicInputs:
    """What the basic rewards need from one transition.

    Vector fields have the joint axis last; ``collision`` and ``alive`` are
    booleans (or boolean arrays).
    """

    action: np.ndarray
    prev_action: np.ndarray
    prev2_action: np.ndarray
    torque: np.ndarray
    prev_torque: np.ndarray
    qd: np.ndarray
    collision: bool | np.ndarray = False
    alive: bool | np.ndarray = True


def basic_rewards(inp: BasicInputs, cfg: FusionConfig):
    w = cfg.basic_weights
    n = np.shape(inp.action)[-1]
    omega_p = np.ones(n) if w.omega_p is None else np.asarray(w.omega_p, dtype=float)
    omega_tau = np.ones(n) if w.omega_tau is None else np.asarray(w.omega_tau, dtype=float)
    a, a1, a2 = (np.asarray(x, dtype=float) for x in (inp.action, inp.prev_action, inp.prev2_action))
    tau, tau1 = np.asarray(inp.torque, dtype=float), np.asarray(inp.prev_torque, dtype=float)
    rate = np.sum((a1 - a) ** 2, axis=-1)
    smooth = np.sum((a2 - 2.0 * a1 + a) ** 2, axis=-1)
    power = np.sum(np.abs(tau * inp.qd) * omega_p, axis=-1)
    torque = np.sum(tau * tau * omega_tau, axis=-1)
    torque_rate = np.sum(np.abs(tau - tau1), axis=-1) / cfg.tau_limit
    return (
        w.action_rate * rate
        + w.action_smoothness * smooth
        + w.collision * np.asarray(inp.collision, dtype=float)
        + w.alive * np.asarray(inp.alive, dtype=float)
        + w.power * power
        + w.torque * torque
        + w.torque_rate * torque_rate
    )


def sample_curves(cfg: FusionConfig, n: int = 501) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Reward-shape curves: plain and enhanced position reward, phase sigmoid.

    The default of 501 samples (500 intervals) puts ``x = mu`` on the grid.
    """
    d = np.linspace(0.0, 4.0 * cfg.sigma, n)
    r_ep, _ = tracking_terms(d, 0.0, cfg)
    x = np.linspace(0.0, 2.0 * cfg.mu, n)
    return {
        "r_ep": (d, r_ep),
        "r_ep_enhanced": (d, micro_enhance(r_ep, cfg.m_enh)),
        "phase": (x, phase(x, cfg)),
    }
