"""Desk-scale mobile manipulator: planar omni base plus a 4-DoF arm.

The arm is mounted ``mount_height`` above the base origin and works in the
base's x-z plane: shoulder, elbow and wrist pitch about the local y axis,
then a wrist roll about the last link. With the base yaw this spans every
orientation of the form ``Rz(yaw) Ry(pitch) Rx(roll)``, so the 7 DoF are
redundant for the 6D targets produced by :func:`sample_command`.

All state arrays may carry arbitrary leading batch dimensions; the rollout
code in :mod:`rewardfusion.rollout` steps whole populations at once.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from rewardfusion.geometry import (
    Pose,
    Rotation,
    express_in_body_batch,
    rot_x,
    rot_y,
    rot_z,
)

OBS_DIM = 44
ACT_DIM = 7

# Observation layout: (name, length), in order.
OBS_LAYOUT = (
    ("arm_q", 4),
    ("velocities", 7),
    ("ee_pos_body", 3),
    ("ee_rot_body", 9),
    ("last_action", 7),
    ("yaw_rate", 1),
    ("epsilon_ref", 1),
    ("command_body", 12),
)


class ActuatorMode(str, enum.Enum):
    VELOCITY_KINEMATIC = "VelocityKinematic"
    PD_TORQUE = "PdTorque"


class Failure(enum.IntEnum):
    OK = 0
    GROUND_COLLISION = 1
    JOINT_LIMIT = 2
    OUT_OF_BOUNDS = 3
    NON_FINITE = 4
    NON_FINITE_ACTION = 5


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.02
    episode_len: int = 400
    link_lengths: tuple[float, ...] = (0.3, 0.25, 0.15, 0.05)
    mount_height: float = 0.35
    joint_limits: tuple[tuple[float, float], ...] = (
        (-1.4, 1.4),
        (-2.2, 2.2),
        (-1.8, 1.8),
        (-2.6, 2.6),
    )
    vel_limits: tuple[float, ...] = (2.0, 2.0, 2.5, 3.0)
    accel_limits: tuple[float, ...] = (20.0, 20.0, 25.0, 30.0)
    q_stow: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    base_vel_limit: float = 0.6
    base_yaw_rate_limit: float = 1.0
    base_accel_limit: float = 2.0
    base_yaw_accel_limit: float = 4.0
    workspace_radius: float = 4.0
    actuator_mode: ActuatorMode = ActuatorMode.VELOCITY_KINEMATIC
    kp: tuple[float, ...] = (100.0, 100.0, 100.0, 100.0)
    kd: tuple[float, ...] = (20.0, 20.0, 20.0, 20.0)
    kd_base: float = 10.0
    torque_limits: tuple[float, ...] = (40.0, 40.0, 40.0, 40.0)
    base_force_limit: float = 10.0
    pin_time: float = 0.5
    pin_tol: float = 1e-9
    # command sampling
    cmd_near_radius: tuple[float, float] = (0.0, 0.3)
    cmd_far_radius: tuple[float, float] = (1.2, 1.6)
    cmd_far_fraction: float = 0.5
    cmd_yaw_range: float = 0.5
    cmd_joint_ranges: tuple[tuple[float, float], ...] = (
        (-0.3, 0.3),
        (-0.4, 0.4),
        (-0.4, 0.4),
        (-0.5, 0.5),
    )
    cmd_min_height: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "actuator_mode", ActuatorMode(self.actuator_mode))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.episode_len <= 0:
            raise ValueError("episode_len must be positive")
        for name in ("link_lengths", "vel_limits", "accel_limits", "kp", "kd", "torque_limits"):
            values = getattr(self, name)
            if len(values) != 4 or min(values) <= 0:
                raise ValueError(f"{name} needs 4 positive entries, got {values}")
        if len(self.joint_limits) != 4 or any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint_limits needs 4 (lo, hi) pairs with lo < hi")
        for lo, hi in self.cmd_joint_ranges:
            if lo > hi:
                raise ValueError("cmd_joint_ranges entries must satisfy lo <= hi")
        scalars = (
            self.base_vel_limit,
            self.base_yaw_rate_limit,
            self.base_accel_limit,
            self.base_yaw_accel_limit,
            self.workspace_radius,
            self.kd_base,
            self.base_force_limit,
            self.pin_time,
        )
        if min(scalars) <= 0:
            raise ValueError("all limits must be positive")
        if not 0.0 <= self.cmd_far_fraction <= 1.0:
            raise ValueError("cmd_far_fraction must be in [0, 1]")

    @property
    def arm_span(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def q_lo(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def q_hi(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    @property
    def action_scale(self) -> np.ndarray:
        """Per-dimension bound of the action vector."""
        stow = np.asarray(self.q_stow)
        arm = np.maximum(np.abs(self.q_lo - stow), np.abs(self.q_hi - stow))
        return np.concatenate([[self.base_vel_limit, self.base_vel_limit, self.base_yaw_rate_limit], arm])

    @property
    def dof_vel_limits(self) -> np.ndarray:
        """Velocity bound per DoF in (x, y, yaw, q1..q4) order."""
        return np.concatenate(
            [[self.base_vel_limit, self.base_vel_limit, self.base_yaw_rate_limit], self.vel_limits]
        )


@dataclass
class RobotState:
    """Robot configuration; every field may have leading batch dims.

    ``pin_timer`` holds, per arm joint, how long it has sat on a limit.
    """

    base: np.ndarray  # (..., 3) x, y, yaw
    arm_q: np.ndarray  # (..., 4)
    base_vel: np.ndarray  # (..., 3) body-frame vx, vy, yaw rate
    arm_qd: np.ndarray  # (..., 4)
    time: np.ndarray | float = 0.0
    pin_timer: np.ndarray = None

    def __post_init__(self):
        if self.pin_timer is None:
            self.pin_timer = np.zeros_like(np.asarray(self.arm_q, dtype=float))

    @classmethod
    def initial(cls, cfg: EnvConfig, batch_shape: tuple[int, ...] = ()) -> "RobotState":
        return cls(
            base=np.zeros(batch_shape + (3,)),
            arm_q=np.broadcast_to(np.asarray(cfg.q_stow, dtype=float), batch_shape + (4,)).copy(),
            base_vel=np.zeros(batch_shape + (3,)),
            arm_qd=np.zeros(batch_shape + (4,)),
            time=np.zeros(batch_shape) if batch_shape else 0.0,
        )

    def positions(self) -> np.ndarray:
        """Generalized coordinates (x, y, yaw, q1..q4)."""
        return np.concatenate([self.base, self.arm_q], axis=-1)

    def velocities(self) -> np.ndarray:
        return np.concatenate([self.base_vel, self.arm_qd], axis=-1)


@dataclass
class Transition:
    """One environment step. Reward and failure fields are filled by the rollout."""

    prev: RobotState
    next: RobotState
    action: np.ndarray
    torque: np.ndarray
    ee_pose: Pose
    command: Pose | None = None
    terms: object = None
    failure: Failure = Failure.OK


@dataclass(frozen=True)
class Command:
    """A 6D target with the configuration that generated it."""

    pose: Pose
    witness_base: np.ndarray
    witness_q: np.ndarray
    far: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate([self.pose.rot.m.reshape(9), self.pose.pos])


def arm_fk_body(arm_q: np.ndarray, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """EE rotation and position in the base frame."""
    q = np.asarray(arm_q, dtype=float)
    l1, l2, l3, l4 = cfg.link_lengths
    p1 = q[..., 0]
    p2 = p1 + q[..., 1]
    p3 = p2 + q[..., 2]
    reach_x = l1 * np.cos(p1) + l2 * np.cos(p2) + (l3 + l4) * np.cos(p3)
    reach_z = -(l1 * np.sin(p1) + l2 * np.sin(p2) + (l3 + l4) * np.sin(p3))
    pos = np.stack([reach_x, np.zeros_like(reach_x), cfg.mount_height + reach_z], axis=-1)
    rot = rot_y(p3) @ rot_x(q[..., 3])
    return rot, pos


def base_frame(base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    base = np.asarray(base, dtype=float)
    pos = np.stack([base[..., 0], base[..., 1], np.zeros_like(base[..., 0])], axis=-1)
    return rot_z(base[..., 2]), pos


def fk_arrays(base: np.ndarray, arm_q: np.ndarray, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """World-frame EE (rotation, position) for stacked configurations."""
    rot_b, pos_b = base_frame(base)
    rot_e, pos_e = arm_fk_body(arm_q, cfg)
    rot = rot_b @ rot_e
    pos = pos_b + np.einsum("...ij,...j->...i", rot_b, pos_e)
    return rot, pos


def forward_kinematics(state: RobotState, cfg: EnvConfig) -> Pose:
    rot, pos = fk_arrays(state.base, state.arm_q, cfg)
    return Pose(Rotation(rot), pos)


def sample_command(rng: np.random.Generator, cfg: EnvConfig) -> Command:
    """Draw a reachable world-frame target by sampling a configuration.

    Targets whose EE would sit lower than ``cmd_min_height`` are redrawn.
    """
    far = bool(rng.random() < cfg.cmd_far_fraction)
    lo, hi = cfg.cmd_far_radius if far else cfg.cmd_near_radius
    while True:
        radius = rng.uniform(lo, hi)
        heading = rng.uniform(-np.pi, np.pi)
        yaw = rng.uniform(-cfg.cmd_yaw_range, cfg.cmd_yaw_range)
        q = np.array([rng.uniform(a, b) for a, b in cfg.cmd_joint_ranges])
        base = np.array([radius * np.cos(heading), radius * np.sin(heading), yaw])
        rot, pos = fk_arrays(base, q, cfg)
        if pos[2] >= cfg.cmd_min_height:
            return Command(Pose(Rotation(rot), pos), base, q, far)


def _clip_norm(v: np.ndarray, limit) -> np.ndarray:
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    scale = np.where(norm > limit, limit / np.maximum(norm, 1e-300), 1.0)
    return v * scale


def step_arrays(state: RobotState, action: np.ndarray, cfg: EnvConfig) -> tuple[RobotState, np.ndarray]:
    """Advance one ``dt``; returns the new state and the applied effort (..., 7).

    In velocity-kinematic mode the effort is the realized acceleration (unit
    inertia), in PD mode it is the clipped torque / wheel force.
    """
    dt = cfg.dt
    action = np.asarray(action, dtype=float)
    a_base, a_arm = action[..., :3], action[..., 3:]
    v_lin, w = state.base_vel[..., :2], state.base_vel[..., 2]
    stow = np.asarray(cfg.q_stow)
    lo, hi = cfg.q_lo, cfg.q_hi
    vmax = np.asarray(cfg.vel_limits)

    if cfg.actuator_mode is ActuatorMode.VELOCITY_KINEMATIC:
        lin_des = _clip_norm(a_base[..., :2], cfg.base_vel_limit)
        w_des = np.clip(a_base[..., 2], -cfg.base_yaw_rate_limit, cfg.base_yaw_rate_limit)
        dv = _clip_norm(lin_des - v_lin, cfg.base_accel_limit * dt)
        dw = np.clip(w_des - w, -cfg.base_yaw_accel_limit * dt, cfg.base_yaw_accel_limit * dt)
        v_new = v_lin + dv
        w_new = w + dw
        f_base = np.concatenate([dv, dw[..., None]], axis=-1) / dt

        amax = np.asarray(cfg.accel_limits)
        target = np.clip(a_arm + stow, lo, hi)
        err = target - state.arm_q
        mag = np.minimum(np.minimum(np.abs(err) / dt, np.sqrt(2.0 * amax * np.abs(err))), vmax)
        qd_des = np.sign(err) * mag
        dqd = np.clip(qd_des - state.arm_qd, -amax * dt, amax * dt)
        qd_new = state.arm_qd + dqd
        tau_arm = dqd / dt
    else:
        f_lin = _clip_norm(cfg.kd_base * (a_base[..., :2] - v_lin), cfg.base_force_limit)
        f_w = np.clip(cfg.kd_base * (a_base[..., 2] - w), -cfg.base_force_limit, cfg.base_force_limit)
        v_new = _clip_norm(v_lin + f_lin * dt, cfg.base_vel_limit)
        w_new = np.clip(w + f_w * dt, -cfg.base_yaw_rate_limit, cfg.base_yaw_rate_limit)
        f_base = np.concatenate([f_lin, f_w[..., None]], axis=-1)

        tlim = np.asarray(cfg.torque_limits)
        tau_arm = np.asarray(cfg.kp) * (a_arm + stow - state.arm_q) - np.asarray(cfg.kd) * state.arm_qd
        tau_arm = np.clip(tau_arm, -tlim, tlim)
        qd_new = np.clip(state.arm_qd + tau_arm * dt, -vmax, vmax)

    yaw = state.base[..., 2]
    c, s = np.cos(yaw), np.sin(yaw)
    dx = (c * v_new[..., 0] - s * v_new[..., 1]) * dt
    dy = (s * v_new[..., 0] + c * v_new[..., 1]) * dt
    base_new = np.stack([state.base[..., 0] + dx, state.base[..., 1] + dy, yaw + w_new * dt], axis=-1)

    q_raw = state.arm_q + qd_new * dt
    q_new = np.clip(q_raw, lo, hi)
    qd_new = np.where(q_raw == q_new, qd_new, 0.0)
    pinned = (q_new - lo <= cfg.pin_tol) | (hi - q_new <= cfg.pin_tol)
    pin_timer = np.where(pinned, state.pin_timer + dt, 0.0)

    new = RobotState(
        base=base_new,
        arm_q=q_new,
        base_vel=np.concatenate([v_new, w_new[..., None]], axis=-1),
        arm_qd=qd_new,
        time=state.time + dt,
        pin_timer=pin_timer,
    )
    return new, np.concatenate([f_base, tau_arm], axis=-1)


def step(state: RobotState, action, cfg: EnvConfig) -> tuple[RobotState, Transition]:
    """Single (unbatched) step. A non-finite action leaves the state unchanged
    and is reported through ``Transition.failure``."""
    action = np.asarray(action, dtype=float).reshape(ACT_DIM)
    if not np.all(np.isfinite(action)):
        frozen = replace(state, time=state.time + cfg.dt)
        pose = forward_kinematics(state, cfg)
        return frozen, Transition(state, frozen, action, np.zeros(ACT_DIM), pose, failure=Failure.NON_FINITE_ACTION)
    new, effort = step_arrays(state, action, cfg)
    return new, Transition(state, new, action, effort, forward_kinematics(new, cfg))


def observe_arrays(
    state: RobotState,
    cmd_rot: np.ndarray,
    cmd_pos: np.ndarray,
    epsilon_ref,
    last_action: np.ndarray,
    cfg: EnvConfig,
) -> np.ndarray:
    rot_b, pos_b = base_frame(state.base)
    ee_rot, ee_pos = arm_fk_body(state.arm_q, cfg)
    c_rot, c_pos = express_in_body_batch(cmd_rot, cmd_pos, rot_b, pos_b)
    batch = state.arm_q.shape[:-1]
    parts = [
        state.arm_q,
        state.base_vel,
        state.arm_qd,
        ee_pos,
        ee_rot.reshape(batch + (9,)),
        last_action,
        state.base_vel[..., 2:3],
        np.broadcast_to(np.asarray(epsilon_ref, dtype=float), batch)[..., None],
        c_rot.reshape(batch + (9,)),
        c_pos,
    ]
    return np.concatenate(parts, axis=-1)


def observe(state: RobotState, command: Pose, epsilon_ref: float, last_action, cfg: EnvConfig) -> np.ndarray:
    """Flat observation of length :data:`OBS_DIM` in :data:`OBS_LAYOUT` order."""
    return observe_arrays(
        state, command.rot.m, command.pos, epsilon_ref, np.asarray(last_action, dtype=float), cfg
    )


def obs_slice(name: str) -> slice:
    start = 0
    for key, n in OBS_LAYOUT:
        if key == name:
            return slice(start, start + n)
        start += n
    raise KeyError(name)


def failure_arrays(state: RobotState, ee_z: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Failure code per batch element (0 = OK); earlier checks take precedence."""
    finite = np.all(np.isfinite(state.positions()), axis=-1) & np.all(
        np.isfinite(state.velocities()), axis=-1
    )
    code = np.zeros(np.shape(ee_z), dtype=np.int64)
    dist = np.sqrt(state.base[..., 0] ** 2 + state.base[..., 1] ** 2)
    code = np.where(dist > cfg.workspace_radius, int(Failure.OUT_OF_BOUNDS), code)
    code = np.where(np.any(state.pin_timer > cfg.pin_time + 1e-9, axis=-1), int(Failure.JOINT_LIMIT), code)
    code = np.where(ee_z < 0.0, int(Failure.GROUND_COLLISION), code)
    code = np.where(finite, code, int(Failure.NON_FINITE))
    return code


def failure_check(state: RobotState, transition: Transition | None, cfg: EnvConfig) -> Failure:
    if transition is not None and transition.failure is not Failure.OK:
        return transition.failure
    with np.errstate(invalid="ignore"):
        _, pos = fk_arrays(state.base, state.arm_q, cfg)
        return Failure(int(failure_arrays(state, pos[..., 2], cfg)))
