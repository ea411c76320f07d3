"""Episode loop: observe, act, step, score, check for failure.

:func:`rollout_batch` runs any number of episodes in lockstep over a batch
shape (for example ``(population, episodes)``). Every per-step computation
is elementwise along the batch, so an episode's numbers do not depend on
what else shares its batch.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from rewardfusion import reward_fusion as rf
from rewardfusion.environment import (
    ACT_DIM,
    Command,
    EnvConfig,
    Failure,
    RobotState,
    fk_arrays,
    failure_arrays,
    observe_arrays,
    sample_command,
    step_arrays,
)
from rewardfusion.geometry import position_distance_batch, rotation_angle_distance_batch

Policy = Callable[[np.ndarray], np.ndarray]

TERM_FIELDS = rf.FIELDS
TRACE_VECTORS = {
    "base": ("x", "y", "yaw"),
    "arm_q": ("q1", "q2", "q3", "q4"),
    "base_vel": ("vx", "vy", "wz"),
    "arm_qd": ("qd1", "qd2", "qd3", "qd4"),
    "action": tuple(f"a{i}" for i in range(1, ACT_DIM + 1)),
    "effort": tuple(f"u{i}" for i in range(1, ACT_DIM + 1)),
}
TRACE_SCALARS = ("d_p", "d_theta") + TERM_FIELDS + ("r_mani", "r_loco", "r_t", "failure")
CSV_COLUMNS = ("step", "time") + tuple(c for cols in TRACE_VECTORS.values() for c in cols) + TRACE_SCALARS


def zero_policy(obs: np.ndarray) -> np.ndarray:
    return np.zeros(np.shape(obs)[:-1] + (ACT_DIM,))


def command_for_seed(seed: int, cfg: EnvConfig) -> Command:
    return sample_command(np.random.default_rng(seed), cfg)


def commands_for_seeds(seeds, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (rotation, position) targets for an array of seeds."""
    seeds = np.asarray(seeds)
    flat = [command_for_seed(int(s), cfg) for s in seeds.ravel()]
    rot = np.stack([c.pose.rot.m for c in flat]).reshape(seeds.shape + (3, 3))
    pos = np.stack([c.pose.pos for c in flat]).reshape(seeds.shape + (3,))
    return rot, pos


@dataclass
class RolloutTrace:
    """Per-step record of one episode. Row ``k`` describes the state after step ``k``."""

    seed: int
    dt: float
    q_stow: np.ndarray
    command: np.ndarray
    failure: Failure
    steps: int
    data: dict[str, np.ndarray] = field(repr=False)

    @property
    def failed(self) -> bool:
        return self.failure is not Failure.OK

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def __len__(self) -> int:
        return self.steps

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        time = self.dt * np.arange(1, self.steps + 1)
        for k in range(self.steps):
            row = [k, repr(float(time[k]))]
            for name in TRACE_VECTORS:
                row.extend(repr(float(v)) for v in self.data[name][k])
            for name in TRACE_SCALARS:
                v = self.data[name][k]
                row.append(str(int(v)) if name == "failure" else repr(float(v)))
            writer.writerow(row)
        return buf.getvalue()


@dataclass
class BatchResult:
    """Summary of a batch of episodes (arrays shaped like the batch)."""

    returns: np.ndarray
    lengths: np.ndarray
    failure: np.ndarray
    final_d_p: np.ndarray
    final_d_theta: np.ndarray
    final_epsilon: np.ndarray
    traces: list[RolloutTrace] | None = None

    @property
    def failed(self) -> np.ndarray:
        return self.failure != int(Failure.OK)


def rollout_batch(
    policy: Policy,
    env_cfg: EnvConfig,
    fusion_cfg: rf.FusionConfig,
    cmd_rot: np.ndarray,
    cmd_pos: np.ndarray,
    *,
    record: bool = False,
    seeds=None,
    window: int = 50,
    retarget: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
    potential: Callable | None = None,
) -> BatchResult:
    """Run episodes for every target in ``cmd_rot``/``cmd_pos`` (batch, 3[, 3]).

    ``retarget`` maps a step index to a new (rotation, position) target for
    the whole batch; the distance reference restarts from the error at that
    moment. ``potential`` maps epsilon to the shaping potential (default
    ``-fusion_cfg.pb_scale * epsilon``). ``final_*`` are means over the
    last ``window`` steps of an episode that ran to ``episode_len`` (NaN
    for failed episodes).
    """
    cmd_rot = np.asarray(cmd_rot, dtype=float)
    cmd_pos = np.asarray(cmd_pos, dtype=float)
    batch = cmd_pos.shape[:-1]
    T = env_cfg.episode_len
    dt = env_cfg.dt
    q_stow = np.asarray(env_cfg.q_stow, dtype=float)
    w = fusion_cfg.se3_weights
    window = min(window, T)
    if potential is None:
        scale = fusion_cfg.pb_scale
        potential = lambda e: rf.default_potential(e, scale)

    state = RobotState.initial(env_cfg, batch)
    ee_rot, ee_pos = fk_arrays(state.base, state.arm_q, env_cfg)
    d_p = position_distance_batch(cmd_pos, ee_pos)
    d_th = rotation_angle_distance_batch(cmd_rot, ee_rot)
    eps = w.a1 * d_th + w.a2 * d_p
    rstate = rf.EpisodeRewardState.start(eps, dt)

    a1 = np.zeros(batch + (ACT_DIM,))
    a2 = np.zeros(batch + (ACT_DIM,))
    u_prev = np.zeros(batch + (ACT_DIM,))
    active = np.ones(batch, dtype=bool)
    returns = np.zeros(batch)
    lengths = np.zeros(batch, dtype=np.int64)
    failure = np.zeros(batch, dtype=np.int64)
    sums = np.zeros((3,) + batch)
    rows: list[dict[str, np.ndarray]] = []

    for k in range(T):
        if retarget and k in retarget:
            new_rot, new_pos = retarget[k]
            cmd_rot = np.broadcast_to(np.asarray(new_rot, dtype=float), batch + (3, 3))
            cmd_pos = np.broadcast_to(np.asarray(new_pos, dtype=float), batch + (3,))
            d_p = position_distance_batch(cmd_pos, ee_pos)
            d_th = rotation_angle_distance_batch(cmd_rot, ee_rot)
            eps = w.a1 * d_th + w.a2 * d_p
            rstate = rstate.relatch(eps)
        eps_ref_now = rf.reference_schedule(rstate, fusion_cfg)
        obs = observe_arrays(state, cmd_rot, cmd_pos, eps_ref_now, a1, env_cfg)
        action = np.asarray(policy(obs), dtype=float)
        bad_action = ~np.all(np.isfinite(action), axis=-1)
        action = np.where(bad_action[..., None], 0.0, action)

        with np.errstate(invalid="ignore", over="ignore"):
            nxt, effort = step_arrays(state, action, env_cfg)
            ee_rot, ee_pos = fk_arrays(nxt.base, nxt.arm_q, env_cfg)
        eps_prev = eps
        d_p = position_distance_batch(cmd_pos, ee_pos)
        d_th = rotation_angle_distance_batch(cmd_rot, ee_rot)
        eps = w.a1 * d_th + w.a2 * d_p

        rstate = rstate.advance()
        eps_ref = rf.reference_schedule(rstate, fusion_cfg)
        d_phase = rf.phase(eps_ref, fusion_cfg)
        rstate_new, r_cb = rf.cumulative_update(rstate, eps, d_phase, fusion_cfg)
        code = failure_arrays(nxt, ee_pos[..., 2], env_cfg)
        code = np.where(bad_action, int(Failure.NON_FINITE_ACTION), code)

        r_ep, r_eo = rf.tracking_terms(d_p, d_th, fusion_cfg)
        terms = rf.RewardTerms(
            r_ep=r_ep,
            r_eo=r_eo,
            r_ep_enh=rf.micro_enhance(r_ep, fusion_cfg.m_enh),
            r_eo_enh=rf.micro_enhance(r_eo, fusion_cfg.m_enh),
            r_cb=r_cb,
            r_pb=rf.potential_reward(eps_prev, eps, potential),
            r_ac=rf.all_contact(
                action[..., :3], state.base_vel, env_cfg.base_accel_limit, env_cfg.base_yaw_accel_limit, dt
            ),
            r_reg_mani=rf.manipulation_regularizer(nxt.base_vel, fusion_cfg),
            r_reg_loco=rf.locomotion_regularizer(nxt.arm_qd, nxt.arm_q, q_stow, fusion_cfg),
            r_dw=rf.displacement_reward(eps_ref, eps, fusion_cfg),
            r_sa=rf.static_arm(nxt.arm_q, q_stow),
            r_basic=rf.basic_rewards(
                rf.BasicInputs(
                    action=action,
                    prev_action=a1,
                    prev2_action=a2,
                    torque=effort,
                    prev_torque=u_prev,
                    qd=nxt.velocities(),
                    collision=code == int(Failure.GROUND_COLLISION),
                    alive=code == int(Failure.OK),
                ),
                fusion_cfg,
            ),
            d_phase=d_phase,
            epsilon=eps,
            epsilon_ref=eps_ref,
        )
        r_mani = rf.fuse_manipulation(terms, fusion_cfg)
        r_loco = rf.fuse_locomotion(terms, fusion_cfg)
        r_t = rf.fuse_total(r_mani, r_loco, terms.r_basic, d_phase, fusion_cfg)

        returns = returns + np.where(active, r_t, 0.0)
        lengths = lengths + active
        if k >= T - window:
            sums = sums + np.where(active, np.stack([d_p, d_th, eps]), 0.0)
        newly_failed = active & (code != int(Failure.OK))
        failure = np.where(newly_failed, code, failure)

        if record:
            row = {
                "base": nxt.base,
                "arm_q": nxt.arm_q,
                "base_vel": nxt.base_vel,
                "arm_qd": nxt.arm_qd,
                "action": action,
                "effort": effort,
                "d_p": d_p,
                "d_theta": d_th,
                "r_mani": r_mani,
                "r_loco": r_loco,
                "r_t": r_t,
                "failure": code,
            }
            for name in TERM_FIELDS:
                row[name] = np.broadcast_to(getattr(terms, name), batch)
            rows.append(row)

        active = active & (code == int(Failure.OK))
        # failed episodes stay frozen so their arrays remain finite
        keep = active[..., None]
        state = RobotState(
            base=np.where(keep, nxt.base, state.base),
            arm_q=np.where(keep, nxt.arm_q, state.arm_q),
            base_vel=np.where(keep, nxt.base_vel, state.base_vel),
            arm_qd=np.where(keep, nxt.arm_qd, state.arm_qd),
            time=nxt.time,
            pin_timer=np.where(keep, nxt.pin_timer, state.pin_timer),
        )
        rstate = rstate_new
        a2, a1, u_prev = a1, action, effort
        if not active.any():
            break

    ok = failure == int(Failure.OK)
    with np.errstate(invalid="ignore"):
        finals = np.where(ok, sums / window, np.nan)
    result = BatchResult(returns, lengths, failure, finals[0], finals[1], finals[2])
    if record:
        result.traces = _split_traces(rows, lengths, failure, batch, seeds, env_cfg, cmd_rot, cmd_pos)
    return result


def _split_traces(rows, lengths, failure, batch, seeds, env_cfg, cmd_rot, cmd_pos):
    stacked = {name: np.stack([r[name] for r in rows]) for name in rows[0]}
    flat_seeds = np.full(batch, -1) if seeds is None else np.broadcast_to(np.asarray(seeds), batch)
    traces = []
    for idx in np.ndindex(*batch):
        n = int(lengths[idx])
        data = {name: arr[(slice(0, n),) + idx].copy() for name, arr in stacked.items()}
        command = np.concatenate([cmd_rot[idx].reshape(9), cmd_pos[idx]])
        traces.append(
            RolloutTrace(
                seed=int(flat_seeds[idx]),
                dt=env_cfg.dt,
                q_stow=np.asarray(env_cfg.q_stow, dtype=float),
                command=command,
                failure=Failure(int(failure[idx])),
                steps=n,
                data=data,
            )
        )
    return traces


def rollout_seeds(policy: Policy, env_cfg: EnvConfig, fusion_cfg: rf.FusionConfig, seeds, **kwargs) -> BatchResult:
    """Roll out one episode per seed (seeds may be any array shape)."""
    seeds = np.asarray(seeds, dtype=np.int64)
    rot, pos = commands_for_seeds(seeds, env_cfg)
    return rollout_batch(policy, env_cfg, fusion_cfg, rot, pos, seeds=seeds, **kwargs)


def episode(policy: Policy, env_cfg: EnvConfig, fusion_cfg: rf.FusionConfig, seed: int, **kwargs) -> RolloutTrace:
    """One fully recorded episode; deterministic given ``policy`` and ``seed``."""
    result = rollout_seeds(policy, env_cfg, fusion_cfg, [seed], record=True, **kwargs)
    return result.traces[0]
