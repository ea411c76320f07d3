import numpy as np

from rewardfusion.environment import arm_fk_body, obs_slice


def witness_policy(witness_q, cfg, gain=2.0):
    """Controller that knows each command's generating configuration.

    The base servoes to the pose that puts the EE on the target when the arm
    sits at the witness angles; the arm is commanded straight to them.
    """
    wq = np.asarray(witness_q, dtype=float)
    r_e, p_e = arm_fk_body(wq, cfg)

    def policy(obs):
        c = obs[..., obs_slice("command_body")]
        r_c = c[..., :9].reshape(c.shape[:-1] + (3, 3))
        p_c = c[..., 9:]
        r_wb = r_c @ np.swapaxes(r_e, -1, -2)
        p_wb = p_c - np.einsum("...ij,...j->...i", r_wb, p_e)
        yaw = np.arctan2(r_wb[..., 1, 0], r_wb[..., 0, 0])
        v = gain * np.stack([p_wb[..., 0], p_wb[..., 1], yaw], axis=-1)
        return np.concatenate([v, wq - np.asarray(cfg.q_stow)], axis=-1)

    return policy
