"""Independent reference computations.

Nothing here imports the modules it is used to check: rotation distances go
through scipy's rotation vectors and matrix logarithm, kinematics through
explicit homogeneous transforms, rewards through straight-line scalar math.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import logm
from scipy.spatial.transform import Rotation as ScipyRotation

SQRT2 = math.sqrt(2.0)

# (mani weights, total weights) per ablation, copied independently.
NAIVE_WEIGHTS = {
    "NoLocoManiFusion": {"total": (1.2, 0.4, 1.0)},
    "NoRewardPrioritization": {"mani": (2.0, 3.0, 3.0, -0.6, 3.0, 1.5)},
    "NoRFM": {"mani": (1.0, 2.0, 3.0, 3.0, 1.0), "total": (1.2, 0.5, 1.0)},
}


def rotvec_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """sqrt(2) times the rotation-vector magnitude of ``r1 r2^T``."""
    rel = np.asarray(r1) @ np.asarray(r2).T
    return SQRT2 * float(np.linalg.norm(ScipyRotation.from_matrix(rel).as_rotvec()))


def logm_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Frobenius norm of the numerical matrix logarithm of ``r1 r2^T``."""
    rel = np.asarray(r1) @ np.asarray(r2).T
    return float(np.linalg.norm(np.real(logm(rel)), "fro"))


def homogeneous(rot: np.ndarray, trans) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rot
    T[:3, 3] = trans
    return T


def _rz(a):
    return ScipyRotation.from_euler("z", a).as_matrix()


def _ry(a):
    return ScipyRotation.from_euler("y", a).as_matrix()


def _rx(a):
    return ScipyRotation.from_euler("x", a).as_matrix()


def chain_fk(base, q, links, mount_height) -> np.ndarray:
    """4x4 world pose of the EE by multiplying one transform per joint/link."""
    x, y, yaw = base
    l1, l2, l3, l4 = links
    T = homogeneous(_rz(yaw), [x, y, 0.0])
    T = T @ homogeneous(np.eye(3), [0.0, 0.0, mount_height])
    T = T @ homogeneous(_ry(q[0]), [0.0, 0.0, 0.0]) @ homogeneous(np.eye(3), [l1, 0.0, 0.0])
    T = T @ homogeneous(_ry(q[1]), [0.0, 0.0, 0.0]) @ homogeneous(np.eye(3), [l2, 0.0, 0.0])
    T = T @ homogeneous(_ry(q[2]), [0.0, 0.0, 0.0]) @ homogeneous(np.eye(3), [l3, 0.0, 0.0])
    T = T @ homogeneous(_rx(q[3]), [0.0, 0.0, 0.0]) @ homogeneous(np.eye(3), [l4, 0.0, 0.0])
    return T


def central_difference(f, x: float, h: float = 1e-6) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def enhancement_slope_ratio(d: float, sigma: float, m: float, h: float = 1e-6) -> float:
    """Slope of ``r + r^M`` over slope of ``r`` at distance ``d`` (r = exp(-d/sigma))."""

    def plain(x):
        return math.exp(-x / sigma)

    def enhanced(x):
        r = math.exp(-x / sigma)
        return r + r**m

    if d == 0.0:
        # one-sided: the reward is only defined for d >= 0
        def fwd(f):
            return (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h)

        return fwd(enhanced) / fwd(plain)
    return central_difference(enhanced, d, h) / central_difference(plain, d, h)


def sigmoid_phase(x: float, mu: float, l: float) -> float:
    return 1.0 / (1.0 + math.exp(-5.0 * (x - mu) / l))


def displacement(eps_ref: float, eps: float, gamma: float, sigma_s: float) -> float:
    return math.exp(-max(abs(eps_ref - eps) - gamma, 0.0) / sigma_s)


def naive_fuse(t: dict, mode: str, w_sa: float = 0.15) -> tuple[float, float, float]:
    """(r_mani, r_loco, r_t) written out longhand for each fusion mode."""
    reg, ep, eo = t["r_reg_mani"], t["r_ep"], t["r_eo"]
    ep_s, eo_s = t["r_ep_enh"], t["r_eo_enh"]
    pb, cb, ac = t["r_pb"], t["r_cb"], t["r_ac"]
    reg_l, dw, sa, basic, D = t["r_reg_loco"], t["r_dw"], t["r_sa"], t["r_basic"], t["d_phase"]

    if mode in ("FullRFM", "NoLocoManiFusion"):
        mani = reg + reg * ep_s + reg * ep * eo_s + pb - cb + ac
    elif mode == "NoEnhancement":
        mani = reg + 2.0 * reg * ep + 2.0 * reg * ep * eo + pb + ac
    elif mode == "NoRewardPrioritization":
        w = NAIVE_WEIGHTS[mode]["mani"]
        mani = w[0] * ep_s + w[1] * eo_s + w[2] * pb + w[3] * cb + w[4] * reg + w[5] * ac
    elif mode == "NoRFM":
        w = NAIVE_WEIGHTS[mode]["mani"]
        mani = w[0] * reg + w[1] * ep + w[2] * eo + w[3] * pb + w[4] * ac
    else:
        raise ValueError(mode)

    if mode == "NoRFM":
        loco = reg_l + dw - w_sa * sa
    else:
        loco = reg_l + reg_l * dw - w_sa * sa

    if mode in NAIVE_WEIGHTS and "total" in NAIVE_WEIGHTS[mode]:
        w = NAIVE_WEIGHTS[mode]["total"]
        total = w[0] * mani + w[1] * loco + w[2] * basic
    else:
        total = (1.0 - D) * mani + D * loco + basic
    return mani, loco, total


def linear_sequence_mean(first: float, last: float) -> float:
    """Mean of an arithmetic sequence: the midpoint of its ends."""
    return 0.5 * (first + last)


def quadratic_optimum(center: float) -> float:
    """Argmax of ``-(x - center)^2``."""
    return center


def derived_values() -> dict[str, float]:
    """The derived reference values printed by ``rewardfusion oracle``."""
    rz90 = _rz(math.pi / 2)
    return {
        "rot_dist(Rz(pi/2), I) [rotvec]": rotvec_distance(rz90, np.eye(3)),
        "rot_dist(Rz(pi/2), I) [logm]": logm_distance(rz90, np.eye(3)),
        "rot_dist(Rx(0.1), Rx(0.3)) [rotvec]": rotvec_distance(_rx(0.1), _rx(0.3)),
        "se3_error(Rz(pi/2) vs I, a1=1, a2=2)": 1.0 * rotvec_distance(rz90, np.eye(3)),
        "enhancement slope ratio d=0, M=4": enhancement_slope_ratio(0.0, 0.25, 4.0),
        "enhancement slope ratio d=sigma, M=4": enhancement_slope_ratio(0.25, 0.25, 4.0),
        "enhancement slope ratio d=5 sigma, M=4": enhancement_slope_ratio(1.25, 0.25, 4.0),
        "phase(mu + l)": sigmoid_phase(2.0, 1.0, 1.0),
        "phase(0; mu = l = 1.5)": sigmoid_phase(0.0, 1.5, 1.5),
        "r_dw(eps_ref=1, eps=3, gamma=0.2, sigma_s=0.5)": displacement(1.0, 3.0, 0.2, 0.5),
        "fk zero config EE x (links 0.3,0.25,0.15,0.05)": float(
            chain_fk((0, 0, 0), (0, 0, 0, 0), (0.3, 0.25, 0.15, 0.05), 0.35)[0, 3]
        ),
    }
