"""Ground-truth average specific force and angular rate from consecutive poses.

Works in the ECEF frame: attitude change relative to inertial space gives the
angular rate, velocity change corrected for gravity and Coriolis gives the
specific force, resolved in the body through the interval-average attitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .geodesy import (
    EPS_ANGLE,
    OMEGA_IE,
    OMEGA_IE_SKEW,
    Dcm,
    dcm_delta_to_rotrate,
    dcm_n_to_e,
    gravity_ecef,
    lla_to_ecef,
    orthonormalize,
    skew,
)
from .ingest import PoseSample

# C-bar departs from orthonormal by ~angle^2/6 per step; far beyond that is corruption
MAX_CBAR_DEVIATION = 5e-2
MAX_RATE = 50.0


@dataclass(frozen=True, eq=False)
class TruthInertial:
    """Average specific force (m/s^2) and angular rate (rad/s) over (t - dt, t]."""

    t: float
    dt: float
    f: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("f", "omega"):
            a = np.array(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite {name} at t={self.t}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.linalg.norm(self.omega) >= MAX_RATE:
            raise NumericError(f"angular rate {np.linalg.norm(self.omega):.3f} rad/s above {MAX_RATE} at t={self.t}")


@dataclass(frozen=True, eq=False)
class KinematicsMemory:
    c_be: np.ndarray | None = None
    v_e: np.ndarray | None = None
    p_e: np.ndarray | None = None
    pos: object = None
    t: float | None = None

    @property
    def warm(self) -> bool:
        return self.t is not None


def earth_delta_dcm(dt: float) -> Dcm:
    """Change of the ECEF-to-inertial rotation over ``dt``."""
    c, s = math.cos(OMEGA_IE * dt), math.sin(OMEGA_IE * dt)
    return Dcm(np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]))


def body_delta_dcm_inertial(c_now, c_prev, delta_ei) -> np.ndarray:
    """Body attitude change over one step relative to inertial space.

    ``c_now`` and ``c_prev`` are body-to-ECEF DCMs.
    """
    return np.asarray(c_now).T @ np.asarray(delta_ei) @ np.asarray(c_prev)


def truth_rotation_rate(delta_ib, dt: float) -> np.ndarray:
    return dcm_delta_to_rotrate(delta_ib, dt)


def truth_specific_force_ecef(v_now, v_prev, p_prev, dt: float) -> np.ndarray:
    v_now = np.asarray(v_now, dtype=float)
    v_prev = np.asarray(v_prev, dtype=float)
    return (v_now - v_prev) / dt - gravity_ecef(p_prev) + 2.0 * OMEGA_IE_SKEW @ v_prev


def average_body_dcm(c_prev, alpha, dt: float) -> np.ndarray:
    """Body-to-ECEF attitude averaged over the step.

    ``alpha`` is the inertial rotation vector of the body over the step.  The
    result is an average of rotations and is therefore not orthonormal.
    """
    c_prev = np.asarray(c_prev, dtype=float)
    alpha = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    earth = 0.5 * dt * OMEGA_IE_SKEW @ c_prev
    mag = float(np.linalg.norm(alpha))
    if mag > EPS_ANGLE:
        a = skew(alpha)
        avg = (np.eye(3) + ((1.0 - math.cos(mag)) / mag**2) * a
               + ((1.0 - math.sin(mag) / mag) / mag**2) * (a @ a))
        return c_prev @ avg - earth
    return c_prev - earth


def averaged_attitude_inverse(c_bar) -> np.ndarray:
    """Transpose of the orthonormalised average attitude (ECEF to body)."""
    c_bar = np.asarray(c_bar, dtype=float)
    dev = float(np.max(np.abs(c_bar @ c_bar.T - np.eye(3))))
    if not dev <= MAX_CBAR_DEVIATION:
        raise NumericError(f"average attitude deviates from orthonormal by {dev:.3g}")
    return orthonormalize(c_bar).T


def truth_specific_force_body(f_e, c_bar) -> np.ndarray:
    return averaged_attitude_inverse(c_bar) @ np.asarray(f_e, dtype=float)


def pose_to_ecef(pose: PoseSample) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(position, velocity, body-to-ECEF DCM) of a NED-referenced pose."""
    c_ne = dcm_n_to_e(pose.pos.lat, pose.pos.lon).matrix
    return lla_to_ecef(pose.pos), c_ne @ pose.vel_n, c_ne @ pose.c_bn.matrix


def kinematics_step(pose: PoseSample, mem: KinematicsMemory) -> tuple[TruthInertial | None, KinematicsMemory]:
    p_e, v_e, c_be = pose_to_ecef(pose)
    new_mem = KinematicsMemory(c_be, v_e, p_e, pose.pos, pose.t)
    if not mem.warm:
        return None, new_mem
    dt = pose.t - mem.t
    delta_ei = earth_delta_dcm(dt)
    omega = truth_rotation_rate(body_delta_dcm_inertial(c_be, mem.c_be, delta_ei), dt)
    f_e = truth_specific_force_ecef(v_e, mem.v_e, mem.p_e, dt)
    c_bar = average_body_dcm(mem.c_be, omega * dt, dt)
    f_b = truth_specific_force_body(f_e, c_bar)
    return TruthInertial(pose.t, dt, f_b, omega), new_mem


class Kinematics:
    def __init__(self):
        self.mem = KinematicsMemory()

    def step(self, pose: PoseSample) -> TruthInertial | None:
        out, self.mem = kinematics_step(pose, self.mem)
        return out
