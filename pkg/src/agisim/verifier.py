"""Closed-loop check of simulated IMU output.

Simulated increments are re-integrated by an ECEF strapdown mechanisation
that is started from the true IMU state.  A virtual position/velocity sensor
co-located with the IMU can periodically reset the solution.  Errors are
measured against the IMU-frame ground truth.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DivergenceError
from .geodesy import (
    OMEGA_IE_SKEW,
    GeodeticPosition,
    dcm_n_to_e,
    dcm_to_euler,
    ecef_to_lla,
    gravity_ecef,
    lla_to_ecef,
    orthonormalize,
    pos_transform_jacobian,
    rodrigues,
    wrap_angle,
)
from .gimbal import GimbalConfig
from .imu_error import ImuErrorModel, ImuErrorParams, ImuSample
from .ingest import PoseSample
from .kinematics import average_body_dcm, averaged_attitude_inverse, earth_delta_dcm, pose_to_ecef
from .pipeline import iter_epochs

log = logging.getLogger(__name__)

SETTLE_TIME = 5.0


@dataclass(frozen=True, eq=False)
class NavState:
    p_e: np.ndarray
    v_e: np.ndarray
    c_be: np.ndarray

    @classmethod
    def from_pose(cls, pose: PoseSample) -> "NavState":
        return cls(*pose_to_ecef(pose))

    def geodetic(self) -> GeodeticPosition:
        return ecef_to_lla(self.p_e)


def strapdown_step(state: NavState, imu: ImuSample, epoch: int | None = None) -> NavState:
    """Advance the navigation state by one IMU interval."""
    dt = imu.dt
    if not dt > 0:
        raise DivergenceError("non-positive time step", epoch=epoch)
    alpha = imu.dtheta
    c_bar = average_body_dcm(state.c_be, alpha, dt)
    f_e = averaged_attitude_inverse(c_bar).T @ imu.f
    v_new = state.v_e + dt * (f_e + gravity_ecef(state.p_e) - 2.0 * OMEGA_IE_SKEW @ state.v_e)
    p_new = state.p_e + 0.5 * dt * (v_new + state.v_e)
    c_new = orthonormalize(np.asarray(earth_delta_dcm(dt)) @ state.c_be @ rodrigues(alpha))
    if not (np.all(np.isfinite(p_new)) and np.all(np.isfinite(v_new)) and np.all(np.isfinite(c_new))):
        raise DivergenceError("non-finite navigation state", epoch=epoch)
    return NavState(p_new, v_new, c_new)


@dataclass(frozen=True, eq=False)
class AidingSample:
    t: float
    pos: GeodeticPosition
    vel_n: np.ndarray
    sigma_pos: float
    sigma_vel: float

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_vel < 0:
            raise ValueError("aiding sigmas must be non-negative")


def make_aiding(truth: PoseSample, sigma_pos: float, sigma_vel: float,
                rng: np.random.Generator) -> AidingSample:
    """Noisy copy of the IMU-frame truth; position noise is drawn in NED metres."""
    if sigma_pos < 0 or sigma_vel < 0:
        raise ValueError("aiding sigmas must be non-negative")
    n = rng.standard_normal(6)
    pos = truth.pos
    if sigma_pos > 0:
        d = pos_transform_jacobian(pos.lat, pos.alt) @ (sigma_pos * n[:3])
        pos = GeodeticPosition(pos.lat + d[0], pos.lon + d[1], pos.alt + d[2])
    vel = truth.vel_n + sigma_vel * n[3:] if sigma_vel > 0 else truth.vel_n
    return AidingSample(truth.t, pos, vel, sigma_pos, sigma_vel)


def reset_step(state: NavState, aiding: AidingSample, t: float, dt: float,
               mode: str = "hard", blend: float = 1.0) -> tuple[NavState, bool]:
    """Pull position and velocity toward the aiding fix; attitude is kept.

    Returns the new state and whether the fix was applied.  A fix whose time
    is more than ``dt / 2`` away from ``t`` is stale and skipped.
    """
    if abs(aiding.t - t) > 0.5 * dt:
        log.warning("stale aiding sample at t=%.3f (epoch t=%.3f) skipped", aiding.t, t)
        return state, False
    p_aid = lla_to_ecef(aiding.pos)
    v_aid = dcm_n_to_e(aiding.pos.lat, aiding.pos.lon).matrix @ aiding.vel_n
    if mode == "hard":
        return NavState(p_aid, v_aid, state.c_be), True
    if mode != "blend":
        raise ValueError(f"unknown reset mode {mode!r}")
    if not 0.0 <= blend <= 1.0:
        raise ValueError("blend fraction must lie in [0, 1]")
    if blend == 1.0:
        return NavState(p_aid, v_aid, state.c_be), True
    return NavState(state.p_e + blend * (p_aid - state.p_e), state.v_e + blend * (v_aid - state.v_e),
                    state.c_be), True


@dataclass(frozen=True)
class AidingConfig:
    enabled: bool = False
    rate: float = 1.0
    sigma_pos: float = 2.0
    sigma_vel: float = 0.1
    mode: str = "hard"
    blend: float = 1.0

    def __post_init__(self):
        from .errors import ConfigError
        if self.rate <= 0:
            raise ConfigError("aiding rate must be positive")
        if self.sigma_pos < 0 or self.sigma_vel < 0:
            raise ConfigError("aiding sigmas must be non-negative")
        if self.mode not in ("hard", "blend"):
            raise ConfigError(f"unknown aiding mode {self.mode!r}")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError("aiding blend must lie in [0, 1]")


CHANNELS = ("heading", "pN", "pE", "pD", "vN", "vE", "vD")


@dataclass
class ErrorReport:
    """Per-epoch navigation errors and their RMSE over the settled window."""

    t: np.ndarray
    pos_err: np.ndarray          # (n, 3) NED metres
    vel_err: np.ndarray          # (n, 3) NED m/s
    heading_err: np.ndarray      # (n,) rad, wrapped
    att_err: np.ndarray          # (n,) rad, full rotation angle
    settle: float = SETTLE_TIME
    resets: int = 0
    stale: int = 0

    @property
    def window(self) -> np.ndarray:
        if self.t.size == 0:
            return np.zeros(0, dtype=bool)
        return self.t >= self.t[0] + self.settle

    def channel(self, name: str) -> np.ndarray:
        if name == "heading":
            return self.heading_err
        idx = "NED".index(name[1])
        return (self.pos_err if name[0] == "p" else self.vel_err)[:, idx]

    @property
    def rmse(self) -> dict[str, float]:
        w = self.window
        return {c: float(np.sqrt(np.mean(self.channel(c)[w] ** 2))) if w.any() else float("nan")
                for c in CHANNELS}

    @property
    def max_pos_error(self) -> float:
        return float(np.max(np.linalg.norm(self.pos_err, axis=1))) if self.t.size else 0.0

    @property
    def max_vel_error(self) -> float:
        return float(np.max(np.linalg.norm(self.vel_err, axis=1))) if self.t.size else 0.0

    @property
    def max_att_error(self) -> float:
        return float(np.max(self.att_err)) if self.t.size else 0.0

    def to_csv(self, fmt=None) -> str:
        from .io import format_float
        fmt = fmt or format_float
        out = io.StringIO()
        out.write("t,pN,pE,pD,vN,vE,vD,heading,attitude\n")
        for i in range(self.t.size):
            row = (self.t[i], *self.pos_err[i], *self.vel_err[i], self.heading_err[i], self.att_err[i])
            out.write(",".join(fmt(x) for x in row) + "\n")
        return out.getvalue()

    def summary(self) -> str:
        r = self.rmse
        lines = [
            f"RMSE over t >= {self.t[0] + self.settle if self.t.size else self.settle:g} s "
            f"({int(self.window.sum())} epochs, {self.resets} resets, {self.stale} stale fixes)",
            f"{'heading(mrad)':>14} {'pN(m)':>9} {'pE(m)':>9} {'pD(m)':>9} "
            f"{'vN(m/s)':>9} {'vE(m/s)':>9} {'vD(m/s)':>9}",
            f"{1e3 * r['heading']:>14.3f} {r['pN']:>9.3f} {r['pE']:>9.3f} {r['pD']:>9.3f} "
            f"{r['vN']:>9.3f} {r['vE']:>9.3f} {r['vD']:>9.3f}",
            f"max |position error| {self.max_pos_error:.6g} m, max |velocity error| {self.max_vel_error:.6g} m/s, "
            f"max attitude error {self.max_att_error:.6g} rad",
        ]
        return "\n".join(lines) + "\n"


def nav_errors(state: NavState, truth: PoseSample) -> tuple[np.ndarray, np.ndarray, float, float]:
    """NED position/velocity error, heading error and attitude error angle."""
    p_t, v_t, c_t = pose_to_ecef(truth)
    c_en = dcm_n_to_e(truth.pos.lat, truth.pos.lon).matrix.T
    dp = c_en @ (state.p_e - p_t)
    dv = c_en @ (state.v_e - v_t)
    c_bn_est = c_en @ state.c_be
    heading = wrap_angle(dcm_to_euler(c_bn_est)[2] - truth.att[2])
    rel = c_t.T @ state.c_be
    cos_angle = min(1.0, max(-1.0, 0.5 * (np.trace(rel) - 1.0)))
    s = 0.5 * np.linalg.norm([rel[1, 2] - rel[2, 1], rel[2, 0] - rel[0, 2], rel[0, 1] - rel[1, 0]])
    return dp, dv, heading, math.atan2(s, cos_angle)


def run_closed_loop(trajectory: Iterable[PoseSample], gimbal: GimbalConfig, params: ImuErrorParams,
                    aiding: AidingConfig = AidingConfig(), *, noise: np.random.Generator | None = None,
                    aiding_rng: np.random.Generator | None = None, settle: float = SETTLE_TIME) -> ErrorReport:
    """Simulate IMU output along a trajectory and re-integrate it against truth."""
    imu = ImuErrorModel(params, noise)
    aid_rng = aiding_rng if aiding_rng is not None else np.random.default_rng([params.seed, 2])
    state = None
    rows_t, rows_p, rows_v, rows_h, rows_a = [], [], [], [], []
    resets = stale = 0
    epoch = 0
    for ep in iter_epochs(trajectory, gimbal, imu):
        b1, sample = ep.imu_pose, ep.imu
        if sample is None:
            state = NavState.from_pose(b1)
            t_start = b1.t
            continue
        state = strapdown_step(state, sample, epoch)
        epoch += 1
        if aiding.enabled:
            period = 1.0 / aiding.rate
            phase = (b1.t - t_start) / period
            if abs(phase - round(phase)) * period < 0.5 * sample.dt and round(phase) > 0:
                fix = make_aiding(b1, aiding.sigma_pos, aiding.sigma_vel, aid_rng)
                state, applied = reset_step(state, fix, b1.t, sample.dt, aiding.mode, aiding.blend)
                resets += applied
                stale += not applied
        dp, dv, dh, da = nav_errors(state, b1)
        rows_t.append(b1.t)
        rows_p.append(dp)
        rows_v.append(dv)
        rows_h.append(dh)
        rows_a.append(da)
    return ErrorReport(np.array(rows_t), np.array(rows_p).reshape(-1, 3), np.array(rows_v).reshape(-1, 3),
                       np.array(rows_h), np.array(rows_a), settle, resets, stale)
