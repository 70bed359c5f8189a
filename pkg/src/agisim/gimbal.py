"""Pan-tilt-roll gimbal chain: platform-body pose to IMU-body pose.

Frames, outermost first: ``bc`` (platform body), ``gP`` (pan, same origin as
``bc``), ``gT`` (tilt), ``gR`` (roll) and ``b1`` (IMU).  Each stage carries
attitude, position and velocity across one junction and lever arm; the
rotation rate needed for the lever-arm velocity comes from differencing the
parent frame's memorised ECEF attitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FrameMismatchError
from .geodesy import (
    Dcm,
    GeodeticPosition,
    cross,
    dcm_delta_to_rotrate,
    dcm_n_to_e,
    pos_transform_jacobian,
)
from .ingest import PoseSample

MAX_LEVER = 2.0
_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class AxisProfile:
    """Sinusoidal junction angle: offset + amplitude * sin(2 pi t / period)."""

    period: float = 1.0
    amplitude: float = 0.0
    offset: float = 0.0

    def angle(self, t: float) -> float:
        if self.amplitude == 0.0:
            return self.offset
        return self.offset + self.amplitude * math.sin(2.0 * math.pi * t / self.period)

    def rate(self, t: float) -> float:
        if self.amplitude == 0.0:
            return 0.0
        w = 2.0 * math.pi / self.period
        return self.amplitude * w * math.cos(w * t)


def _vec3(v, name):
    a = np.array(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GimbalConfig:
    """Gimbal geometry and angle profiles; defaults are the reference gimbal.

    ``enabled=False`` removes the gimbal entirely: angles, levers and mounts
    are ignored and the IMU frame coincides with the platform body.

    Lever arms default to ``[0, 0, l_pt]`` (pan to tilt, in ``gP``),
    ``[0, 0, l_tr]`` (tilt to roll, in ``gT``) and zero (roll to IMU, in ``gR``).
    """

    enabled: bool = True
    l_pt: float = 0.1
    l_tr: float = 0.1
    lever_pt: np.ndarray | None = None
    lever_tr: np.ndarray | None = None
    lever_imu: np.ndarray | None = None
    pan: AxisProfile = AxisProfile(4.0, math.pi / 6, 0.0)
    tilt: AxisProfile = AxisProfile(6.0, math.pi / 6, 0.0)
    roll: AxisProfile = AxisProfile(10.0, math.pi / 12, 0.0)
    axes: tuple[str, str, str] = ("z", "y", "x")
    mount: np.ndarray = field(default_factory=lambda: np.eye(3))
    imu_mount: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("lever_pt", _vec3([0.0, 0.0, self.l_pt] if self.lever_pt is None else self.lever_pt, "lever_pt"))
        set_("lever_tr", _vec3([0.0, 0.0, self.l_tr] if self.lever_tr is None else self.lever_tr, "lever_tr"))
        set_("lever_imu", _vec3([0.0, 0.0, 0.0] if self.lever_imu is None else self.lever_imu, "lever_imu"))
        for name in ("lever_pt", "lever_tr", "lever_imu"):
            if np.linalg.norm(getattr(self, name)) >= MAX_LEVER:
                raise ConfigError(f"{name} longer than {MAX_LEVER} m")
        for name in ("pan", "tilt", "roll"):
            prof = getattr(self, name)
            if not all(math.isfinite(x) for x in (prof.period, prof.amplitude, prof.offset)):
                raise ConfigError(f"{name} profile must be finite")
            if prof.amplitude != 0.0 and not prof.period > 0.0:
                raise ConfigError(f"{name} period must be positive when its amplitude is non-zero")
        axes = tuple(a.lower() for a in self.axes)
        if len(axes) != 3 or any(a not in _AXES for a in axes):
            raise ConfigError(f"junction axes must be three of x/y/z, got {self.axes}")
        set_("axes", axes)
        for name in ("mount", "imu_mount"):
            m = Dcm(getattr(self, name))
            if not m.is_orthonormal():
                raise ConfigError(f"{name} is not a rotation matrix")
            set_(name, m.matrix)


@dataclass(frozen=True)
class GimbalAngles:
    pan: float
    tilt: float
    roll: float


def gimbal_angles_at(t: float, cfg: GimbalConfig) -> GimbalAngles:
    if not cfg.enabled:
        return GimbalAngles(0.0, 0.0, 0.0)
    return GimbalAngles(cfg.pan.angle(t), cfg.tilt.angle(t), cfg.roll.angle(t))


def junction_dcm(angle: float, axis: str, child: str | None = None, parent: str | None = None) -> Dcm:
    """Child-to-parent DCM of a single-axis junction rotated by ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    i = _AXES[axis.lower()]
    j, k = (i + 1) % 3, (i + 2) % 3
    m = np.eye(3)
    m[j, j] = c
    m[j, k] = -s
    m[k, j] = s
    m[k, k] = c
    return Dcm(m, child, parent)


def transpose_attitude(c_parent_n: Dcm, c_child_parent: Dcm) -> Dcm:
    """Attitude of the child frame: ``C_child^n = C_parent^n C_child^parent``."""
    if c_parent_n.dst not in (None, "n"):
        raise FrameMismatchError(f"parent attitude must resolve in n, got {c_parent_n.dst}")
    return c_parent_n @ c_child_parent


def transpose_position(p_parent: GeodeticPosition, c_parent_n, lever) -> GeodeticPosition:
    """Geodetic position at the end of a lever arm resolved in the parent frame."""
    lever = np.asarray(lever, dtype=float)
    if not lever.any():
        return p_parent
    m_p = pos_transform_jacobian(p_parent.lat, p_parent.alt)
    d = m_p @ (np.asarray(c_parent_n) @ lever)
    return GeodeticPosition(p_parent.lat + d[0], p_parent.lon + d[1], p_parent.alt + d[2])


def transpose_velocity(v_parent_n, c_parent_n, omega_parent, lever) -> np.ndarray:
    """NED velocity at the end of a lever arm rotating with the parent frame."""
    v = np.asarray(v_parent_n, dtype=float)
    return v + np.asarray(c_parent_n) @ cross(omega_parent, lever)


@dataclass(frozen=True)
class ChainMemory:
    """Previous-step ECEF attitude of each chained frame."""

    c_e: dict[str, np.ndarray] = field(default_factory=dict)
    t: float | None = None

    @property
    def warm(self) -> bool:
        return self.t is not None


CHAIN_FRAMES = ("gP", "gT", "gR", "b1")


def chain_step(pose_bc: PoseSample, angles: GimbalAngles, cfg: GimbalConfig,
               mem: ChainMemory) -> tuple[PoseSample | None, ChainMemory]:
    """Carry a platform pose through the gimbal to the IMU frame.

    Returns ``(None, memory)`` on the first call; rotation rates need one
    previous epoch.  A disabled gimbal passes the platform pose through
    unchanged (the IMU sits at the platform origin), still consuming the
    warm-up epoch so sample accounting does not depend on the switch.
    """
    if not cfg.enabled:
        new_mem = ChainMemory({}, pose_bc.t)
        if mem.t is None:
            return None, new_mem
        return pose_bc, new_mem
    c_bc_n = pose_bc.c_bn.relabel("bc", "n")
    c_gp_n = c_bc_n @ Dcm(cfg.mount, "gP0", "bc") @ junction_dcm(angles.pan, cfg.axes[0], "gP", "gP0")

    stages = (
        ("gT", junction_dcm(angles.tilt, cfg.axes[1], "gT", "gP"), cfg.lever_pt),
        ("gR", junction_dcm(angles.roll, cfg.axes[2], "gR", "gT"), cfg.lever_tr),
        ("b1", Dcm(cfg.imu_mount, "b1", "gR"), cfg.lever_imu),
    )
    dt = None if mem.t is None else pose_bc.t - mem.t
    new_c_e = {}

    name, c_n, pos, vel = "gP", c_gp_n, pose_bc.pos, pose_bc.vel_n
    new_c_e[name] = dcm_n_to_e(pos.lat, pos.lon).matrix @ c_n.matrix
    for child, c_child_parent, lever in stages:
        c_child_n = transpose_attitude(c_n, c_child_parent)
        child_pos = transpose_position(pos, c_n, lever)
        if dt is not None:
            # parent rotation rate w.r.t. ECEF from the memorised attitude
            omega = dcm_delta_to_rotrate(new_c_e[name].T @ mem.c_e[name], dt)
            vel = transpose_velocity(vel, c_n, omega, lever)
        name, c_n, pos = child, c_child_n, child_pos
        new_c_e[name] = dcm_n_to_e(pos.lat, pos.lon).matrix @ c_n.matrix

    new_mem = ChainMemory(new_c_e, pose_bc.t)
    if dt is None:
        return None, new_mem
    return PoseSample(pose_bc.t, pos, vel, c_bn=c_n.relabel("b", "n")), new_mem


class GimbalChain:
    """Stateful wrapper feeding a pose stream through :func:`chain_step`."""

    def __init__(self, cfg: GimbalConfig):
        self.cfg = cfg
        self.mem = ChainMemory()

    def step(self, pose_bc: PoseSample) -> PoseSample | None:
        angles = gimbal_angles_at(pose_bc.t, self.cfg)
        out, self.mem = chain_step(pose_bc, angles, self.cfg, self.mem)
        return out
