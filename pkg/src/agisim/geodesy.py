"""WGS-84 earth model, frame conversions and rotation-matrix utilities.

Frame conventions
-----------------
``n``  local North-East-Down navigation frame
``e``  Earth-centred Earth-fixed frame
``i``  Earth-centred inertial frame (coincides with ``e`` at t=0)
``b``  body frame, x forward, y right, z down

A :class:`Dcm` labelled ``src -> dst`` maps vectors resolved in ``src`` into
``dst``, so ``C_b^n`` is ``Dcm(m, "b", "n")``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FrameMismatchError, NumericError, SingularJacobianError

# WGS-84 defining constants
A = 6378137.0
E2 = 6.69437999014e-3
B = A * math.sqrt(1.0 - E2)
OMEGA_IE = 7.292115e-5
MU = 3.986004418e14
J2 = 1.082627e-3

# small-angle branch threshold for sc/sin(sc) and the average-DCM series
EPS_ANGLE = 1e-8
# acos argument tolerance before it is treated as corruption
ACOS_TOL = 1e-9
# distance from the pole where 1/cos(lat) is treated as singular
POLE_GUARD = 1e-4
MIN_ECEF_RADIUS = 6.0e6

ALT_MIN = -5000.0
ALT_MAX = 100000.0

OMEGA_IE_SKEW = np.array(
    [[0.0, -OMEGA_IE, 0.0],
     [OMEGA_IE, 0.0, 0.0],
     [0.0, 0.0, 0.0]]
)


def wrap_angle(x: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    y = math.remainder(x, 2.0 * math.pi)
    if y == -math.pi:
        y = math.pi
    return y


@dataclass(frozen=True)
class GeodeticPosition:
    lat: float
    lon: float
    alt: float

    def __post_init__(self):
        lat, lon, alt = float(self.lat), float(self.lon), float(self.alt)
        if not (math.isfinite(lat) and math.isfinite(lon) and math.isfinite(alt)):
            raise DomainError(f"non-finite geodetic position ({lat}, {lon}, {alt})")
        if abs(lat) > math.pi / 2:
            raise DomainError(f"latitude {lat} rad outside [-pi/2, pi/2]")
        if not ALT_MIN <= alt <= ALT_MAX:
            raise DomainError(f"altitude {alt} m outside [{ALT_MIN}, {ALT_MAX}]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", wrap_angle(lon))
        object.__setattr__(self, "alt", alt)

    def as_array(self) -> np.ndarray:
        return np.array([self.lat, self.lon, self.alt])

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, alt: float) -> "GeodeticPosition":
        return cls(math.radians(lat_deg), math.radians(lon_deg), alt)


@dataclass(frozen=True, eq=False)
class Dcm:
    """Direction cosine matrix carrying its source and target frame labels.

    Multiplying two DCMs checks that the frames chain (``C_b^n @ C_c^b``).
    A label of ``None`` acts as a wildcard.
    """

    matrix: np.ndarray
    src: str | None = None
    dst: str | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"DCM must be 3x3, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def T(self) -> "Dcm":
        return Dcm(self.matrix.T, self.dst, self.src)

    def __matmul__(self, other):
        if isinstance(other, Dcm):
            if self.src is not None and other.dst is not None and self.src != other.dst:
                raise FrameMismatchError(
                    f"cannot compose C[{self.src}->{self.dst}] with C[{other.src}->{other.dst}]"
                )
            return Dcm(self.matrix @ other.matrix, other.src, self.dst)
        return self.matrix @ np.asarray(other)

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.matrix @ self.matrix.T - np.eye(3))))

    def is_orthonormal(self, tol: float = 1e-9) -> bool:
        det = float(np.linalg.det(self.matrix))
        return self.orthonormality_error() < tol and abs(det - 1.0) <= tol

    def relabel(self, src: str | None, dst: str | None) -> "Dcm":
        return Dcm(self.matrix, src, dst)


def skew(v) -> np.ndarray:
    """Skew-symmetric cross-product matrix, ``skew(a) @ b == a x b``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True, eq=False)
class RotationVector:
    """Rotation vector over one step and its skew-symmetric matrix."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(3)
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def skew(self) -> np.ndarray:
        return skew(self.alpha)

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.alpha))


def rodrigues(alpha) -> np.ndarray:
    """Rotation matrix ``exp(skew(alpha))``."""
    alpha = np.asarray(alpha, dtype=float)
    theta = float(np.linalg.norm(alpha))
    a = skew(alpha)
    if theta < EPS_ANGLE:
        return np.eye(3) + a + 0.5 * (a @ a)
    return (np.eye(3) + (math.sin(theta) / theta) * a
            + ((1.0 - math.cos(theta)) / theta**2) * (a @ a))


def orthonormalize(m) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (symmetric correction).

    Near-orthonormal input uses the Newton polar iteration
    ``R <- (3R - R R^T R) / 2``; anything else falls back to the SVD.
    """
    r = np.asarray(m, dtype=float)
    eye = np.eye(3)
    dev = np.max(np.abs(r @ r.T - eye))
    if dev < 0.1 and np.linalg.det(r) > 0.0:
        for _ in range(8):
            if dev < 1e-15:
                return r
            r = 1.5 * r - 0.5 * (r @ r.T @ r)
            dev = np.max(np.abs(r @ r.T - eye))
        return r
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def cross(a, b) -> np.ndarray:
    """3-vector cross product without numpy.cross overhead."""
    a0, a1, a2 = a
    b0, b1, b2 = b
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def radii_of_curvature(lat: float) -> tuple[float, float]:
    """Meridian (R_N) and transverse (R_E) radii of curvature in metres."""
    if not abs(lat) <= math.pi / 2:
        raise DomainError(f"latitude {lat} rad outside [-pi/2, pi/2]")
    s2 = math.sin(lat) ** 2
    d = 1.0 - E2 * s2
    r_n = A * (1.0 - E2) / d**1.5
    r_e = A / math.sqrt(d)
    return r_n, r_e


def pos_transform_jacobian(lat: float, alt: float) -> np.ndarray:
    """Map a small NED displacement (m) to a (lat, lon, alt) increment."""
    if abs(lat) > math.pi / 2 or math.pi / 2 - abs(lat) < POLE_GUARD:
        raise SingularJacobianError(f"position Jacobian singular at latitude {lat} rad")
    r_n, r_e = radii_of_curvature(lat)
    return np.diag([1.0 / (r_n + alt), 1.0 / ((r_e + alt) * math.cos(lat)), -1.0])


def euler_to_dcm(roll: float, pitch: float, yaw: float) -> Dcm:
    """Body-to-NED DCM from ZYX (yaw, pitch, roll) Euler angles."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    m = np.array([
        [cp * cy, -cr * sy + sr * sp * cy, sr * sy + cr * sp * cy],
        [cp * sy, cr * cy + sr * sp * sy, -sr * cy + cr * sp * sy],
        [-sp, sr * cp, cr * cp],
    ])
    return Dcm(m, "b", "n")


def dcm_to_euler(c) -> tuple[float, float, float]:
    """(roll, pitch, yaw) of a body-to-NED DCM."""
    m = np.asarray(c)
    roll = math.atan2(m[2, 1], m[2, 2])
    pitch = -math.asin(min(1.0, max(-1.0, m[2, 0])))
    yaw = math.atan2(m[1, 0], m[0, 0])
    return roll, pitch, yaw


def dcm_n_to_e(lat: float, lon: float) -> Dcm:
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    m = np.array([
        [-sl * co, -so, -cl * co],
        [-sl * so, co, -cl * so],
        [cl, 0.0, -sl],
    ])
    return Dcm(m, "n", "e")


def lla_to_ecef(p: GeodeticPosition) -> np.ndarray:
    sl, cl = math.sin(p.lat), math.cos(p.lat)
    r_e = A / math.sqrt(1.0 - E2 * sl * sl)
    return np.array([
        (r_e + p.alt) * cl * math.cos(p.lon),
        (r_e + p.alt) * cl * math.sin(p.lon),
        ((1.0 - E2) * r_e + p.alt) * sl,
    ])


def ecef_to_lla(r) -> GeodeticPosition:
    x, y, z = (float(v) for v in r)
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise DomainError("non-finite ECEF position")
    if math.sqrt(x * x + y * y + z * z) < MIN_ECEF_RADIUS:
        raise DomainError("ECEF position too close to the geocentre")
    rho = math.hypot(x, y)
    lon = math.atan2(y, x)
    lat = math.atan2(z, rho * (1.0 - E2))
    for _ in range(50):
        sl = math.sin(lat)
        r_e = A / math.sqrt(1.0 - E2 * sl * sl)
        new = math.atan2(z + E2 * r_e * sl, rho)
        done = abs(new - lat) < 1e-13
        lat = new
        if done:
            break
    sl, cl = math.sin(lat), math.cos(lat)
    r_e = A / math.sqrt(1.0 - E2 * sl * sl)
    # the better-conditioned height expression depends on latitude
    if cl > 0.5:
        alt = rho / cl - r_e
    else:
        alt = z / sl - (1.0 - E2) * r_e
    return GeodeticPosition(lat, lon, alt)


def gravity_ecef(r) -> np.ndarray:
    """J2 gravitation plus centrifugal acceleration at an ECEF position."""
    r = np.asarray(r, dtype=float)
    mag = float(np.linalg.norm(r))
    if not math.isfinite(mag) or mag < MIN_ECEF_RADIUS:
        raise DomainError("ECEF position too close to the geocentre")
    x, y, z = r
    zs = 5.0 * (z / mag) ** 2
    k = 1.5 * J2 * (A / mag) ** 2
    gamma = -MU / mag**3 * np.array([
        x * (1.0 + k * (1.0 - zs)),
        y * (1.0 + k * (1.0 - zs)),
        z * (1.0 + k * (3.0 - zs)),
    ])
    return gamma + OMEGA_IE**2 * np.array([x, y, 0.0])


def dcm_delta_to_rotrate(delta, dt: float, compensate: bool = True) -> np.ndarray:
    """Average rotation rate (rad/s) encoded by a delta DCM over ``dt``.

    ``delta`` is ``C(t)^T C(t - dt)``.  The antisymmetric part gives
    ``sin(angle) * axis``; the ``angle / sin(angle)`` factor restores the full
    rotation so that single-axis rotations are recovered exactly.
    """
    if not dt > 0.0:
        raise DomainError(f"time step must be positive, got {dt}")
    m = np.asarray(delta, dtype=float)
    w = np.array([m[1, 2] - m[2, 1], m[2, 0] - m[0, 2], m[0, 1] - m[1, 0]]) / (2.0 * dt)
    if not compensate:
        return w
    c = 0.5 * (m[0, 0] + m[1, 1] + m[2, 2] - 1.0)
    if not -1.0 - ACOS_TOL <= c <= 1.0 + ACOS_TOL:
        raise NumericError(f"delta DCM trace gives cos(angle) = {c!r}")
    c = min(1.0, max(-1.0, c))
    # atan2 keeps the angle accurate where acos(c) is ill-conditioned
    s = 0.5 * math.sqrt((m[1, 2] - m[2, 1]) ** 2 + (m[2, 0] - m[0, 2]) ** 2
                        + (m[0, 1] - m[1, 0]) ** 2)
    sc = math.atan2(s, c)
    if abs(sc) < EPS_ANGLE:
        return w
    return (sc / math.sin(sc)) * w
