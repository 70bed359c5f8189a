"""IMU error model: bias, scale/cross-coupling, g-dependent bias, white noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AgisimError, ConfigError
from .kinematics import TruthInertial

# reference error budget
B_A = (0.009, -0.013, 0.008)                 # m/s^2
B_G = (-0.175e-3, 0.252e-3, 0.155e-3)        # rad/s
SCALE_M_A = 5e-3
SCALE_M_G = 3e-3
SCALE_G_G = 1e-5                             # rad s / m
W_A = 7.845e-4                               # m/s^1.5
W_G = 2.327e-6                               # rad/s^0.5

SANITY_FACTOR = 10.0


def _arr(x, shape, name):
    a = np.array(x, dtype=float).reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImuErrorParams:
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m_a: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    m_g: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    g_g: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    w_a: float = 0.0
    w_g: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name, shape in (("b_a", 3), ("b_g", 3), ("m_a", (3, 3)), ("m_g", (3, 3)), ("g_g", (3, 3))):
            object.__setattr__(self, name, _arr(getattr(self, name), shape, name))
        if np.any(np.tril(self.m_g, -1) != 0.0):
            raise ConfigError("m_g must be upper triangular")
        if not (self.w_a >= 0.0 and self.w_g >= 0.0):
            raise ConfigError("noise root-PSDs must be non-negative")
        limits = (
            ("b_a", np.max(np.abs(self.b_a)), max(map(abs, B_A))),
            ("b_g", np.max(np.abs(self.b_g)), max(map(abs, B_G))),
            ("m_a", np.max(np.abs(self.m_a)), SCALE_M_A),
            ("m_g", np.max(np.abs(self.m_g)), SCALE_M_G),
            ("g_g", np.max(np.abs(self.g_g)), SCALE_G_G),
            ("w_a", self.w_a, W_A),
            ("w_g", self.w_g, W_G),
        )
        for name, value, ref in limits:
            if value > SANITY_FACTOR * ref:
                raise ConfigError(f"{name} magnitude {value:.3g} exceeds {SANITY_FACTOR:g}x the reference {ref:.3g}")

    def without_noise(self) -> "ImuErrorParams":
        return replace(self, w_a=0.0, w_g=0.0)

    def as_dict(self) -> dict:
        return {
            "b_a": self.b_a.tolist(), "b_g": self.b_g.tolist(),
            "m_a": self.m_a.tolist(), "m_g": self.m_g.tolist(), "g_g": self.g_g.tolist(),
            "w_a": self.w_a, "w_g": self.w_g, "seed": self.seed,
        }


def zero_params(seed: int = 0) -> ImuErrorParams:
    return ImuErrorParams(seed=seed)


def default_params(seed: int = 0, *, b_a=B_A, b_g=B_G, w_a=W_A, w_g=W_G,
                   scale_m_a=SCALE_M_A, scale_m_g=SCALE_M_G, scale_g_g=SCALE_G_G) -> ImuErrorParams:
    """Reference error budget with matrices drawn uniformly on [-1, 1] x scale.

    Draw order from ``numpy.random.default_rng(seed)``: M_a (9), M_g (9, lower
    triangle discarded), G_g (9).
    """
    rng = np.random.default_rng(seed)
    m_a = scale_m_a * rng.uniform(-1.0, 1.0, (3, 3))
    m_g = scale_m_g * np.triu(rng.uniform(-1.0, 1.0, (3, 3)))
    g_g = scale_g_g * rng.uniform(-1.0, 1.0, (3, 3))
    return ImuErrorParams(b_a, b_g, m_a, m_g, g_g, w_a, w_g, seed)


def noise_rng(params: ImuErrorParams) -> np.random.Generator:
    """Noise generator for a run, independent of the matrix draws."""
    return np.random.default_rng([params.seed, 1])


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    dt: float
    f: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("f", "omega"):
            a = np.array(getattr(self, name), dtype=float).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dv(self) -> np.ndarray:
        return self.f * self.dt

    @property
    def dtheta(self) -> np.ndarray:
        return self.omega * self.dt


def corrupt(truth: TruthInertial, params: ImuErrorParams, rng: np.random.Generator) -> ImuSample:
    """Apply the error model to one truth sample.

    Draws exactly six standard normals from ``rng`` (accelerometer x, y, z
    then gyro x, y, z), whatever the noise levels.
    """
    if not truth.dt > 0:
        raise AgisimError("dt must be positive")
    n = rng.standard_normal(6)
    root_dt = math.sqrt(truth.dt)
    f = params.b_a + (truth.f + params.m_a @ truth.f) + (params.w_a / root_dt) * n[:3]
    w = (params.b_g + (truth.omega + params.m_g @ truth.omega) + params.g_g @ truth.f
         + (params.w_g / root_dt) * n[3:])
    return ImuSample(truth.t, truth.dt, f, w)


class ImuErrorModel:
    def __init__(self, params: ImuErrorParams, rng: np.random.Generator | None = None):
        self.params = params
        self.rng = noise_rng(params) if rng is None else rng

    def corrupt(self, truth: TruthInertial) -> ImuSample:
        return corrupt(truth, self.params, self.rng)


MIN_ALLAN_SAMPLES = 2**14


def allan_deviation(x, dt: float, m=None) -> tuple[np.ndarray, np.ndarray]:
    """Overlapping Allan deviation of a rate series sampled every ``dt``.

    ``m`` lists averaging factors (cluster sizes); the default is octave
    spacing up to a tenth of the record.  Returns ``(tau, adev)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < MIN_ALLAN_SAMPLES:
        raise AgisimError(f"Allan deviation needs at least {MIN_ALLAN_SAMPLES} samples, got {n}")
    if m is None:
        m = 2 ** np.arange(int(math.log2(n // 10)) + 1)
    m = np.unique(np.asarray(m, dtype=int))
    if np.any(m < 1) or np.any(2 * m >= n):
        raise AgisimError("averaging factors must satisfy 1 <= m < n/2")
    phase = np.concatenate([[0.0], np.cumsum(x) * dt])
    adev = np.empty(m.size)
    for j, k in enumerate(m):
        tau = k * dt
        d = phase[2 * k:] - 2.0 * phase[k:-k] + phase[:-2 * k]
        adev[j] = math.sqrt(np.mean(d * d) / (2.0 * tau * tau))
    return m * dt, adev
