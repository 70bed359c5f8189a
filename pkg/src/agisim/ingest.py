"""Platform trajectory sources: UDP telemetry, trajectory files, synthetic flight.

Every source yields :class:`PoseSample` objects.  Records on the wire and in
files share one format: a single ASCII CSV line per sample whose columns are
described by :attr:`StreamConfig.columns`.
"""

from __future__ import annotations

import logging
import math
import queue
import re
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    AgisimError,
    ConfigError,
    DomainError,
    FieldParseError,
    GapError,
    IngestError,
    MalformedRecordError,
    NonMonotonicTimeError,
    SampleValidationError,
)
from .geodesy import GeodeticPosition, Dcm, dcm_to_euler, euler_to_dcm, radii_of_curvature

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = (
    "time_s", "lat_deg", "lon_deg", "alt_m",
    "vN_mps", "vE_mps", "vD_mps",
    "roll_rad", "pitch_rad", "yaw_rad",
)
DEFAULT_PORT = 5138
FT = 0.3048

# column name -> (quantity, scale to SI)
_UNITS = {
    "time_s": ("t", 1.0),
    "lat_deg": ("lat", math.pi / 180), "lat_rad": ("lat", 1.0),
    "lon_deg": ("lon", math.pi / 180), "lon_rad": ("lon", 1.0),
    "alt_m": ("alt", 1.0), "alt_ft": ("alt", FT),
    "vN_mps": ("vn", 1.0), "vN_fps": ("vn", FT),
    "vE_mps": ("ve", 1.0), "vE_fps": ("ve", FT),
    "vD_mps": ("vd", 1.0), "vD_fps": ("vd", FT),
    "roll_rad": ("roll", 1.0), "roll_deg": ("roll", math.pi / 180),
    "pitch_rad": ("pitch", 1.0), "pitch_deg": ("pitch", math.pi / 180),
    "yaw_rad": ("yaw", 1.0), "yaw_deg": ("yaw", math.pi / 180),
    "skip": (None, 0.0),
}
_QUANTITIES = ("t", "lat", "lon", "alt", "vn", "ve", "vd", "roll", "pitch", "yaw")
_NUMBER = re.compile(rb"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?:nan|inf|infinity)", re.IGNORECASE)


class UdpBindError(AgisimError, OSError):
    pass


@dataclass(frozen=True, eq=False)
class PoseSample:
    """Pose of a frame relative to local NED at time ``t``.

    ``att`` holds (roll, pitch, yaw) of the body-to-NED rotation.  Either
    ``att`` or ``c_bn`` may be supplied; the other is derived.
    """

    t: float
    pos: GeodeticPosition
    vel_n: np.ndarray
    att: tuple[float, float, float] | None = None
    c_bn: Dcm | None = None

    def __post_init__(self):
        v = np.array(self.vel_n, dtype=float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "vel_n", v)
        if self.att is None and self.c_bn is None:
            raise ValueError("PoseSample needs att or c_bn")
        if self.att is None:
            object.__setattr__(self, "att", dcm_to_euler(self.c_bn))
        else:
            object.__setattr__(self, "att", tuple(float(a) for a in self.att))
        if self.c_bn is None:
            object.__setattr__(self, "c_bn", euler_to_dcm(*self.att))
        if not (math.isfinite(self.t) and np.all(np.isfinite(v)) and all(map(math.isfinite, self.att))):
            raise DomainError("non-finite pose sample")
        if abs(self.att[1]) > math.pi / 2:
            raise DomainError(f"pitch {self.att[1]} outside [-pi/2, pi/2]")

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.vel_n))


@dataclass(frozen=True)
class StreamConfig:
    source: str = "synthetic"
    rate: float = 50.0
    tolerance: float = 0.1
    columns: tuple[str, ...] = DEFAULT_COLUMNS
    alt_offset: float = 0.0
    max_speed: float = 400.0
    port: int = DEFAULT_PORT
    host: str = "127.0.0.1"
    idle_timeout: float = 5.0
    buffer: int = 1024

    def __post_init__(self):
        if self.source not in ("udp", "file", "synthetic"):
            raise ConfigError(f"unknown trajectory source {self.source!r}")
        if not self.rate > 0:
            raise ConfigError("nominal rate must be positive")
        if not 0.0 <= self.tolerance <= 0.5:
            raise ConfigError("rate tolerance must lie in [0, 0.5]")
        if self.buffer < 1:
            raise ConfigError("buffer must hold at least one sample")
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        seen = []
        for c in cols:
            if c not in _UNITS:
                raise ConfigError(f"unknown column {c!r}")
            q = _UNITS[c][0]
            if q is not None:
                if q in seen:
                    raise ConfigError(f"quantity {q!r} mapped twice")
                seen.append(q)
        missing = set(_QUANTITIES) - set(seen)
        if missing:
            raise ConfigError(f"column mapping lacks {sorted(missing)}")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate


def _pose_from_values(vals: dict, offsets: dict, cfg: StreamConfig) -> PoseSample:
    for q in _QUANTITIES:
        if not math.isfinite(vals[q]):
            raise SampleValidationError(f"non-finite value for {q}", offset=offsets[q][0], field=offsets[q][1])
    try:
        pos = GeodeticPosition(vals["lat"], vals["lon"], vals["alt"] + cfg.alt_offset)
    except DomainError as exc:
        raise SampleValidationError(str(exc), offset=offsets["lat"][0], field=offsets["lat"][1]) from None
    if abs(vals["pitch"]) > math.pi / 2:
        raise SampleValidationError("pitch outside [-pi/2, pi/2]",
                                    offset=offsets["pitch"][0], field=offsets["pitch"][1])
    vel = (vals["vn"], vals["ve"], vals["vd"])
    if math.sqrt(sum(v * v for v in vel)) >= cfg.max_speed:
        raise SampleValidationError(f"speed exceeds {cfg.max_speed} m/s",
                                    offset=offsets["vn"][0], field=offsets["vn"][1])
    return PoseSample(vals["t"], pos, vel, (vals["roll"], vals["pitch"], vals["yaw"]))


def parse_fdm_datagram(payload, cfg: StreamConfig = StreamConfig()) -> PoseSample:
    """Parse one CSV telemetry record into a :class:`PoseSample`.

    Raises a subclass of :class:`IngestError` carrying the byte offset and
    field index of the problem; never anything else.
    """
    if isinstance(payload, str):
        payload = payload.encode("utf-8", "surrogateescape")
    data = bytes(payload)
    body = data[:-1] if data.endswith(b"\n") else data
    if body.endswith(b"\r"):
        body = body[:-1]
    if b"\n" in body or b"\r" in body:
        raise MalformedRecordError("record contains more than one line", offset=body.find(b"\n"))
    fields = body.split(b",")
    if len(fields) != len(cfg.columns):
        raise MalformedRecordError(
            f"expected {len(cfg.columns)} fields, got {len(fields)}", offset=len(body), field=len(fields) - 1)
    vals, offsets = {}, {}
    start = 0
    for idx, (raw, col) in enumerate(zip(fields, cfg.columns)):
        text = raw.strip(b" \t")
        q, scale = _UNITS[col]
        if q is not None:
            if not _NUMBER.fullmatch(text):
                raise FieldParseError(f"field {col!r} is not a number", offset=start, field=idx)
            vals[q] = float(text) * scale
            offsets[q] = (start, idx)
        start += len(raw) + 1
    return _pose_from_values(vals, offsets, cfg)


def format_record(sample: PoseSample) -> bytes:
    """Encode a sample in the default column layout (degrees for lat/lon)."""
    p, v, a = sample.pos, sample.vel_n, sample.att
    vals = (sample.t, math.degrees(p.lat), math.degrees(p.lon), p.alt, v[0], v[1], v[2], a[0], a[1], a[2])
    return (",".join(repr(float(x)) for x in vals) + "\n").encode("ascii")


def read_trajectory_file(path, cfg: StreamConfig = StreamConfig()) -> Iterator[PoseSample]:
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(b"#"):
                continue
            try:
                yield parse_fdm_datagram(line, cfg)
            except IngestError as exc:
                msg = str(exc.args[0]).split(" (")[0]
                raise type(exc)(msg, offset=exc.offset, field=exc.field, line=lineno) from None


@dataclass
class UdpStats:
    received: int = 0
    parsed: int = 0
    dropped: int = 0
    timed_out: bool = False


_END = object()


class UdpStream:
    """Bounded single-producer single-consumer stream of datagram samples.

    The socket is bound on construction; a reader thread parses datagrams
    and blocks when the buffer is full.  Iteration ends after
    ``idle_timeout`` seconds without traffic or once ``max_samples`` samples
    have been parsed.
    """

    def __init__(self, port: int, cfg: StreamConfig = StreamConfig(), *,
                 idle_timeout: float | None = None, max_samples: int | None = None,
                 on_datagram: Callable[[bytes], None] | None = None):
        self.cfg = cfg
        self.idle_timeout = cfg.idle_timeout if idle_timeout is None else idle_timeout
        self.max_samples = max_samples
        self.on_datagram = on_datagram
        self.stats = UdpStats()
        self._queue: queue.Queue = queue.Queue(maxsize=cfg.buffer)
        self._stop = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind((cfg.host, port))
        except OSError as exc:
            self._sock.close()
            raise UdpBindError(f"cannot bind UDP {cfg.host}:{port}: {exc}") from exc
        self.port = self._sock.getsockname()[1]
        self._sock.settimeout(min(0.05, self.idle_timeout))
        self._thread = threading.Thread(target=self._run, name=f"udp-{self.port}", daemon=True)
        self._thread.start()

    def _run(self):
        import time
        last = time.monotonic()
        try:
            while not self._stop.is_set():
                try:
                    data, _ = self._sock.recvfrom(65535)
                except socket.timeout:
                    if time.monotonic() - last > self.idle_timeout:
                        self.stats.timed_out = True
                        log.info("UDP idle timeout after %d samples", self.stats.parsed)
                        break
                    continue
                last = time.monotonic()
                self.stats.received += 1
                if self.on_datagram is not None:
                    self.on_datagram(data)
                try:
                    sample = parse_fdm_datagram(data, self.cfg)
                except IngestError as exc:
                    self.stats.dropped += 1
                    log.debug("dropped datagram: %s", exc)
                    continue
                self._put(sample)
                self.stats.parsed += 1
                if self.max_samples is not None and self.stats.parsed >= self.max_samples:
                    break
        finally:
            self._sock.close()
            self._put(_END)

    def _put(self, item):
        while True:
            try:
                self._queue.put(item, timeout=0.1)
                return
            except queue.Full:
                if self._stop.is_set():
                    return

    def __iter__(self) -> Iterator[PoseSample]:
        while True:
            item = self._queue.get()
            if item is _END:
                return
            yield item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def listen_udp(port: int = DEFAULT_PORT, cfg: StreamConfig = StreamConfig(), **kwargs) -> UdpStream:
    return UdpStream(port, cfg, **kwargs)


def validate_stream(samples: Iterable[PoseSample], cfg: StreamConfig = StreamConfig()) -> Iterator[PoseSample]:
    """Pass samples through while enforcing strictly increasing, evenly spaced time."""
    nominal = 1.0 / cfg.rate
    band = cfg.tolerance * nominal + 1e-9 * nominal
    prev = None
    for i, s in enumerate(samples):
        if s.speed >= cfg.max_speed:
            raise SampleValidationError(f"speed {s.speed:.3f} m/s exceeds {cfg.max_speed}")
        if prev is not None:
            dt = s.t - prev.t
            if not dt > 0.0:
                raise NonMonotonicTimeError(f"time not increasing at index {i} (dt={dt})", index=i, dt=dt)
            if abs(dt - nominal) > band:
                raise GapError(f"sample spacing {dt:.6g} s at index {i} outside "
                               f"{nominal:.6g} s +/- {100 * cfg.tolerance:g}%", index=i, dt=dt)
        prev = s
        yield s


def _sample_times(duration: float, rate: float) -> np.ndarray:
    if not duration > 0 or not rate > 0:
        raise ConfigError("duration and rate must be positive")
    n = int(round(duration * rate))
    return np.arange(n + 1) / rate


def synth_stationary(location: GeodeticPosition, attitude=(0.0, 0.0, 0.0),
                     duration: float = 60.0, rate: float = 50.0) -> Iterator[PoseSample]:
    c_bn = euler_to_dcm(*attitude)
    for t in _sample_times(duration, rate):
        yield PoseSample(float(t), location, (0.0, 0.0, 0.0), tuple(attitude), c_bn)


@dataclass(frozen=True)
class FlightSegment:
    """One leg of a synthetic flight.

    ``turn_rate`` (rad/s, positive clockwise seen from above), ``path_angle``
    (rad, positive climbing) and ``accel`` (m/s^2 along track) are the values
    held during the leg; turn rate and path angle blend in from the previous
    leg over the plan's ramp time.
    """

    duration: float
    turn_rate: float = 0.0
    path_angle: float = 0.0
    accel: float = 0.0


G0 = 9.80665


@dataclass
class FlightPlan:
    start: GeodeticPosition
    speed: float
    heading: float = 0.0
    segments: Sequence[FlightSegment] = field(default_factory=list)
    ramp: float = 2.0
    banked: bool = False

    def __post_init__(self):
        if not self.speed > 0:
            raise ConfigError("speed must be positive")
        if not self.segments:
            raise ConfigError("flight plan has no segments")
        for seg in self.segments:
            if not seg.duration > 0:
                raise ConfigError("segment duration must be positive")
            if not abs(seg.path_angle) < math.pi / 2:
                raise ConfigError("path angle must lie strictly inside (-pi/2, pi/2)")
        if self.ramp < 0:
            raise ConfigError("ramp time must be non-negative")
        self._starts = np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @property
    def duration(self) -> float:
        return float(self._starts[-1])

    def _blend(self, t: float, attr: str) -> float:
        k = min(int(np.searchsorted(self._starts, t, side="right")) - 1, len(self.segments) - 1)
        target = getattr(self.segments[k], attr)
        prev = getattr(self.segments[k - 1], attr) if k > 0 else target
        if self.ramp == 0.0 or prev == target:
            return target
        s = min(1.0, max(0.0, (t - self._starts[k]) / self.ramp))
        return prev + (target - prev) * s * s * (3.0 - 2.0 * s)

    def turn_rate(self, t: float) -> float:
        return self._blend(t, "turn_rate")

    def path_angle(self, t: float) -> float:
        return self._blend(t, "path_angle")

    def accel(self, t: float) -> float:
        k = min(int(np.searchsorted(self._starts, t, side="right")) - 1, len(self.segments) - 1)
        return self.segments[k].accel

    def _rhs(self, t, y):
        lat, lon, h, psi, v = y
        gamma = self.path_angle(t)
        r_n, r_e = radii_of_curvature(lat)
        horiz = v * math.cos(gamma)
        return [
            horiz * math.cos(psi) / (r_n + h),
            horiz * math.sin(psi) / ((r_e + h) * math.cos(lat)),
            v * math.sin(gamma),
            self.turn_rate(t),
            self.accel(t),
        ]

    def sample(self, rate: float = 50.0) -> Iterator[PoseSample]:
        times = _sample_times(self.duration, rate)
        y0 = [self.start.lat, self.start.lon, self.start.alt, self.heading, self.speed]
        for k, seg in enumerate(self.segments):
            t0, t1 = self._starts[k], self._starts[k + 1]
            last = k == len(self.segments) - 1
            mask = (times >= t0) & ((times <= t1) if last else (times < t1))
            t_eval = np.append(times[mask], t1) if not last else times[mask]
            sol = solve_ivp(self._rhs, (t0, t1), y0, method="DOP853", t_eval=t_eval,
                            rtol=1e-12, atol=[1e-15, 1e-15, 1e-9, 1e-13, 1e-11],
                            max_step=1.0)
            if not sol.success:
                raise AgisimError(f"trajectory integration failed: {sol.message}")
            n_out = int(mask.sum())
            for j in range(n_out):
                yield self._pose(float(times[mask][j]), sol.y[:, j])
            y0 = sol.y[:, -1]
            if y0[4] <= 0:
                raise ConfigError(f"speed dropped to {y0[4]:.3f} m/s by t={t1}")

    def _pose(self, t: float, y) -> PoseSample:
        lat, lon, h, psi, v = (float(x) for x in y)
        gamma = self.path_angle(t)
        vel = (v * math.cos(gamma) * math.cos(psi), v * math.cos(gamma) * math.sin(psi), -v * math.sin(gamma))
        roll = math.atan(v * self.turn_rate(t) * math.cos(gamma) / G0) if self.banked else 0.0
        yaw = math.atan2(math.sin(psi), math.cos(psi))
        return PoseSample(t, GeodeticPosition(lat, lon, h), vel, (roll, gamma, yaw))


MANEUVERS = ("straight", "climb", "coordinated-turn")


def synth_maneuver(profile: str, params: dict | None = None, duration: float = 60.0,
                   rate: float = 50.0) -> Iterator[PoseSample]:
    """Single-profile synthetic flight.

    ``params`` keys: ``start`` (GeodeticPosition), ``speed`` (m/s),
    ``heading`` (rad), ``climb_angle`` (rad, climb only), ``turn_radius``
    (m, turn only, negative turns left) and ``banked`` (bool).
    """
    p = dict(params or {})
    start = p.pop("start", GeodeticPosition.from_degrees(35.0, 52.0, 1200.0))
    speed = float(p.pop("speed", 50.0))
    heading = float(p.pop("heading", 0.0))
    banked = bool(p.pop("banked", False))
    if not speed > 0:
        raise ConfigError("speed must be positive")
    if profile == "straight":
        seg = FlightSegment(duration)
    elif profile == "climb":
        gamma = float(p.pop("climb_angle", 0.1))
        if not abs(gamma) < math.pi / 2:
            raise ConfigError("climb angle must lie inside (-pi/2, pi/2)")
        seg = FlightSegment(duration, path_angle=gamma)
    elif profile == "coordinated-turn":
        radius = float(p.pop("turn_radius", 500.0))
        if radius == 0 or not math.isfinite(radius):
            raise ConfigError("turn radius must be non-zero and finite")
        seg = FlightSegment(duration, turn_rate=speed / radius)
    else:
        raise ConfigError(f"unknown maneuver profile {profile!r}; expected one of {MANEUVERS}")
    if p:
        raise ConfigError(f"unexpected maneuver parameters {sorted(p)}")
    plan = FlightPlan(start, speed, heading, [seg], ramp=0.0, banked=banked)
    return plan.sample(rate)


def takeoff_plan(start: GeodeticPosition | None = None, banked: bool = True) -> FlightPlan:
    """200 s climb-out with level-off, a strong turn and a descent leg."""
    start = start or GeodeticPosition.from_degrees(35.0, 52.0, 1200.0)
    segments = [
        FlightSegment(20.0, accel=0.5),
        FlightSegment(40.0, path_angle=0.12),
        FlightSegment(30.0),
        FlightSegment(35.0, turn_rate=0.08),
        FlightSegment(25.0),
        FlightSegment(30.0, turn_rate=-0.05, path_angle=-0.05),
        FlightSegment(20.0),
    ]
    return FlightPlan(start, 50.0, 0.3, segments, ramp=3.0, banked=banked)
