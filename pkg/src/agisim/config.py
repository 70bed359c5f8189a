"""Run configuration: a strict line-based ``section.key = value`` format.

Grammar, one statement per line::

    # comment (also allowed after a value)
    section.key = value

Values are numbers (``0.1``, ``-3e-4``), booleans (``true``/``false``),
strings (bare words or double-quoted) and bracketed lists (``[0, 0, 0.1]``,
``[z, y, x]``).  Unknown sections or keys, repeated keys and values of the
wrong type are errors that carry the line number.  Anything not set takes the
reference defaults: the nominal IMU error budget and the reference gimbal.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .errors import AgisimError, ConfigError
from .geodesy import GeodeticPosition, euler_to_dcm
from .gimbal import AxisProfile, GimbalConfig
from .imu_error import (
    B_A,
    B_G,
    SCALE_G_G,
    SCALE_M_A,
    SCALE_M_G,
    W_A,
    W_G,
    ImuErrorParams,
    default_params,
    zero_params,
)
from .ingest import (
    DEFAULT_COLUMNS,
    DEFAULT_PORT,
    FlightPlan,
    PoseSample,
    StreamConfig,
    listen_udp,
    read_trajectory_file,
    synth_maneuver,
    synth_stationary,
    takeoff_plan,
    validate_stream,
)
from .verifier import AidingConfig

TRAJECTORY_KINDS = ("stationary", "straight", "climb", "coordinated-turn", "takeoff")

# type tags: int, float, bool, str, vec3 (three floats), strs (list of words)
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "run": {
        "seed": ("int", 0),
        "id": ("str", "run"),
    },
    "trajectory": {
        "source": ("str", "synthetic"),
        "kind": ("str", "stationary"),
        "duration": ("float", 60.0),
        "rate": ("float", 50.0),
        "tolerance": ("float", 0.1),
        "lat_deg": ("float", 35.0),
        "lon_deg": ("float", 52.0),
        "alt": ("float", 1200.0),
        "attitude": ("vec3", (0.0, 0.0, 0.0)),
        "speed": ("float", 50.0),
        "heading": ("float", 0.0),
        "climb_angle": ("float", 0.1),
        "turn_radius": ("float", 500.0),
        "banked": ("bool", False),
        "path": ("str", ""),
        "columns": ("strs", DEFAULT_COLUMNS),
        "alt_offset": ("float", 0.0),
        "max_speed": ("float", 400.0),
        "port": ("int", DEFAULT_PORT),
        "host": ("str", "127.0.0.1"),
        "idle_timeout": ("float", 5.0),
    },
    "gimbal": {
        "enabled": ("bool", True),
        "l_pt": ("float", 0.1),
        "l_tr": ("float", 0.1),
        "lever_pt": ("vec3", None),
        "lever_tr": ("vec3", None),
        "lever_imu": ("vec3", (0.0, 0.0, 0.0)),
        "pan_period": ("float", 4.0),
        "pan_amplitude": ("float", math.pi / 6),
        "pan_offset": ("float", 0.0),
        "tilt_period": ("float", 6.0),
        "tilt_amplitude": ("float", math.pi / 6),
        "tilt_offset": ("float", 0.0),
        "roll_period": ("float", 10.0),
        "roll_amplitude": ("float", math.pi / 12),
        "roll_offset": ("float", 0.0),
        "axes": ("strs", ("z", "y", "x")),
        "mount": ("vec3", (0.0, 0.0, 0.0)),
        "imu_mount": ("vec3", (0.0, 0.0, 0.0)),
    },
    "imu": {
        "enabled": ("bool", True),
        "b_a": ("vec3", B_A),
        "b_g": ("vec3", B_G),
        "scale_m_a": ("float", SCALE_M_A),
        "scale_m_g": ("float", SCALE_M_G),
        "scale_g_g": ("float", SCALE_G_G),
        "w_a": ("float", W_A),
        "w_g": ("float", W_G),
    },
    "aiding": {
        "enabled": ("bool", False),
        "rate": ("float", 1.0),
        "sigma_pos": ("float", 2.0),
        "sigma_vel": ("float", 0.1),
        "mode": ("str", "hard"),
        "blend": ("float", 1.0),
    },
    "verify": {
        "settle": ("float", 5.0),
        "max_pos_rmse": ("float", 5.0),
        "max_vel_rmse": ("float", 0.5),
        "max_heading_rmse": ("float", 0.01),
    },
}

_LINE = re.compile(r"^\s*([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*=\s*(.*?)\s*$")
_WORD = re.compile(r"^[A-Za-z_][\w\-./]*$")


def _strip_comment(text: str) -> str:
    out, quoted = [], False
    for ch in text:
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def _scalar(raw: str):
    """Number, bool or string; ``None`` when the token is not a valid literal."""
    if len(raw) >= 2 and raw[0] == raw[-1] == '"':
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        value = float(raw)
    except ValueError:
        return raw if _WORD.match(raw) else None
    return value


def _literal(raw: str):
    if raw.startswith("["):
        if not raw.endswith("]"):
            return None
        inner = raw[1:-1].strip()
        items = [_scalar(x.strip()) for x in inner.split(",")] if inner else []
        return None if any(x is None for x in items) else items
    return _scalar(raw)


def _coerce(kind: str, value, where: str):
    def bad():
        return ConfigError(f"{where} expects {kind}, got {value!r}")

    is_num = isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise bad()
    if kind == "float":
        if is_num and math.isfinite(value):
            return float(value)
        raise bad()
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise bad()
    if kind == "str":
        if isinstance(value, str):
            return value
        raise bad()
    if kind == "vec3":
        if (isinstance(value, list) and len(value) == 3
                and all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
                        for x in value)):
            return tuple(float(x) for x in value)
        raise bad()
    if kind == "strs":
        if isinstance(value, list) and value and all(isinstance(x, str) for x in value):
            return tuple(value)
        raise bad()
    raise AssertionError(kind)


def parse_values(text: str) -> tuple[dict[str, dict[str, Any]], dict[str, int]]:
    """Parse config text into typed values; returns ``(values, line_of_key)``."""
    values: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line).strip()
        if not body:
            continue
        m = _LINE.match(body)
        if not m:
            raise ConfigError("expected 'section.key = value'", line=lineno)
        section, key, raw = m.groups()
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}", line=lineno)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}", line=lineno)
        name = f"{section}.{key}"
        if name in lines:
            raise ConfigError(f"{name} already set on line {lines[name]}", line=lineno)
        if not raw:
            raise ConfigError(f"{name} has no value", line=lineno)
        value = _literal(raw)
        if value is None:
            raise ConfigError(f"cannot read value {raw!r} for {name}", line=lineno)
        kind = SCHEMA[section][key][0]
        try:
            values[section][key] = _coerce(kind, value, name)
        except ConfigError as exc:
            raise ConfigError(str(exc), line=lineno) from None
        lines[name] = lineno
    return values, lines


@dataclass(frozen=True)
class TrajectoryConfig:
    source: str
    kind: str
    duration: float
    start: GeodeticPosition
    attitude: tuple[float, float, float]
    speed: float
    heading: float
    climb_angle: float
    turn_radius: float
    banked: bool
    path: str


@dataclass(frozen=True)
class VerifyConfig:
    settle: float = 5.0
    max_pos_rmse: float = 5.0
    max_vel_rmse: float = 0.5
    max_heading_rmse: float = 0.01


@dataclass(frozen=True, eq=False)
class RunConfig:
    seed: int
    run_id: str
    trajectory: TrajectoryConfig
    stream: StreamConfig
    gimbal: GimbalConfig
    imu_enabled: bool
    imu: ImuErrorParams
    aiding: AidingConfig
    verify: VerifyConfig
    resolved: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "RunConfig":
        return build_config(self.resolved, seed=seed)


def _merged(values: dict, defaults: dict | None) -> dict:
    out = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for name, value in (defaults or {}).items():
        section, key = name.split(".")
        out[section][key] = _coerce(SCHEMA[section][key][0], list(value) if isinstance(value, tuple) else value,
                                    name)
    for section, keys in values.items():
        out[section].update(keys)
    return out


class _Section:
    """Tag configuration errors raised while building one section."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, ConfigError) and not hasattr(exc, "section"):
            exc.section = self.name
        return False


def build_config(v: dict, seed: int | None = None) -> RunConfig:
    """Assemble a :class:`RunConfig` from fully merged section values."""
    if seed is not None:
        v = {s: dict(k) for s, k in v.items()}
        v["run"]["seed"] = seed
    run, tr, gm, im, ad, ve = (v[s] for s in ("run", "trajectory", "gimbal", "imu", "aiding", "verify"))
    with _Section("run"):
        if run["seed"] < 0:
            raise ConfigError("run.seed must be non-negative")
    with _Section("trajectory"):
        if tr["kind"] not in TRAJECTORY_KINDS:
            raise ConfigError(f"trajectory.kind must be one of {TRAJECTORY_KINDS}, got {tr['kind']!r}")
        if not tr["duration"] > 0:
            raise ConfigError("trajectory.duration must be positive")
        if tr["source"] == "file" and not tr["path"]:
            raise ConfigError("trajectory.path is required for a file source")
        stream = StreamConfig(source=tr["source"], rate=tr["rate"], tolerance=tr["tolerance"],
                              columns=tr["columns"], alt_offset=tr["alt_offset"], max_speed=tr["max_speed"],
                              port=tr["port"], host=tr["host"], idle_timeout=tr["idle_timeout"])
        try:
            start = GeodeticPosition.from_degrees(tr["lat_deg"], tr["lon_deg"], tr["alt"])
        except AgisimError as exc:
            raise ConfigError(f"trajectory start: {exc}") from None
        traj = TrajectoryConfig(tr["source"], tr["kind"], tr["duration"], start, tr["attitude"], tr["speed"],
                                tr["heading"], tr["climb_angle"], tr["turn_radius"], tr["banked"], tr["path"])
    with _Section("gimbal"):
        gimbal = GimbalConfig(
            enabled=gm["enabled"], l_pt=gm["l_pt"], l_tr=gm["l_tr"],
            lever_pt=gm["lever_pt"], lever_tr=gm["lever_tr"], lever_imu=gm["lever_imu"],
            pan=AxisProfile(gm["pan_period"], gm["pan_amplitude"], gm["pan_offset"]),
            tilt=AxisProfile(gm["tilt_period"], gm["tilt_amplitude"], gm["tilt_offset"]),
            roll=AxisProfile(gm["roll_period"], gm["roll_amplitude"], gm["roll_offset"]),
            axes=gm["axes"],
            mount=euler_to_dcm(*gm["mount"]).matrix,
            imu_mount=euler_to_dcm(*gm["imu_mount"]).matrix,
        )
    with _Section("imu"):
        if im["enabled"]:
            imu = default_params(run["seed"], b_a=im["b_a"], b_g=im["b_g"], w_a=im["w_a"], w_g=im["w_g"],
                                 scale_m_a=im["scale_m_a"], scale_m_g=im["scale_m_g"],
                                 scale_g_g=im["scale_g_g"])
        else:
            imu = zero_params(run["seed"])
    with _Section("aiding"):
        aiding = AidingConfig(ad["enabled"], ad["rate"], ad["sigma_pos"], ad["sigma_vel"], ad["mode"],
                              ad["blend"])
    with _Section("verify"):
        if not ve["settle"] >= 0:
            raise ConfigError("verify.settle must be non-negative")
        verify = VerifyConfig(**ve)
    resolved = {s: dict(k) for s, k in v.items()}
    return RunConfig(run["seed"], run["id"], traj, stream, gimbal, im["enabled"], imu, aiding, verify, resolved)


def parse_config(text: str, defaults: dict[str, Any] | None = None) -> RunConfig:
    """Parse and validate a run configuration.

    ``defaults`` maps ``"section.key"`` to values that replace the built-in
    defaults (used by the scenario commands); explicit lines still win.
    """
    values, lines = parse_values(text)
    merged = _merged(values, defaults)
    try:
        return build_config(merged)
    except ConfigError as exc:
        line = exc.line or _blame(str(exc), getattr(exc, "section", None), lines)
        raise ConfigError(str(exc), line=line) from None


def _blame(message: str, section: str | None, lines: dict[str, int]) -> int | None:
    """Line of the configured key an invariant error most likely refers to."""
    if section is None:
        return None
    own = {name.split(".")[1]: ln for name, ln in lines.items() if name.startswith(section + ".")}
    text = message.replace(" ", "_")
    named = [ln for key, ln in own.items() if re.search(rf"(?<![A-Za-z]){re.escape(key)}(?![A-Za-z])", text)]
    if named:
        return min(named)
    return min(own.values()) if own else None


def load_config(path: str | Path | None, defaults: dict[str, Any] | None = None) -> RunConfig:
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, defaults)


def build_trajectory(cfg: RunConfig) -> Iterator[PoseSample]:
    """Validated platform pose stream described by the configuration."""
    tr, stream = cfg.trajectory, cfg.stream
    if stream.source == "file":
        samples = read_trajectory_file(tr.path, stream)
    elif stream.source == "udp":
        limit = int(round(tr.duration * stream.rate)) + 1
        samples = iter(listen_udp(stream.port, stream, max_samples=limit))
    elif tr.kind == "stationary":
        samples = synth_stationary(tr.start, tr.attitude, tr.duration, stream.rate)
    elif tr.kind == "takeoff":
        plan: FlightPlan = takeoff_plan(tr.start, banked=tr.banked)
        samples = _clip(plan.sample(stream.rate), tr.duration)
    else:
        params = {"start": tr.start, "speed": tr.speed, "heading": tr.heading, "banked": tr.banked}
        if tr.kind == "climb":
            params["climb_angle"] = tr.climb_angle
        elif tr.kind == "coordinated-turn":
            params["turn_radius"] = tr.turn_radius
        samples = synth_maneuver(tr.kind, params, tr.duration, stream.rate)
    return validate_stream(samples, stream)


def _clip(samples, duration):
    for s in samples:
        if s.t > duration + 1e-9:
            return
        yield s
