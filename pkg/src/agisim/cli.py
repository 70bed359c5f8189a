"""Command line entry point: ``agisim simulate|scenario|verify|ingest``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import threading
import time
from pathlib import Path

from . import __version__
from .config import RunConfig, build_trajectory, load_config
from .errors import AgisimError, ConfigError, IngestError
from .imu_error import ImuErrorModel
from .ingest import DEFAULT_PORT, StreamConfig, UdpBindError, listen_udp, parse_fdm_datagram, validate_stream
from .io import write_csv
from .pipeline import iter_epochs
from .verifier import run_closed_loop

log = logging.getLogger("agisim")

IMU_HEADER = ("t", "dt", "fx", "fy", "fz", "wx", "wy", "wz", "dvx", "dvy", "dvz", "dthx", "dthy", "dthz")
POSE_HEADER = ("t", "lat", "lon", "alt", "vN", "vE", "vD", "roll", "pitch", "yaw")

EXIT_OK, EXIT_THRESHOLD, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

# overrides applied beneath any user config; errors are off so the plots show pure kinematics
SCENARIOS = {
    "pan": {
        "trajectory.kind": "stationary", "trajectory.duration": 20.0,
        "gimbal.tilt_amplitude": 0.0, "gimbal.roll_amplitude": 0.0,
        "gimbal.lever_imu": (0.1, 0.0, 0.0), "imu.enabled": False,
    },
    "tilt": {
        "trajectory.kind": "stationary", "trajectory.duration": 20.0,
        "gimbal.pan_amplitude": 0.0, "gimbal.roll_amplitude": 0.0,
        "gimbal.lever_imu": (0.1, 0.0, 0.0), "imu.enabled": False,
    },
    "ptr-takeoff": {
        "trajectory.kind": "takeoff", "trajectory.duration": 200.0, "trajectory.banked": True,
        "imu.enabled": False,
    },
}


def _pose_row(p):
    return (p.t, p.pos.lat, p.pos.lon, p.pos.alt, *p.vel_n, *p.att)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(cfg: RunConfig, command: str, out: Path, outputs, inputs) -> None:
    doc = {
        "tool": "agisim",
        "version": __version__,
        "command": command,
        "run_id": cfg.run_id,
        "seed": cfg.seed,
        "config": cfg.resolved,
        "imu_params": cfg.imu.as_dict(),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    text = json.dumps(doc, sort_keys=True, indent=2, default=list) + "\n"
    (out / "manifest.json").write_text(text, encoding="ascii")


def _inputs(args, cfg: RunConfig):
    paths = []
    if args.config:
        paths.append(args.config)
    if cfg.stream.source == "file":
        paths.append(cfg.trajectory.path)
    return paths


def write_simulation(cfg: RunConfig, out: Path, platform: bool = True) -> int:
    """Run the signal pipeline and write imu/truth(/platform) CSVs; returns the IMU row count."""
    out.mkdir(parents=True, exist_ok=True)
    imu_rows, truth_rows, plat_rows = [], [], []
    for ep in iter_epochs(build_trajectory(cfg), cfg.gimbal, ImuErrorModel(cfg.imu)):
        s = ep.imu
        if s is None:
            continue
        imu_rows.append((s.t, s.dt, *s.f, *s.omega, *s.dv, *s.dtheta))
        truth_rows.append(_pose_row(ep.imu_pose))
        plat_rows.append(_pose_row(ep.platform))
    write_csv(out / "imu.csv", IMU_HEADER, imu_rows)
    write_csv(out / "truth.csv", POSE_HEADER, truth_rows)
    if platform:
        write_csv(out / "platform.csv", POSE_HEADER, plat_rows)
    return len(imu_rows)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    n = write_simulation(cfg, out)
    _manifest(cfg, "simulate", out, ["imu.csv", "truth.csv", "platform.csv"], _inputs(args, cfg))
    print(f"wrote {n} IMU samples to {out}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = _config(args, SCENARIOS[args.name])
    out = Path(args.out)
    n = write_simulation(cfg, out)
    _manifest(cfg, f"scenario {args.name}", out, ["imu.csv", "truth.csv", "platform.csv"], _inputs(args, cfg))
    print(f"scenario {args.name}: wrote {n} IMU samples to {out}")
    return EXIT_OK


def check_thresholds(report, verify) -> list[str]:
    r = report.rmse
    fails = []
    for ch in ("pN", "pE", "pD"):
        if not r[ch] < verify.max_pos_rmse:
            fails.append(f"{ch} RMSE {r[ch]:.4g} m >= {verify.max_pos_rmse:g} m")
    for ch in ("vN", "vE", "vD"):
        if not r[ch] < verify.max_vel_rmse:
            fails.append(f"{ch} RMSE {r[ch]:.4g} m/s >= {verify.max_vel_rmse:g} m/s")
    if not r["heading"] < verify.max_heading_rmse:
        fails.append(f"heading RMSE {r['heading']:.4g} rad >= {verify.max_heading_rmse:g} rad")
    return fails


def cmd_verify(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_closed_loop(build_trajectory(cfg), cfg.gimbal, cfg.imu, cfg.aiding, settle=cfg.verify.settle)
    (out / "errors.csv").write_bytes(report.to_csv().encode("ascii"))
    fails = check_thresholds(report, cfg.verify)
    summary = report.summary() + ("PASS\n" if not fails else "".join(f"FAIL {f}\n" for f in fails))
    (out / "summary.txt").write_bytes(summary.encode("ascii"))
    _manifest(cfg, "verify", out, ["errors.csv", "summary.txt"], _inputs(args, cfg))
    sys.stdout.write(summary)
    return EXIT_OK if not fails else EXIT_THRESHOLD


def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream_cfg = StreamConfig(source="udp", rate=args.rate, idle_timeout=args.idle_timeout)
    raw: list[bytes] = []
    try:
        stream = listen_udp(args.port, stream_cfg, on_datagram=raw.append)
    except UdpBindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"listening on {stream_cfg.host}:{stream.port}", file=sys.stderr, flush=True)
    samples = []
    stop = threading.Event()

    def report():
        last = 0
        while not stop.wait(1.0):
            n = stream.stats.parsed
            print(f"{n - last} samples/s, {n} parsed, {stream.stats.dropped} dropped", file=sys.stderr, flush=True)
            last = n

    ticker = threading.Thread(target=report, daemon=True)
    ticker.start()
    deadline = None if args.duration is None else time.monotonic() + args.duration
    try:
        for s in stream:
            samples.append(s)
            if deadline is not None and time.monotonic() >= deadline:
                break
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        stream.close()
    # accepted datagrams verbatim form a replayable trajectory file; rejects are kept for inspection
    accepted, rejected = [], []
    for d in raw:
        try:
            parse_fdm_datagram(d, stream_cfg)
        except IngestError:
            rejected.append(repr(d) + "\n")
            continue
        accepted.append(d if d.endswith(b"\n") else d + b"\n")
    (out / "capture.csv").write_bytes(b"".join(accepted))
    (out / "rejected.txt").write_text("".join(rejected), encoding="ascii")
    write_csv(out / "samples.csv", POSE_HEADER, [_pose_row(s) for s in samples])
    stream_error = None
    try:
        for _ in validate_stream(samples, stream_cfg):
            pass
    except AgisimError as exc:
        stream_error = str(exc)
    stats = {
        "received": stream.stats.received, "parsed": stream.stats.parsed,
        "dropped": stream.stats.dropped, "timed_out": stream.stats.timed_out,
        "samples": len(samples), "stream_valid": stream_error is None, "stream_error": stream_error,
    }
    (out / "stats.json").write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="ascii")
    print(f"captured {len(samples)} samples ({stream.stats.dropped} dropped) to {out}")
    if not samples:
        print("error: idle timeout with no samples received", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _config(args, defaults=None) -> RunConfig:
    cfg = load_config(args.config, defaults)
    return cfg if args.seed is None else cfg.with_seed(args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agisim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"agisim {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out):
        p.add_argument("--config", metavar="PATH", help="run configuration file")
        p.add_argument("--seed", type=int, metavar="N", help="override run.seed")
        p.add_argument("--out", metavar="DIR", default=out, help=f"output directory (default: {out})")

    p = sub.add_parser("simulate", help="generate IMU signals and truth for a configured trajectory")
    common(p, "out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", help="run a reference gimbal scenario")
    p.add_argument("name", choices=sorted(SCENARIOS))
    common(p, "out")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("verify", help="closed-loop strapdown check of simulated IMU output")
    common(p, "out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ingest", help="capture a UDP telemetry feed")
    common(p, "capture")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    p.add_argument("--rate", type=float, default=50.0, help="nominal feed rate for validation (Hz)")
    p.add_argument("--idle-timeout", type=float, default=5.0)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AgisimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
