import hashlib
import json
import math
import socket
import threading
import time

import numpy as np
import pytest

from agisim.cli import main
from agisim.geodesy import OMEGA_IE

STATIONARY_10S = "trajectory.duration = 10\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def load(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = write(root, "run.cfg", STATIONARY_10S)
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(root / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(root / "b")]) == 0
    return root


class TestSimulate:
    def test_row_count(self, sim_dir):
        for name in ("imu.csv", "truth.csv", "platform.csv"):
            assert len((sim_dir / "a" / name).read_text().splitlines()) == 1 + 499

    def test_headers(self, sim_dir):
        imu = (sim_dir / "a" / "imu.csv").read_text().splitlines()[0]
        assert imu == "t,dt,fx,fy,fz,wx,wy,wz,dvx,dvy,dvz,dthx,dthy,dthz"
        assert (sim_dir / "a" / "truth.csv").read_text().splitlines()[0] == "t,lat,lon,alt,vN,vE,vD,roll,pitch,yaw"

    def test_byte_identical(self, sim_dir):
        for name in ("imu.csv", "truth.csv", "platform.csv", "manifest.json"):
            assert (sim_dir / "a" / name).read_bytes() == (sim_dir / "b" / name).read_bytes()

    def test_seed_changes_output(self, sim_dir, tmp_path):
        cfg = write(tmp_path, "run.cfg", STATIONARY_10S)
        main(["simulate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "c")])
        assert (tmp_path / "c" / "imu.csv").read_bytes() != (sim_dir / "a" / "imu.csv").read_bytes()

    def test_number_format(self, sim_dir):
        data = (sim_dir / "a" / "imu.csv").read_bytes()
        assert b"\r" not in data
        for field in data.splitlines()[1].split(b","):
            x = float(field)
            assert field.decode() == "%.17g" % x

    def test_rows_aligned(self, sim_dir):
        imu, truth, plat = (load(sim_dir / "a" / n) for n in ("imu.csv", "truth.csv", "platform.csv"))
        np.testing.assert_array_equal(imu[:, 0], truth[:, 0])
        np.testing.assert_array_equal(imu[:, 0], plat[:, 0])
        assert imu[0, 0] == pytest.approx(0.04)
        np.testing.assert_array_equal(imu[:, 8:11], imu[:, 2:5] * imu[:, 1:2])
        np.testing.assert_array_equal(imu[:, 11:14], imu[:, 5:8] * imu[:, 1:2])

    def test_manifest(self, sim_dir):
        text = (sim_dir / "a" / "manifest.json").read_text()
        doc = json.loads(text)
        assert json.dumps(doc, sort_keys=True, indent=2) + "\n" == text
        assert doc["seed"] == 4
        assert len(doc["imu_params"]["m_g"]) == 3 and doc["imu_params"]["m_g"][2][0] == 0.0
        assert doc["version"]
        for name, digest in doc["outputs"].items():
            assert hashlib.sha256((sim_dir / "a" / name).read_bytes()).hexdigest() == digest
        assert len(doc["inputs"]) == 1

    def test_manifest_reproduces_params(self, sim_dir):
        from agisim.imu_error import default_params
        doc = json.loads((sim_dir / "a" / "manifest.json").read_text())
        np.testing.assert_array_equal(doc["imu_params"]["m_a"], default_params(4).m_a)

    def test_config_error(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.cfg", "# c\ngimbal.l_pt = banana\n")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.cfg", "gimbal.lpt = 0.1\n")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_missing_trajectory_file(self, tmp_path):
        cfg = write(tmp_path, "f.cfg", f'trajectory.source = file\ntrajectory.path = "{tmp_path}/none.csv"\n')
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


@pytest.fixture(scope="module")
def pan(tmp_path_factory):
    out = tmp_path_factory.mktemp("pan")
    assert main(["scenario", "pan", "--out", str(out)]) == 0
    return load(out / "imu.csv")


class TestScenario:
    def test_pan_peak_and_period(self, pan):
        wz = pan[:, 7]
        assert np.abs(wz).max() == pytest.approx(2 * math.pi * (math.pi / 6) / 4, rel=1e-2)
        t = pan[:, 0]
        crossings = t[1:][np.diff(np.sign(wz)) != 0]
        np.testing.assert_allclose(np.diff(crossings), 2.0, atol=0.03)

    def test_pan_cross_axis(self, pan):
        assert np.abs(pan[:, 5:7]).max() < OMEGA_IE + 1e-6

    def test_pan_circular_motion(self, pan):
        t, dt, f = pan[:, 0], pan[:, 1], pan[:, 2:5]
        amp, w, r = math.pi / 6, 2 * math.pi / 4, 0.1
        rate = amp * (np.sin(w * t) - np.sin(w * (t - dt))) / dt
        accel = -amp * w * w * np.sin(w * (t - dt / 2))
        np.testing.assert_allclose(f[:, 0], -rate**2 * r, atol=3e-2 * amp * w * w * r)
        np.testing.assert_allclose(f[:, 1], accel * r, atol=3e-2 * amp * w * w * r)
        assert np.abs(f[:, 2] + 9.8).max() < 0.05

    def test_tilt_isolated(self, tmp_path):
        assert main(["scenario", "tilt", "--out", str(tmp_path)]) == 0
        d = load(tmp_path / "imu.csv")
        assert np.abs(d[:, [5, 7]]).max() < OMEGA_IE + 1e-6
        assert np.abs(d[:, 6]).max() == pytest.approx(2 * math.pi * (math.pi / 6) / 6, rel=1e-2)

    def test_config_overrides_scenario(self, tmp_path):
        cfg = write(tmp_path, "s.cfg", "trajectory.duration = 2\n")
        assert main(["scenario", "pan", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert len(load(tmp_path / "o" / "imu.csv")) == 99

    def test_unknown_scenario(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["scenario", "spin", "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestVerify:
    def test_zero_error_passes(self, tmp_path):
        cfg = write(tmp_path, "v.cfg", "imu.enabled = false\ntrajectory.duration = 20\n")
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        summary = (tmp_path / "o" / "summary.txt").read_text()
        assert summary.rstrip().endswith("PASS")
        errs = load(tmp_path / "o" / "errors.csv")
        assert np.abs(errs[:, 1:4]).max() < 1.0

    def test_unaided_drift_fails(self, tmp_path, capsys):
        cfg = write(tmp_path, "v.cfg", "trajectory.duration = 200\ngimbal.enabled = false\n")
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "FAIL p" in capsys.readouterr().out

    def test_zero_angle_equivalence(self, tmp_path):
        common = "trajectory.kind = climb\ntrajectory.duration = 10\naiding.enabled = true\n"
        on = write(tmp_path, "on.cfg", common + "gimbal.l_pt = 0\ngimbal.l_tr = 0\ngimbal.pan_amplitude = 0\n"
                   "gimbal.tilt_amplitude = 0\ngimbal.roll_amplitude = 0\n")
        off = write(tmp_path, "off.cfg", common + "gimbal.enabled = false\n")
        main(["verify", "--config", on, "--out", str(tmp_path / "on")])
        main(["verify", "--config", off, "--out", str(tmp_path / "off")])
        for name in ("summary.txt", "errors.csv"):
            assert (tmp_path / "on" / name).read_bytes() == (tmp_path / "off" / name).read_bytes()


def free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def feed(port, records, rate=50.0, delay=0.3):
    def run():
        time.sleep(delay)
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as tx:
            for k, r in enumerate(records):
                tx.sendto(r, ("127.0.0.1", port))
                time.sleep(1.0 / rate)
    th = threading.Thread(target=run, daemon=True)
    th.start()
    return th


class TestIngest:
    def test_capture_and_replay(self, tmp_path):
        good = [f"{k * 0.02:.2f},35.0,52.0,1200.0,0,0,0,0.01,0.02,0.3\n".encode() for k in range(100)]
        records = list(good)
        for k in (10, 40, 90):
            records.insert(k, b"garbage,,\n")
        port = free_port()
        th = feed(port, records)
        out = tmp_path / "cap"
        code = main(["ingest", "--port", str(port), "--idle-timeout", "0.7", "--out", str(out)])
        th.join()
        assert code == 0
        stats = json.loads((out / "stats.json").read_text())
        assert stats["samples"] == 100 and stats["dropped"] == 3 and stats["received"] == 103
        assert stats["stream_valid"]
        assert (out / "capture.csv").read_bytes() == b"".join(good)
        assert len((out / "rejected.txt").read_text().splitlines()) == 3

        # replay of the capture equals a run on the records that were sent
        sent = write(tmp_path, "sent.csv", b"".join(good).decode())
        for name, path in (("replay", out / "capture.csv"), ("direct", sent)):
            cfg = write(tmp_path, f"{name}.cfg", f'trajectory.source = file\ntrajectory.path = "{path}"\n')
            assert main(["simulate", "--config", cfg, "--seed", "2", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "replay" / "imu.csv").read_bytes() == (tmp_path / "direct" / "imu.csv").read_bytes()
        assert len(load(tmp_path / "replay" / "imu.csv")) == 98

    def test_live_udp_source(self, tmp_path):
        port = free_port()
        records = [f"{k * 0.02:.2f},35.0,52.0,1200.0,0,0,0,0,0,0\n".encode() for k in range(60)]
        cfg = write(tmp_path, "u.cfg", f"trajectory.source = udp\ntrajectory.port = {port}\n"
                    "trajectory.idle_timeout = 0.7\n")
        th = feed(port, records, rate=200.0)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        th.join()
        assert len(load(tmp_path / "o" / "imu.csv")) == 58

    def test_idle_timeout_without_data(self, tmp_path):
        code = main(["ingest", "--port", str(free_port()), "--idle-timeout", "0.2", "--out", str(tmp_path)])
        assert code == 1
        assert json.loads((tmp_path / "stats.json").read_text())["timed_out"]

    def test_bind_failure(self, tmp_path):
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
            assert main(["ingest", "--port", str(port), "--idle-timeout", "0.2", "--out", str(tmp_path)]) == 3
