import json
import socket
import threading

import pytest

from sononav.cli import main
from sononav.quant import VOI
from sononav.session import SessionConfig
from sononav.stream.sessionlog import read_session_log


def fixture_config_doc():
    return {
        "seed": 11,
        "duration_s": 170.0,
        "frame_rate_hz": 1.0,
        "noise_sd": 0.02,
        "flash_times_s": [80.0],
        "phantom": {
            "dims": [16, 16, 16],
            "lesion_center": [0, 0, 0],
            "lesion_radii": [6, 6, 6],
            "margin_mm": 1.0,
        },
        "motion": {"kind": "breathing", "breathing_amplitude_mm": 1.0, "seed": 11},
        "tracker": {"trans_sd_mm": 0.05, "rate_hz": 5.0},
        "voi": {"center_mm": [0, 0, 0], "radii_mm": [6, 6, 6]},
    }


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "session.json"
    path.write_text(json.dumps(fixture_config_doc()))
    return path


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_simulate_writes_log(config_file, tmp_path):
    out = tmp_path / "session.snavlog"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
    log = read_session_log(out)
    assert log.header["seed"] == 11
    assert len(log.messages) > 0


def test_simulate_seed_override(config_file, tmp_path):
    a = tmp_path / "a.snavlog"
    b = tmp_path / "b.snavlog"
    assert main(["simulate", "--config", str(config_file), "--out", str(a), "--seed", "99"]) == 0
    assert main(["simulate", "--config", str(config_file), "--out", str(b)]) == 0
    assert read_session_log(a).header["seed"] == 99
    assert a.read_bytes() != b.read_bytes()


def test_missing_config_is_exit_1(tmp_path):
    rc = main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")])
    assert rc == 1


def test_bad_usage_is_exit_1():
    assert main(["simulate"]) == 1


def test_quantify_stdout(config_file, tmp_path, capsys):
    out = tmp_path / "s.snavlog"
    main(["simulate", "--config", str(config_file), "--out", str(out)])
    assert main(["quantify", str(out)]) == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0].startswith("file,")
    assert len(lines) == 2
    assert "error" not in lines[1].split(",")[-1] or lines[1].split(",")[-1] == ""


def test_quantify_explicit_voi_and_outfile(config_file, tmp_path):
    log_path = tmp_path / "s.snavlog"
    main(["simulate", "--config", str(config_file), "--out", str(log_path)])
    out_csv = tmp_path / "report.csv"
    rc = main(
        [
            "quantify",
            str(log_path),
            "--voi-center",
            "0,0,0",
            "--voi-radii",
            "6,6,6",
            "--realign",
            "--out",
            str(out_csv),
        ]
    )
    assert rc == 0
    assert out_csv.read_text().splitlines()[1].split(",")[2] == "1"  # realigned flag


def test_replay_and_record_round_trip(config_file, tmp_path):
    src_log = tmp_path / "src.snavlog"
    main(["simulate", "--config", str(config_file), "--out", str(src_log)])
    original = read_session_log(src_log)

    port = free_port()
    replay = threading.Thread(
        target=main,
        args=(
            [
                "replay",
                "--log",
                str(src_log),
                "--endpoint",
                f"127.0.0.1:{port}",
                "--max-speed",
                "--wait-subscribers",
                "1",
            ],
        ),
        daemon=True,
    )
    replay.start()
    out_log = tmp_path / "recorded.snavlog"
    rc = main(["record", "--connect", f"127.0.0.1:{port}", "--out", str(out_log)])
    assert rc == 0
    recorded = read_session_log(out_log)
    assert recorded.messages == original.messages
    replay.join(timeout=30)
    assert not replay.is_alive()


def test_operator_study_cli(tmp_path):
    rc = main(
        [
            "operator-study",
            "--n-operators",
            "2",
            "--duration",
            "30",
            "--seed",
            "1",
            "--out-dir",
            str(tmp_path / "study"),
        ]
    )
    assert rc == 0
    assert (tmp_path / "study" / "operator_study.csv").exists()


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"n_operators": 2, "duration_s": 20.0}))
    rc = main(
        [
            "operator-study",
            "--config",
            str(cfg),
            "--n-operators",
            "9",
            "--seed",
            "0",
            "--out-dir",
            str(tmp_path / "study2"),
        ]
    )
    assert rc == 0
    lines = (tmp_path / "study2" / "operator_study.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3  # config file wins over the flag


def test_json_logs_flag(config_file, tmp_path, capsys):
    out = tmp_path / "log.snavlog"
    rc = main(["--json", "simulate", "--config", str(config_file), "--out", str(out)])
    assert rc == 0
    err = capsys.readouterr().err.strip().splitlines()
    assert err
    record = json.loads(err[-1])
    assert record["level"] == "info"
