"""End-to-end CLI coverage, including a two-endpoint TCP run."""

from __future__ import annotations

import json
import socket
import threading

import pytest

from coneloop.cli import main
from coneloop.config import DEFAULTS, load_document


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def short_scenario(tmp_path):
    path = tmp_path / "short.yaml"
    path.write_text("max_duration_s: 2.0\n", encoding="utf-8")
    return str(path)


def test_run_default_course_exit_zero(tmp_path, capsys):
    log = tmp_path / "run.jsonl"
    code = main(["run", "--log", str(log)])
    out = capsys.readouterr().out
    report = json.loads(out)
    assert code == 0
    assert report["completed"] is True
    assert report["cones_struck"] == 0
    assert log.exists()


def test_run_seed_flag_changes_seeded_noise(tmp_path, capsys):
    scenario = tmp_path / "noisy.yaml"
    scenario.write_text("camera:\n  noise_px: 1.0\nmax_duration_s: 2.0\n", encoding="utf-8")
    log_a = tmp_path / "a.jsonl"
    log_b = tmp_path / "b.jsonl"
    main(["run", "--scenario", str(scenario), "--seed", "1", "--log", str(log_a)])
    main(["run", "--scenario", str(scenario), "--seed", "1", "--log", str(log_b)])
    assert log_a.read_bytes() == log_b.read_bytes()


def test_run_incomplete_exit_two(tmp_path, capsys):
    scenario = tmp_path / "empty.yaml"
    scenario.write_text(
        "course:\n  type: cones\n  cones: []\nmax_duration_s: 1.0\n", encoding="utf-8"
    )
    assert main(["run", "--scenario", str(scenario)]) == 2


def test_run_bad_scenario_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("chassis:\n  mass_kg: -5\n", encoding="utf-8")
    assert main(["run", "--scenario", str(bad)]) == 1
    assert "mass_kg" in capsys.readouterr().err


def test_run_missing_file_exit_one(capsys):
    assert main(["run", "--scenario", "no/such/file.yaml"]) == 1


def test_metrics_command(tmp_path, capsys, short_scenario):
    log = tmp_path / "run.jsonl"
    main(["run", "--scenario", short_scenario, "--log", str(log)])
    capsys.readouterr()
    code = main(["metrics", "--log", str(log), "--scenario", short_scenario])
    report = json.loads(capsys.readouterr().out)
    assert code == 0
    assert report["steps"] == 200


def test_plot_command(tmp_path, capsys, short_scenario):
    log = tmp_path / "run.jsonl"
    main(["run", "--scenario", short_scenario, "--log", str(log)])
    out_dir = tmp_path / "figs"
    code = main(["plot", "--log", str(log), "--out", str(out_dir), "--scenario", short_scenario])
    assert code == 0
    files = sorted(p.name for p in out_dir.iterdir())
    assert "trajectory.svg" in files
    assert any(name.startswith("plan_") for name in files)


def test_config_dump_defaults(capsys):
    assert main(["config", "dump-defaults"]) == 0
    dumped = capsys.readouterr().out
    assert load_document(dumped) == DEFAULTS


def test_distributed_tcp_run(tmp_path, capsys, short_scenario):
    port = _free_port()
    log = tmp_path / "sim.jsonl"
    codes: dict[str, int] = {}

    def autonomy_side():
        codes["autonomy"] = main(
            ["run", "--role", "autonomy", "--connect", f"127.0.0.1:{port}",
             "--scenario", short_scenario]
        )

    thread = threading.Thread(target=autonomy_side)
    thread.start()
    codes["sim"] = main(
        ["run", "--role", "sim", "--listen", f"127.0.0.1:{port}",
         "--scenario", short_scenario, "--log", str(log)]
    )
    thread.join(timeout=30.0)
    # A 2 s cap ends the run before the gate: incomplete on both sides.
    assert codes["sim"] == 2
    assert codes["autonomy"] == 2
    assert log.exists()


def test_distributed_requires_exactly_one_address(capsys, short_scenario):
    assert main(["run", "--role", "sim", "--scenario", short_scenario]) == 1
