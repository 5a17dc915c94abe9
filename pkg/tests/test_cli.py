import json
from pathlib import Path
from typing import List

import pytest

from wong_zakai.main import main, parse_parameters


def _run(tmp_path: Path, *args: str) -> int:
    argv: List[str] = ["--out", str(tmp_path), "--seed", "7", "--threads", "1", *args]
    return main(argv)


def _write_config(tmp_path: Path, text: str) -> Path:
    config = tmp_path / "study.yaml"
    config.write_text(text, encoding="utf-8")
    return config


def test_parse_parameters() -> None:
    assert parse_parameters(["theta=2.5", "mean=[0, 1]"]) == {"theta": 2.5, "mean": [0, 1]}
    assert parse_parameters(None) == {}


def test_sample_fbm_writes_paths_and_gram(tmp_path: Path) -> None:
    assert _run(tmp_path, "sample-fbm", "--m", "8", "--count", "4", "--hurst", "0.4") == 0
    lines = (tmp_path / "paths.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "path_id,t,component_1"
    assert len(lines) == 1 + 4 * 9
    assert (tmp_path / "gram.csv").exists()


def test_lift_and_pvar_commands(tmp_path: Path) -> None:
    assert _run(tmp_path, "lift", "--m", "8", "--level", "3") == 0
    assert (tmp_path / "lift.csv").exists()
    assert _run(tmp_path, "pvar", "--m", "8", "--p", "2.5") == 0
    assert (tmp_path / "control.csv").exists()


def test_nfunc_command(tmp_path: Path) -> None:
    assert _run(tmp_path, "nfunc", "--m", "8", "--count", "5") == 0
    data = json.loads((tmp_path / "nfunc.json").read_text(encoding="utf-8"))
    assert len(data["counts"]) == 5


def test_solve_and_deriv_commands(tmp_path: Path) -> None:
    assert _run(tmp_path, "solve", "--preset", "bounded-trig", "--m", "16", "--count", "3") == 0
    header = (tmp_path / "trajectory.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("t,y_1,y_2,J_11")
    code = _run(
        tmp_path, "deriv", "--preset", "cosine", "--m", "8", "--count", "3", "--order", "2"
    )
    assert code == 0
    assert (tmp_path / "xi_1.csv").exists() and (tmp_path / "xi_2.csv").exists()
    assert (tmp_path / "nondegeneracy.json").exists()


def test_density_command(tmp_path: Path) -> None:
    code = _run(
        tmp_path, "density", "--m", "8", "--samples", "500", "--points", "51"
    )
    assert code == 0
    sidecar = json.loads((tmp_path / "density.json").read_text(encoding="utf-8"))
    assert sidecar["count"] == 500
    assert sidecar["bandwidth"] == pytest.approx(8**-0.5)


def test_study_command_from_config(tmp_path: Path) -> None:
    config = _write_config(
        tmp_path,
        "kind: pathwise\npreset: cosine\nschedule: [2, 4, 8]\nm_ref: 64\nsamples: 100\n",
    )
    assert _run(tmp_path, "--config", str(config), "study") == 0
    assert (tmp_path / "pathwise" / "study.csv").exists()
    report = json.loads((tmp_path / "pathwise" / "report.json").read_text(encoding="utf-8"))
    assert report["config"]["seed"] == 7


def test_inconclusive_study_exit_code(tmp_path: Path) -> None:
    config = _write_config(
        tmp_path,
        "kind: density\nschedule: [64, 128, 256]\nm_ref: 2048\n"
        "samples: 200\nmax_samples: 200\nxi_points: 41\n",
    )
    assert _run(tmp_path, "--config", str(config), "study") == 4


def test_configuration_errors_exit_with_two(tmp_path: Path) -> None:
    assert _run(tmp_path, "solve", "--preset", "heston") == 2
    assert _run(tmp_path, "lift", "--level", "4") == 2
    assert _run(tmp_path, "solve", "--param", "theta") == 2
    assert _run(tmp_path, "deriv", "--m", "4", "--t", "0.3") == 2
    assert main(["--threads", "0", "sample-fbm"]) == 2


def test_unknown_command_is_rejected() -> None:
    with pytest.raises(SystemExit):
        main(["transmogrify"])
