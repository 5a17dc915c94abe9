import pytest
from pathlib import Path
from settings.settings import Settings


def test_settings_from_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """
    Tests if Settings picks up WZ_* environment variables.
    """
    monkeypatch.setenv("WZ_OUTPUT_DIR", str(tmp_path / "out"))
    monkeypatch.setenv("WZ_THREADS", "3")
    monkeypatch.setenv("WZ_LOG_LEVEL", "debug")
    monkeypatch.setenv("WZ_SEED", "42")

    settings = Settings()
    assert settings.output_dir == tmp_path / "out"
    assert settings.threads == 3
    assert settings.log_level == "DEBUG"
    assert settings.seed == 42


def test_settings_output_dir_is_a_file(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    """
    Tests if Settings raises a ValidationError when the output path is a file.
    """
    # A regular file where a directory is expected
    fake_output = tmp_path / "results.txt"
    fake_output.write_text("test content")
    monkeypatch.setenv("WZ_OUTPUT_DIR", str(fake_output))

    with pytest.raises(ValueError):
        Settings()


def test_settings_invalid_values(monkeypatch: pytest.MonkeyPatch) -> None:
    """
    Tests if Settings rejects unknown log levels, zero threads and negative seeds.
    """
    monkeypatch.setenv("WZ_LOG_LEVEL", "chatty")
    with pytest.raises(ValueError):
        Settings()
    monkeypatch.delenv("WZ_LOG_LEVEL")

    monkeypatch.setenv("WZ_THREADS", "0")
    with pytest.raises(ValueError):
        Settings()
    monkeypatch.delenv("WZ_THREADS")

    monkeypatch.setenv("WZ_SEED", "-1")
    with pytest.raises(ValueError):
        Settings()
