import pytest

from utils.config import Config


@pytest.fixture
def isolated_env(tmp_path, monkeypatch):
    """Fresh Config singleton pointed at a temporary registry and config file"""
    monkeypatch.setenv("QRNG_DB_PATH", str(tmp_path / "runs.db"))
    monkeypatch.setenv("QRNG_CONFIG_PATH", str(tmp_path / "qrng_config.json"))
    monkeypatch.setenv("QRNG_WORKERS", "1")
    monkeypatch.delenv("QRNG_SEED", raising=False)
    monkeypatch.delenv("QRNG_LOG_FILE", raising=False)
    Config.reset()
    yield tmp_path
    Config.reset()
