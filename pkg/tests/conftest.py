import os

import numpy as np
import pytest

import workbench
from model import assembled_reference, reference_unit


def pytest_collection_modifyitems(config, items):
    """Skip long-running acceptance runs unless explicitly enabled.

    Export TILTDOCK_SLOW=1 to run closed-loop scenarios, optimiser seed sweeps
    and Monte-Carlo ensembles.
    """
    if os.environ.get("TILTDOCK_SLOW", "0") != "1":
        skip_slow = pytest.mark.skip(reason="slow test skipped. Set TILTDOCK_SLOW=1 to run.")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    # Keine config.yaml und keine Logdatei aus dem Arbeitsverzeichnis verwenden
    monkeypatch.setenv("TILTDOCK_CONFIG", str(tmp_path / "no-config.yaml"))
    monkeypatch.setenv("TILTDOCK_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setattr(workbench, "_logger", None)


@pytest.fixture(scope="session")
def unit():
    return reference_unit()


@pytest.fixture(scope="session")
def assembled(unit):
    return assembled_reference(unit, 0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
