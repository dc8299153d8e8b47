"""Shared fixtures: tiny configurations that keep every model fast to build."""

import pytest
import torch

from s2tx.config import ExperimentConfig


def tiny_config(**changes) -> ExperimentConfig:
    base = ExperimentConfig(
        lookback=32,
        local_window=16,
        horizon=8,
        patch_len_global=8,
        stride_global=4,
        patch_len_local=4,
        stride_local=2,
        d_model=8,
        n_heads=2,
        ffn_width=16,
        local_layers=1,
        global_layers=1,
        state_dim=4,
        dropout=0.0,
        batch_size=8,
        epochs=2,
        patience=2,
        learning_rate=1e-3,
    )
    return base.replace(**changes)


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    return tiny_config()


@pytest.fixture
def tiny_cfg64() -> ExperimentConfig:
    return tiny_config(precision="float64")


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield


# -- acceptance summary ---------------------------------------------------

_CRITERIA: dict[str, list[tuple[str, str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if report.failed:
        message = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") else ""
        detail = message.splitlines()[0] if message else detail
    _CRITERIA.setdefault(marker.args[0], []).append(
        (item.name, "PASS" if report.passed else "FAIL", detail)
    )


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: (int("".join(c for c in s if c.isdigit()) or 0), s)):
        for name, verdict, detail in _CRITERIA[label]:
            terminalreporter.write_line(f"[{verdict}] criterion {label} ({name}): {detail}")
