from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from noveltyscope.cli import main as cli_main
from noveltyscope.config import GatewayConfig, RunConfig

DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def offline_corpus() -> Path:
    return DATA / "offline_corpus"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return DATA / "golden"


@pytest.fixture(scope="session")
def transcripts_dir() -> Path:
    return DATA / "transcripts"


@pytest.fixture
def run_config(tmp_path) -> RunConfig:
    """Fixture-corpus configuration with an isolated run directory."""
    return RunConfig(
        capacity=8,
        offline_dir=str(DATA / "offline_corpus"),
        run_dir=str(tmp_path / "runs"),
        gateway=GatewayConfig(max_in_flight=1),
    )


def write_cli_config(tmp_path: Path, **overrides) -> Path:
    """A TOML config pointing at the fixture corpus and a tmp run dir."""
    values = {
        "capacity": 8,
        "offline_dir": str(DATA / "offline_corpus"),
        "run_dir": str(tmp_path / "runs"),
    }
    values.update(overrides)
    lines = []
    for key, value in values.items():
        if isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        else:
            lines.append(f"{key} = {value}")
    path = tmp_path / "config.toml"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def cli_config(tmp_path) -> Path:
    return write_cli_config(tmp_path)


@pytest.fixture
def built_run(tmp_path, cli_config):
    """Run build-db on the fixture corpus; yields (config path, run tree)."""
    result = CliRunner().invoke(cli_main,
                                ["--config", str(cli_config),
                                 "build-db", "t001"])
    assert result.exit_code == 0, result.output
    return cli_config, tmp_path / "runs" / "t001"


def load_transcript(name: str) -> list[dict]:
    path = DATA / "transcripts" / name
    return [json.loads(line) for line in
            path.read_text(encoding="utf-8").splitlines() if line.strip()]
