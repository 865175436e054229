"""Run configuration: one dataclass holding every module default.

Loaded from a TOML file; unknown keys are rejected so typos fail fast.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

# Query lines containing any of these (case-insensitive) trigger one
# regeneration. Phrases match as substrings, single words on word boundaries.
STOP_PHRASES = (
    "novelty point",
    "this paper",
    "the report",
    "related work",
    "comparison",
    "analysis",
    "evaluation",
)
STOP_WORDS = ("how", "what", "why", "whether")


@dataclass
class GatewayConfig:
    """Endpoints, models, and budgets for the chat/embed/rerank providers."""

    chat_endpoint: str = ""
    embed_endpoint: str = ""
    rerank_endpoint: str = ""
    chat_model: str = "gpt-5-mini"
    embed_model: str = "bce-embedding-base_v1"
    rerank_model: str = "qwen3-reranker-4b"
    api_key: str = ""
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_seconds: float = 1.0
    embed_batch_size: int = 64
    context_budget_tokens: int = 60_000
    temperature: float = 0.0
    request_timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


@dataclass
class RunConfig:
    """Defaults for every pipeline stage, overridable from a TOML file."""

    capacity: int = 200
    chunk_tokens: int = 512
    queries_per_point: int = 6
    k_final: int = 7
    n_recall: int = 50
    fusion_weight: float = 0.5
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    max_points: int = 5
    fail_closed: bool = False
    rerank_fallback: bool = True
    run_dir: str = "runs"
    offline_dir: str = ""
    scholarly_endpoint: str = ""
    gateway: GatewayConfig = field(default_factory=GatewayConfig)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ConfigError("capacity must be >= 1")
        if self.chunk_tokens < 1:
            raise ConfigError("chunk_tokens must be >= 1")
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ConfigError("fusion_weight must lie in [0, 1]")
        if self.k_final < 1 or self.n_recall < 1:
            raise ConfigError("k_final and n_recall must be >= 1")


def _known_fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def load_config(path: str | Path) -> RunConfig:
    """Parse a TOML config file into a RunConfig, rejecting unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    gateway_raw = raw.pop("gateway", {})
    unknown = set(raw) - _known_fields(RunConfig)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    unknown_gw = set(gateway_raw) - _known_fields(GatewayConfig)
    if unknown_gw:
        raise ConfigError(f"unknown gateway config keys: {sorted(unknown_gw)}")

    gateway = GatewayConfig(**gateway_raw)
    return RunConfig(gateway=gateway, **raw)
