"""Run configuration: defaults, TOML/JSON loading and startup checks."""
from __future__ import annotations

import enum
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .gateway import (
    Gateway,
    HttpProviderTransport,
    ImageTokenFormula,
    RateLimiter,
    RecordingTransport,
    ReplayTransport,
    missing_credentials,
)
from .html_extractor import DEFAULT_MAX_CHARS
from .pipeline import PipelineConfig, Verifier
from .prompts import InputMode
from .validity_filter import FilterThresholds


class ConfigError(ValueError):
    pass


class TransportKind(str, enum.Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path | None = None
    modes: tuple[InputMode, ...] = (InputMode.BOTH,)
    models: tuple[str, ...] = ()
    verifier: Verifier = Verifier.LLM
    transport: TransportKind = TransportKind.REPLAY
    fixture_path: Path | None = None
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    max_in_flight: int = 4
    output_path: Path | None = None
    max_chars: int = DEFAULT_MAX_CHARS
    max_output_tokens: int = 1024
    temperature: float = 0.0
    chain_of_thought: bool = False
    rate_limit: int | None = None
    brand_aliases: Mapping[str, str] = field(default_factory=dict)
    endpoints: Mapping[str, str] = field(default_factory=dict)
    image_token_formulas: Mapping[str, ImageTokenFormula] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be a positive integer")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            verifier=self.verifier,
            thresholds=self.thresholds,
            max_chars=self.max_chars,
            max_output_tokens=self.max_output_tokens,
            temperature=self.temperature,
            chain_of_thought=self.chain_of_thought,
            brand_aliases=dict(self.brand_aliases),
        )

    def check(self) -> None:
        """Fail early on settings that would only break mid-run."""
        if self.transport is TransportKind.REPLAY:
            if self.fixture_path is None or not Path(self.fixture_path).is_file():
                raise ConfigError(f"replay transport needs an existing fixture file, got {self.fixture_path}")
        else:
            if self.transport is TransportKind.RECORD and self.fixture_path is None:
                raise ConfigError("record transport needs a fixture path")
            if not self.models:
                raise ConfigError("no models configured")
            missing = missing_credentials(self.models)
            if missing:
                raise ConfigError("missing credentials: set " + ", ".join(missing))

    def build_gateway(self) -> Gateway:
        self.check()
        if self.transport is TransportKind.REPLAY:
            transport = ReplayTransport(self.fixture_path)
        else:
            transport = HttpProviderTransport(endpoints=self.endpoints)
            if self.transport is TransportKind.RECORD:
                transport = RecordingTransport(transport, self.fixture_path)
        limiter = RateLimiter(self.rate_limit) if self.rate_limit else None
        return Gateway(transport, rate_limiter=limiter)


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _providers(block: Mapping[str, Any]) -> tuple[dict[str, str], dict[str, ImageTokenFormula]]:
    endpoints, formulas = {}, {}
    for provider, entry in block.items():
        if "endpoint" in entry:
            endpoints[provider] = entry["endpoint"]
        for model, f in entry.get("image_tokens", {}).items():
            model_id = model if "/" in model else f"{provider}/{model}"
            formulas[model_id] = ImageTokenFormula(int(f["base"]), int(f["per_tile"]), int(f["tile"]))
    return endpoints, formulas


def config_from_mapping(data: Mapping[str, Any], base: RunConfig = RunConfig()) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    updates: dict[str, Any] = {}
    try:
        for key, value in data.items():
            if key == "filter_thresholds":
                updates["thresholds"] = FilterThresholds.from_dict(value)
            elif key == "providers":
                updates["endpoints"], updates["image_token_formulas"] = _providers(value)
            elif key == "modes":
                updates["modes"] = tuple(InputMode(m) for m in value)
            elif key == "models":
                updates["models"] = tuple(value)
            elif key == "verifier":
                updates["verifier"] = Verifier(value)
            elif key == "transport":
                updates["transport"] = TransportKind(value)
            elif key in ("dataset_root", "fixture_path", "output_path"):
                updates[key] = Path(value)
            elif key in known:
                updates[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return replace(base, **updates)
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return config_from_mapping(read_config_file(path))
