"""Sectioned TOML configuration shared by every subcommand.

Each section maps onto one frozen block dataclass; unknown sections or
keys, type mismatches, and out-of-range values all raise ConfigError with
the dotted field path so the failure names exactly what to fix. Flags
compose over the file through with_overrides, flags winning.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, get_type_hints

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .extraction import Blocking, ExtractionConfig
from .graph import EdgeDirection, PprConfig

_MODES = ("stub", "replay", "live")


def read_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"not parseable: {exc}")


@dataclass(frozen=True)
class PathsConfig:
    tools: str = ""
    docs: str = ""
    queries: str = ""
    dependencies: str = ""
    graph: str = ""
    store: str = ""
    fixtures: str = ""
    artifacts: str = ""
    reports: str = ""


@dataclass(frozen=True)
class GatewayBlock:
    endpoint: str = ""
    model: str = ""
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    requests_per_second: float = 0.0
    embed_dims: int = 256

    def validate(self) -> None:
        if self.timeout <= 0:
            raise ConfigError("gateway.timeout", "must be > 0")
        if self.max_attempts < 1:
            raise ConfigError("gateway.max_attempts", "must be >= 1")
        if self.embed_dims < 1:
            raise ConfigError("gateway.embed_dims", "must be >= 1")


@dataclass(frozen=True)
class ExtractionBlock:
    pair_blocking: str = "auto"
    max_in_flight: int = 1
    judge_enabled: bool = True

    def to_extraction_config(self) -> ExtractionConfig:
        if self.pair_blocking == "auto":
            blocking = None
        else:
            try:
                blocking = Blocking(self.pair_blocking)
            except ValueError:
                raise ConfigError(
                    "extraction.pair_blocking",
                    f"must be auto, all_pairs, or field_overlap, got {self.pair_blocking!r}",
                )
        if self.max_in_flight < 1:
            raise ConfigError("extraction.max_in_flight", "must be >= 1")
        return ExtractionConfig(
            pair_blocking=blocking,
            max_in_flight=self.max_in_flight,
            judge_enabled=self.judge_enabled,
        )


@dataclass(frozen=True)
class PprBlock:
    enabled: bool = True
    damping: float = 0.85
    tolerance: float = 1e-8
    max_iterations: int = 100
    edge_direction: str = "symmetrize"
    top_n: int = 50

    def to_ppr_config(self) -> PprConfig:
        try:
            direction = EdgeDirection(self.edge_direction)
        except ValueError:
            raise ConfigError(
                "ppr.edge_direction",
                f"must be as_is or symmetrize, got {self.edge_direction!r}",
            )
        if self.top_n < 1:
            raise ConfigError("ppr.top_n", "must be >= 1")
        return PprConfig(
            damping=self.damping,
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            edge_direction=direction,
        )


@dataclass(frozen=True)
class RetrievalBlock:
    k_triplets: int = 20
    k_passages: int = 10

    def validate(self) -> None:
        if self.k_triplets < 1:
            raise ConfigError("retrieval.k_triplets", "must be >= 1")
        if self.k_passages < 0:
            raise ConfigError("retrieval.k_passages", "must be >= 0")


@dataclass(frozen=True)
class GenerationBlock:
    token_budget: int = 2000
    strict: bool = False
    max_attempts: int = 3
    query_level: str = ""
    sample_n: int = 0
    sample_seed: int = 0

    def validate(self) -> None:
        if self.token_budget < 1:
            raise ConfigError("generation.token_budget", "must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("generation.max_attempts", "must be >= 1")
        if self.query_level not in ("", "G1", "G2", "G3"):
            raise ConfigError(
                "generation.query_level",
                f"must be G1, G2, G3, or empty for all, got {self.query_level!r}",
            )
        if self.sample_n < 0:
            raise ConfigError("generation.sample_n", "must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "stub"
    paths: PathsConfig = field(default_factory=PathsConfig)
    gateway: GatewayBlock = field(default_factory=GatewayBlock)
    extraction: ExtractionBlock = field(default_factory=ExtractionBlock)
    ppr: PprBlock = field(default_factory=PprBlock)
    retrieval: RetrievalBlock = field(default_factory=RetrievalBlock)
    generation: GenerationBlock = field(default_factory=GenerationBlock)

    def validate(self) -> "PipelineConfig":
        if self.mode not in _MODES:
            raise ConfigError("mode", f"must be one of {', '.join(_MODES)}, got {self.mode!r}")
        self.gateway.validate()
        self.extraction.to_extraction_config()
        self.ppr.to_ppr_config()
        self.retrieval.validate()
        self.generation.validate()
        return self

    def require_path(self, name: str, must_exist: bool = True) -> Path:
        """Resolve paths.<name>, enforcing presence before a stage starts."""
        value = getattr(self.paths, name, "")
        if not value:
            raise ConfigError(f"paths.{name}", "required by this stage but not set")
        path = Path(value)
        if must_exist and not path.exists():
            raise ConfigError(f"paths.{name}", f"file not found: {path}")
        return path


_SECTIONS: dict[str, type] = {
    "paths": PathsConfig,
    "gateway": GatewayBlock,
    "extraction": ExtractionBlock,
    "ppr": PprBlock,
    "retrieval": RetrievalBlock,
    "generation": GenerationBlock,
}


def _coerce(path: str, value: Any, hint: type) -> Any:
    if hint is bool:
        if type(value) is bool:
            return value
    elif hint is int:
        if type(value) is int:
            return value
    elif hint is float:
        if type(value) is float or type(value) is int:
            return float(value)
    elif hint is str:
        if isinstance(value, str):
            return value
    raise ConfigError(path, f"expected {hint.__name__}, got {type(value).__name__}")


def _build_section(name: str, cls: type, raw: Mapping[str, Any]) -> Any:
    hints = get_type_hints(cls)
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in hints:
            raise ConfigError(f"{name}.{key}", "unknown key")
        values[key] = _coerce(f"{name}.{key}", value, hints[key])
    return cls(**values)


def pipeline_config_from_mapping(raw: Mapping[str, Any]) -> PipelineConfig:
    sections: dict[str, Any] = {}
    mode = "stub"
    for key, value in raw.items():
        if key == "mode":
            mode = _coerce("mode", value, str)
        elif key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(key, "expected a section table")
            sections[key] = _build_section(key, _SECTIONS[key], value)
        else:
            raise ConfigError(key, "unknown section")
    return PipelineConfig(mode=mode, **sections).validate()


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    return pipeline_config_from_mapping(read_toml(path))


def with_overrides(config: PipelineConfig, overrides: Mapping[str, Any]) -> PipelineConfig:
    """Apply dotted-path overrides (e.g. {"paths.tools": "x", "mode": "stub"}).

    Values are type-checked against the target field; None values are
    skipped so optional CLI flags can be passed through unconditionally.
    """
    result = config
    for dotted, value in overrides.items():
        if value is None:
            continue
        if "." not in dotted:
            if dotted != "mode":
                raise ConfigError(dotted, "unknown top-level key")
            result = dataclasses.replace(result, mode=_coerce("mode", value, str))
            continue
        section, key = dotted.split(".", 1)
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(section, "unknown section")
        hints = get_type_hints(cls)
        if key not in hints:
            raise ConfigError(dotted, "unknown key")
        block = dataclasses.replace(
            getattr(result, section), **{key: _coerce(dotted, value, hints[key])}
        )
        result = dataclasses.replace(result, **{section: block})
    return result.validate()
