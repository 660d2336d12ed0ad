"""Layered engine configuration and the factories that turn it into objects.

Precedence, highest first: command-line flags, environment, config file
(YAML or JSON), defaults. API keys never live in the config; the HTTP
clients read them from ``CLH_API_KEY`` and ``CLH_EMBEDDER_API_KEY``.
"""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from clh.backend import Backend, HttpBackend, OracleBackend, ScriptedBackend
from clh.errors import ConfigError
from clh.http import RetryPolicy
from clh.io import dumps, text_digest
from clh.pipeline import CONTEXT_LEVELS, PipelineConfig
from clh.retrieval import Embedder, HashingEmbedder, HttpEmbedder, RetrievalParams

# environment variable -> dotted config key
ENV_KEYS = {
    "CLH_BASE_URL": "backend.base_url",
    "CLH_MODEL": "backend.model",
    "CLH_EMBEDDER_URL": "embedder.base_url",
    "CLH_EMBEDDER_MODEL": "embedder.model",
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    tabular: Path | None = None
    alpha_index: Path | None = None
    guidelines: Path | None = None
    notes: Path | None = None


class EmbedderConfig(_Section):
    kind: Literal["hashing", "http"] = "hashing"
    dim: int = Field(64, gt=0, description="64 for hashing; must match the model for http")
    seed: int = 0
    base_url: str | None = None
    model: str | None = None
    timeout: float = Field(30.0, gt=0)


class RetrievalConfig(_Section):
    k: int = Field(10, ge=1)
    mode: Literal["lexical", "dense", "hybrid"] = "hybrid"
    k_rrf: int = Field(60, ge=1)
    fuse_depth: int = Field(100, ge=1)
    k1: float = Field(1.2, ge=0)
    b: float = Field(0.75, ge=0, le=1)
    m: int = Field(32, ge=2)
    ef_construct: int = Field(256, ge=1)
    ef_search: int = Field(128, ge=1)
    seed: int = 0


class BackendConfig(_Section):
    kind: Literal["oracle", "scripted", "http"] = "oracle"
    decoding: Literal["thinking", "constrained"] = "thinking"
    script: Path | None = None
    base_url: str | None = None
    model: str | None = None
    timeout: float = Field(120.0, gt=0)
    max_in_flight: int = Field(8, ge=1)
    retries: int = Field(3, ge=0)
    backoff: float = Field(0.5, ge=0)
    max_tokens: int | None = None
    constraint_field: str = "guided_regex"


class PipelineSection(_Section):
    passes: int = Field(1, ge=1)
    stage_timeout: float | None = Field(None, gt=0)
    max_workers: int = Field(8, ge=1, description="fan-out cap inside a stage")
    workers: int = Field(4, ge=1, description="notes processed concurrently")
    parse_retries: int = Field(1, ge=0)
    context: str = "ids+descriptions+guidelines"
    use_gold_evidence: bool = False
    dedup_snippets: bool = True

    @field_validator("context")
    @classmethod
    def _known_context(cls, v: str) -> str:
        if v not in CONTEXT_LEVELS:
            raise ValueError(f"context must be one of {CONTEXT_LEVELS}")
        return v


class ExperimentConfig(_Section):
    ks: list[int] = Field(default_factory=lambda: [0, 1, 5])
    context: str = "ids+descriptions"
    arms: list[str] = Field(default_factory=lambda: list(CONTEXT_LEVELS))
    grouping: Literal["positive", "chapter"] = "positive"

    @field_validator("ks")
    @classmethod
    def _non_negative(cls, v: list[int]) -> list[int]:
        if not v or any(k < 0 for k in v):
            raise ValueError("ks must be a non-empty list of integers >= 0")
        return v

    @field_validator("arms")
    @classmethod
    def _known_arms(cls, v: list[str]) -> list[str]:
        bad = [a for a in v if a not in CONTEXT_LEVELS]
        if bad:
            raise ValueError(f"unknown context levels {bad}")
        return v


class EngineConfig(_Section):
    data: DataConfig = Field(default_factory=DataConfig)
    embedder: EmbedderConfig = Field(default_factory=EmbedderConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    backend: BackendConfig = Field(default_factory=BackendConfig)
    pipeline: PipelineSection = Field(default_factory=PipelineSection)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    @property
    def hash(self) -> str:
        """Digest of the settings that can change outputs (data paths excluded)."""
        body = self.model_dump(mode="json", exclude={"data"})
        return text_digest(dumps(body))[:16]

    def retrieval_params(self) -> RetrievalParams:
        return RetrievalParams(**self.retrieval.model_dump())

    def pipeline_config(self) -> PipelineConfig:
        p = self.pipeline
        return PipelineConfig(
            k=self.retrieval.k,
            retrieval_mode=self.retrieval.mode,
            passes=p.passes,
            stage_timeout=p.stage_timeout,
            max_workers=p.max_workers,
            parse_retries=p.parse_retries,
            context=p.context,
            use_gold_evidence=p.use_gold_evidence,
            dedup_snippets=p.dedup_snippets,
        )


def _set_dotted(target: dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    for p in parents:
        target = target.setdefault(p, {})
    target[leaf] = value


def _deep_merge(base: dict[str, Any], top: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> EngineConfig:
    """Merge defaults, file, environment and flag overrides (dotted keys).

    ``None`` override values mean "flag not given" and are skipped.
    """
    layered: dict[str, Any] = read_config_file(path) if path else {}
    env = os.environ if environ is None else environ
    env_layer: dict[str, Any] = {}
    for var, key in ENV_KEYS.items():
        if env.get(var):
            _set_dotted(env_layer, key, env[var])
    layered = _deep_merge(layered, env_layer)
    flag_layer: dict[str, Any] = {}
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(flag_layer, key, value)
    layered = _deep_merge(layered, flag_layer)
    try:
        return EngineConfig.model_validate(layered)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def make_embedder(cfg: EngineConfig) -> Embedder:
    e = cfg.embedder
    if e.kind == "hashing":
        return HashingEmbedder(dim=e.dim, seed=e.seed)
    if not e.base_url or not e.model:
        raise ConfigError("http embedder needs embedder.base_url and embedder.model")
    return HttpEmbedder(e.base_url, e.model, dim=e.dim, timeout=e.timeout)


def make_backend(cfg: EngineConfig) -> Backend:
    b = cfg.backend
    if b.kind == "oracle":
        return OracleBackend(b.decoding)
    if b.kind == "scripted":
        if b.script is None:
            raise ConfigError("scripted backend needs backend.script (an answer table)")
        try:
            return ScriptedBackend.load(b.script, b.decoding)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load script {b.script}: {exc}") from exc
    if not b.base_url or not b.model:
        raise ConfigError("http backend needs backend.base_url and backend.model")
    return HttpBackend(
        b.base_url,
        b.model,
        decoding=b.decoding,
        timeout=b.timeout,
        max_in_flight=b.max_in_flight,
        retry=RetryPolicy(retries=b.retries, backoff=b.backoff),
        max_tokens=b.max_tokens,
        constraint_field=b.constraint_field,
    )
