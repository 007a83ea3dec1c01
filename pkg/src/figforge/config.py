"""Pipeline configuration: TOML file, flag overrides, stable digests.

Precedence is flags > config file > built-in defaults. The effective
configuration of every run is digested (sha256 over canonical JSON) into
the run manifest so reruns can prove they used identical settings.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - version dependent
    import tomli as tomllib


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    """Parsed config file contents, grouped by pipeline stage."""

    output_root: str = "out"
    seed: int = 0
    keywords_file: str | None = None
    split_ratio: float = 0.9
    tokenizer_adapter: str = "whitespace"
    wiki: dict[str, Any] = field(default_factory=dict)
    endpoint: dict[str, Any] = field(default_factory=dict)
    filter: dict[str, Any] = field(default_factory=dict)
    damage: dict[str, Any] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0,1)")
        for label, path in (("keywords_file", self.keywords_file),):
            if path and not os.path.exists(path):
                raise ConfigError(f"{label} does not exist: {path}")
        if self.tokenizer_adapter != "whitespace" and not os.path.exists(self.tokenizer_adapter):
            raise ConfigError(f"tokenizer adapter file does not exist: {self.tokenizer_adapter}")


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    cfg = PipelineConfig(
        output_root=data.get("output_root", "out"),
        seed=int(data.get("seed", 0)),
        keywords_file=data.get("keywords_file"),
        split_ratio=float(data.get("split_ratio", 0.9)),
        tokenizer_adapter=data.get("tokenizer_adapter", "whitespace"),
        wiki=dict(data.get("wiki", {})),
        endpoint=dict(data.get("endpoint", {})),
        filter=dict(data.get("filter", {})),
        damage=dict(data.get("damage", {})),
        raw=data,
    )
    cfg.validate()
    return cfg


def config_digest(effective: dict[str, Any]) -> str:
    """Digest of the effective semantic configuration of one run."""
    canon = json.dumps(effective, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def digest_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_inputs(paths: list[str]) -> dict[str, str]:
    """Per-input digests; directories digest their sorted file listing."""
    out: dict[str, str] = {}
    for path in paths:
        if os.path.isdir(path):
            entries = []
            for root, _dirs, files in os.walk(path):
                for name in sorted(files):
                    full = os.path.join(root, name)
                    entries.append(f"{os.path.relpath(full, path)}:{digest_file(full)}")
            h = hashlib.sha256("\n".join(sorted(entries)).encode()).hexdigest()
            out[path] = h
        elif os.path.exists(path):
            out[path] = digest_file(path)
        else:
            out[path] = "missing"
    return out
