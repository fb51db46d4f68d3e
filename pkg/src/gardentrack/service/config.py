"""Service configuration: one JSON file plus environment overrides.

Schema (every key optional)::

    {
      "catalog_root": "catalog",
      "workers": 2,
      "auto_process": true,
      "api_token": null,
      "host": "127.0.0.1",
      "port": 8000,
      "header_patterns": {"device_model": ["^#\\\\s*Device\\\\s*:\\\\s*(?P<value>.+)$"]},
      "pipeline": {"polyline": "loop.geojson", "speed_threshold": 1.0}
    }

``pipeline`` takes the same keys as the CLI ``--config`` file. Environment
variables ``GARDENTRACK_CATALOG_ROOT``, ``GARDENTRACK_POLYLINE``,
``GARDENTRACK_API_TOKEN`` and ``GARDENTRACK_WORKERS`` override the file.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..exceptions import ConfigError
from ..pipeline import PipelineConfig
from .catalog import DEFAULT_HEADER_PATTERNS

__all__ = ["ServiceConfig", "load_service_config"]


@dataclass
class ServiceConfig:
    catalog_root: str = "catalog"
    workers: int = 2
    auto_process: bool = True
    api_token: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8000
    header_patterns: dict = field(default_factory=lambda: dict(DEFAULT_HEADER_PATTERNS))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> None:
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        for key, pats in self.header_patterns.items():
            if isinstance(pats, str):
                raise ConfigError(f"header_patterns[{key!r}] must be a list of patterns")
            for p in pats:
                try:
                    re.compile(p)
                except re.error as exc:
                    raise ConfigError(f"bad header pattern {p!r}: {exc}") from None
        self.pipeline.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ServiceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown service settings: {sorted(unknown)}")
        data = dict(data)
        pipeline = PipelineConfig.from_dict(data.pop("pipeline", {}) or {})
        return cls(pipeline=pipeline, **data)


def load_service_config(path=None, env=None, data: Optional[dict] = None) -> ServiceConfig:
    """Read ``path`` (JSON) or take ``data``, apply environment overrides, validate."""
    env = os.environ if env is None else env
    data = dict(data or {})
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read service config {path}: {exc}") from None
    cfg = ServiceConfig.from_dict(data)
    if env.get("GARDENTRACK_CATALOG_ROOT"):
        cfg.catalog_root = env["GARDENTRACK_CATALOG_ROOT"]
    if env.get("GARDENTRACK_POLYLINE"):
        cfg.pipeline.polyline = env["GARDENTRACK_POLYLINE"]
    if env.get("GARDENTRACK_API_TOKEN"):
        cfg.api_token = env["GARDENTRACK_API_TOKEN"]
    if env.get("GARDENTRACK_WORKERS"):
        try:
            cfg.workers = int(env["GARDENTRACK_WORKERS"])
        except ValueError:
            raise ConfigError("GARDENTRACK_WORKERS must be an integer") from None
    cfg.validate()
    return cfg
