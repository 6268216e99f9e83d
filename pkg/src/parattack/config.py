"""Run configuration: a versioned JSON file with strict key checking.

Unknown keys are errors, not warnings; silent misconfiguration is the main
reproducibility hazard. Every key can be overridden from the environment
with the PARATTACK_ prefix and ``__`` as the nesting separator, e.g.
``PARATTACK_ATTACK__SIGMA_INIT=0.3``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .attack import AttackConfig
from .evalproto import ProtocolConfig

ENV_PREFIX = "PARATTACK_"
SCHEMA_VERSION = 1

_ATTACK_KEYS = {f.name for f in fields(AttackConfig)} - {"seed"}
_ORACLE_KEYS = {"encode", "segment", "embed", "judge", "timeout_ms", "max_concurrency"}
_FILTER_KEYS = {"cosine_threshold", "terminal_punctuation", "use_judge"}
_TOP_KEYS = {"schema_version", "seed", "source_attack", "attack", "oracles", "filters"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int
    source_attack: str
    attack: AttackConfig
    oracles: dict
    filters: ProtocolConfig

    def to_wire(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "source_attack": self.source_attack,
            "attack": {k: getattr(self.attack, k) for k in sorted(_ATTACK_KEYS)},
            "oracles": {k: self.oracles[k] for k in sorted(self.oracles)},
            "filters": {
                "cosine_threshold": self.filters.cosine_threshold,
                "terminal_punctuation": self.filters.terminal_punctuation,
                "use_judge": self.filters.use_judge,
            },
        }


def default_config_dict() -> dict:
    attack = AttackConfig()
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "source_attack": "latent-ppo",
        "attack": {k: getattr(attack, k) for k in sorted(_ATTACK_KEYS)},
        "oracles": {"timeout_ms": 30000, "max_concurrency": 8},
        "filters": {"cosine_threshold": ProtocolConfig().cosine_threshold,
                    "terminal_punctuation": ProtocolConfig().terminal_punctuation,
                    "use_judge": True},
    }


def _check_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _apply_env_overrides(data: dict, environ) -> dict:
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for part in path[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"environment override {name} targets unknown section {part!r}")
            node = node[part]
        node[path[-1]] = value
    return data


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(data, _TOP_KEYS, "config")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")

    attack_section = dict(data.get("attack", {}))
    _check_keys(attack_section, _ATTACK_KEYS, "attack")
    oracle_section = dict(data.get("oracles", {}))
    _check_keys(oracle_section, _ORACLE_KEYS, "oracles")
    filter_section = dict(data.get("filters", {}))
    _check_keys(filter_section, _FILTER_KEYS, "filters")

    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    try:
        attack = AttackConfig(seed=seed, **attack_section)
        filters = ProtocolConfig(**filter_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        seed=seed,
        source_attack=str(data.get("source_attack", "latent-ppo")),
        attack=attack,
        oracles=oracle_section,
        filters=filters,
    )


def load_config(path, environ=None, overrides: dict | None = None) -> RunConfig:
    """Read + validate a config file, then apply env and CLI overrides."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    data = _apply_env_overrides(data, environ if environ is not None else os.environ)
    for dotted, value in (overrides or {}).items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return parse_config(data)
