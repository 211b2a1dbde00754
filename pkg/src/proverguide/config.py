"""Run configuration: TOML loading, defaults, validation, hashing.

The file has scalar knobs at the top level, one ``[endpoints.<role>]``
table per model endpoint, and an optional ``[verifier]`` table.  CLI
flags override file values; everything has a default except endpoint
base URLs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from proverguide.clients import ROLES, EndpointConfig


class ConfigError(Exception):
    """Invalid or contradictory run configuration (CLI exit code 1)."""


# Sampling defaults differ by role: the prover explores, guidance stays
# close to the rails.
_ROLE_SAMPLING = {
    "reasoner": {"temperature": 0.7, "top_p": 1.0},
    "worker": {"temperature": 0.7, "top_p": 1.0},
    "prover": {"temperature": 1.0, "top_p": 0.95},
}

VERIFIER_MODES = ("repl", "marker")


@dataclass(frozen=True)
class VerifierSettings:
    mode: str = "repl"
    command: Tuple[str, ...] = ("repl",)
    cwd: Optional[str] = None
    sessions: int = 0  # 0 = match worker count
    startup_timeout_s: float = 300.0
    kill_grace_s: float = 2.0

    def __post_init__(self):
        if self.mode not in VERIFIER_MODES:
            raise ConfigError(f"unknown verifier mode {self.mode!r}")
        if self.mode == "repl" and not self.command:
            raise ConfigError("verifier.command must not be empty")


@dataclass(frozen=True)
class RunConfig:
    budget: int = 128
    initial_attempts: int = 16
    max_lemmas: int = 5
    max_main_attempts: int = 8
    verify_timeout_s: float = 20.0
    pool_cap: int = 64
    informal_guidance: bool = True
    lemma_guidance: bool = True
    workers: int = 1
    preamble: str = ""
    template_dir: Optional[str] = None
    endpoints: Mapping[str, EndpointConfig] = field(default_factory=dict)
    verifier: VerifierSettings = field(default_factory=VerifierSettings)

    def validate(self) -> None:
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.initial_attempts < 0:
            raise ConfigError("initial_attempts must be >= 0")
        if self.initial_attempts > self.budget:
            raise ConfigError(
                f"initial_attempts ({self.initial_attempts}) exceeds the"
                f" budget ({self.budget})"
            )
        if self.max_lemmas < 1:
            raise ConfigError("max_lemmas must be >= 1")
        if self.max_main_attempts < 1:
            raise ConfigError("max_main_attempts must be >= 1")
        if self.verify_timeout_s <= 0:
            raise ConfigError("verify_timeout_s must be positive")
        if self.pool_cap < 1:
            raise ConfigError("pool_cap must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for role, endpoint in self.endpoints.items():
            if role != endpoint.role:
                raise ConfigError(
                    f"endpoint section [{role}] declares role {endpoint.role!r}"
                )
        if "prover" not in self.endpoints:
            raise ConfigError("an [endpoints.prover] section is required")
        if self.informal_guidance and "reasoner" not in self.endpoints:
            raise ConfigError(
                "informal_guidance needs an [endpoints.reasoner] section"
            )
        if (self.informal_guidance or self.lemma_guidance) and (
            "worker" not in self.endpoints
        ):
            raise ConfigError(
                "guidance features need an [endpoints.worker] section"
            )

    @property
    def verifier_sessions(self) -> int:
        return self.verifier.sessions or self.workers

    def content_hash(self) -> str:
        """Stable digest of everything that affects run results (used to
        key resumability; worker count deliberately excluded)."""
        payload = {
            "budget": self.budget,
            "initial_attempts": self.initial_attempts,
            "max_lemmas": self.max_lemmas,
            "max_main_attempts": self.max_main_attempts,
            "verify_timeout_s": self.verify_timeout_s,
            "pool_cap": self.pool_cap,
            "informal_guidance": self.informal_guidance,
            "lemma_guidance": self.lemma_guidance,
            "preamble": self.preamble,
            "template_dir": self.template_dir,
            "endpoints": {
                role: {
                    "base_url": ep.base_url,
                    "model": ep.model,
                    "temperature": ep.temperature,
                    "top_p": ep.top_p,
                    "max_tokens": ep.max_tokens,
                }
                for role, ep in sorted(self.endpoints.items())
            },
            "verifier": {
                "mode": self.verifier.mode,
                "command": list(self.verifier.command),
                "cwd": self.verifier.cwd,
            },
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


_SCALAR_KEYS = {
    "budget": int,
    "initial_attempts": int,
    "max_lemmas": int,
    "max_main_attempts": int,
    "verify_timeout_s": float,
    "pool_cap": int,
    "informal_guidance": bool,
    "lemma_guidance": bool,
    "workers": int,
    "preamble": str,
    "template_dir": str,
}

_ENDPOINT_KEYS = {
    "base_url": str,
    "model": str,
    "temperature": float,
    "top_p": float,
    "max_tokens": int,
    "timeout_s": float,
    "max_retries": int,
    "max_concurrency": int,
}

_VERIFIER_KEYS = {
    "mode": str,
    "command": list,
    "cwd": str,
    "sessions": int,
    "startup_timeout_s": float,
    "kill_grace_s": float,
}


def _coerce(value, want, key):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is not list and isinstance(value, bool) is not (want is bool):
        raise ConfigError(f"config key {key!r} has the wrong type")
    if not isinstance(value, want):
        raise ConfigError(f"config key {key!r} has the wrong type")
    return value


def _parse_endpoint(role: str, table: dict) -> EndpointConfig:
    if "base_url" not in table:
        raise ConfigError(f"[endpoints.{role}] needs base_url")
    kwargs = dict(_ROLE_SAMPLING.get(role, {}))
    for key, value in table.items():
        if key not in _ENDPOINT_KEYS:
            raise ConfigError(f"unknown key {key!r} in [endpoints.{role}]")
        kwargs[key] = _coerce(value, _ENDPOINT_KEYS[key], key)
    try:
        return EndpointConfig(role=role, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[endpoints.{role}]: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    scalars = {}
    for key, value in data.items():
        if key in ("endpoints", "verifier"):
            continue
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        scalars[key] = _coerce(value, _SCALAR_KEYS[key], key)

    endpoints: Dict[str, EndpointConfig] = {}
    for role, table in data.get("endpoints", {}).items():
        if role not in ROLES:
            raise ConfigError(f"unknown endpoint role {role!r}")
        if not isinstance(table, dict):
            raise ConfigError(f"[endpoints.{role}] must be a table")
        endpoints[role] = _parse_endpoint(role, table)

    verifier_table = data.get("verifier", {})
    if not isinstance(verifier_table, dict):
        raise ConfigError("[verifier] must be a table")
    vkwargs = {}
    for key, value in verifier_table.items():
        if key not in _VERIFIER_KEYS:
            raise ConfigError(f"unknown key {key!r} in [verifier]")
        vkwargs[key] = _coerce(value, _VERIFIER_KEYS[key], key)
    if "command" in vkwargs:
        if not all(isinstance(x, str) for x in vkwargs["command"]):
            raise ConfigError("verifier.command must be a list of strings")
        vkwargs["command"] = tuple(vkwargs["command"])

    config = RunConfig(
        endpoints=endpoints, verifier=VerifierSettings(**vkwargs), **scalars
    )
    config.validate()
    return config


def load_config(path: str, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a TOML config file and apply CLI overrides on top."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    config = config_from_dict(data)
    if overrides:
        clean = {k: v for k, v in overrides.items() if v is not None}
        if clean:
            config = replace(config, **clean)
            config.validate()
    return config
