"""Run settings: a flat set of keys read from ``key = value`` text or JSON.

Text files allow blank lines and ``#`` comments. A run manifest (JSON with a
``config`` object) is accepted too, which is how runs are replayed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .policy import KLSign, PolicyParams, WorldConfig
from .trainer import WORKED_INIT, WORKED_REF, TrainConfig


class ConfigError(ValueError):
    """A config file could not be parsed (bad syntax, unknown key, wrong type)."""


@dataclass(frozen=True)
class Settings:
    theta_s: float = WORKED_INIT.theta_s
    theta_d_c: float = WORKED_INIT.theta_d_c
    theta_d_w: float = WORKED_INIT.theta_d_w
    ref_theta_s: float = WORKED_REF.theta_s
    ref_theta_d_c: float = WORKED_REF.theta_d_c
    ref_theta_d_w: float = WORKED_REF.theta_d_w
    len_correct: int = 8
    len_wrong: int = 8
    gamma: float = 1.0
    max_attempts: int = 8
    kl_weight: float = 1.0
    group_size: int = 16
    kl_sign_convention: str = KLSign.APPENDIX_C.value
    steps: int = 2000
    learning_rate: float = 0.02
    ref_refresh_interval: int = 50
    seed: int = 0
    balance_threshold: float = 2.0
    n: int = 1000
    lengths: tuple[int, ...] = (1, 8, 64)

    @property
    def params(self) -> PolicyParams:
        return PolicyParams(self.theta_s, self.theta_d_c, self.theta_d_w)

    @property
    def ref(self) -> PolicyParams:
        return PolicyParams(self.ref_theta_s, self.ref_theta_d_c, self.ref_theta_d_w)

    @property
    def world(self) -> WorldConfig:
        return WorldConfig(
            len_correct=self.len_correct,
            len_wrong=self.len_wrong,
            gamma=self.gamma,
            max_attempts=self.max_attempts,
            kl_weight=self.kl_weight,
            group_size=self.group_size,
            kl_sign_convention=KLSign(self.kl_sign_convention),
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            learning_rate=self.learning_rate,
            group_size=self.group_size,
            kl_weight=self.kl_weight,
            ref_refresh_interval=self.ref_refresh_interval,
            seed=self.seed,
            world=self.world,
            init=self.params,
            ref_init=self.ref,
            balance_threshold=self.balance_threshold,
        )

    def validate(self) -> Settings:
        """Raise ValueError if any derived object rejects these values."""
        self.train_config  # noqa: B018 - builds and validates everything
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if any(L < 1 for L in self.lengths):
            raise ValueError("lengths must be positive")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lengths"] = list(self.lengths)
        return d

    def replace(self, **changes) -> Settings:
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


_TYPES = {f.name: f.type for f in fields(Settings)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "str":
            return str(value)
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        return tuple(int(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind}") from exc


def from_mapping(data: dict, source: str = "<config>") -> Settings:
    values = {}
    for key, value in data.items():
        if key not in _TYPES:
            raise ConfigError(f"{source}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return Settings(**values)


def parse_kv(text: str, source: str = "<config>") -> Settings:
    data = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            data[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    return Settings(**data)


def load(path) -> Settings:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        return from_mapping(data, str(path))
    return parse_kv(text, str(path))


def dump_kv(settings: Settings) -> str:
    lines = []
    for key, value in settings.to_dict().items():
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def dump_json(settings: Settings) -> str:
    return json.dumps(settings.to_dict(), indent=2) + "\n"


def params_to_kv(params: PolicyParams) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in params.to_dict().items())


def params_from_kv(text: str) -> PolicyParams:
    s = parse_kv(text)
    return s.params


def world_to_kv(world: WorldConfig) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in world.to_dict().items())


def world_from_kv(text: str) -> WorldConfig:
    return parse_kv(text).world
