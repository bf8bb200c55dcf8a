"""Scenario configuration: dataclasses, YAML/JSON loading and dotted-path overrides."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .attacker import InferenceConfig
from .defenses import DefenseConfig
from .errors import ConfigError
from .link import ChannelConfig, EncapsulationConfig, Host

ACTIONS = ("reset", "inject")
DEFAULT_PAYLOAD = "HTTP/1.1 200 OK\r\nContent-Length: 40\r\n\r\n<script>alert('injected')</script>\r\n"


@dataclass(frozen=True)
class ServerSpec:
    """The remote endpoint and the initial state of the victim's connection.

    ``None`` for a sequence variable means "drawn from the scenario seed".
    """

    ip: str = "203.0.113.10"
    port: int = 22
    rcv_nxt: int | None = None
    rcv_wnd: int = 65535
    snd_una: int | None = None
    snd_wnd: int = 65535
    in_flight: int = 0
    timestamps: bool = True
    sack: bool = True
    bits: int = 32
    connection_open: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.port <= 65535:
            raise ConfigError("server port out of range")
        if self.in_flight < 0:
            raise ConfigError("in_flight must be non-negative")


@dataclass(frozen=True)
class ActionSpec:
    kind: str = "reset"
    payload: str = DEFAULT_PAYLOAD

    def __post_init__(self) -> None:
        if self.kind not in ACTIONS:
            raise ConfigError(f"action must be one of {ACTIONS}")


@dataclass(frozen=True)
class LiveTraffic:
    """Client-to-server data on the victim connection, shifting the server's rcv_nxt."""

    bytes_per_s: float = 100.0
    chunk: int = 100

    def __post_init__(self) -> None:
        if self.bytes_per_s <= 0 or self.chunk < 1:
            raise ConfigError("live traffic needs a positive rate and chunk size")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    name: str = "default"
    victim: Host = field(default_factory=lambda: Host("02:00:00:00:00:07", "192.168.1.7"))
    attacker: Host = field(default_factory=lambda: Host("02:00:00:00:00:66", "192.168.1.66"))
    bssid: str = "02:00:00:00:00:01"
    others: tuple[Host, ...] = ()
    server: ServerSpec = ServerSpec()
    # None: drawn uniformly from the inference port range
    true_client_port: int | None = None
    channel: ChannelConfig = ChannelConfig()
    encaps: EncapsulationConfig = EncapsulationConfig()
    inference: InferenceConfig = InferenceConfig()
    defenses: DefenseConfig = DefenseConfig()
    action: ActionSpec = ActionSpec()
    live_traffic: LiveTraffic | None = None
    duration_limit_s: float = 7200.0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.duration_limit_s <= 0:
            raise ConfigError("duration_limit_s must be positive")
        if self.true_client_port is not None and not 1 <= self.true_client_port <= 65535:
            raise ConfigError("true_client_port out of range")
        if self.encaps.padding.mode != "none" and self.defenses.padding.mode != "none" \
                and self.encaps.padding != self.defenses.padding:
            raise ConfigError("conflicting padding policies in encaps and defenses")
        macs = [h.mac for h in (self.victim, self.attacker, *self.others)] + [self.bssid.lower()]
        if len(set(macs)) != len(macs):
            raise ConfigError("MAC addresses must be distinct")
        channels = self.channel.channels
        for host in (self.victim, self.attacker, *self.others):
            if host.channel is not None and host.channel not in channels:
                raise ConfigError(f"host {host.mac} on channel {host.channel} outside the network")


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _build(tp, value, path: str):
    tp, optional = _strip_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path or 'config'}: value required")
    if dataclasses.is_dataclass(tp):
        if dataclasses.is_dataclass(value):
            return value
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return from_dict(tp, value, path)
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        args = typing.get_args(tp)
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(args) != len(value):
                raise ConfigError(f"{path}: expected {len(args)} items")
            items = [_build(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value))]
        else:
            inner = args[0] if args else Any
            items = [_build(inner, v, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from nested mappings, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _build(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from None


def to_dict(cfg) -> dict:
    """Plain nested dict of a config, suitable for YAML or JSON."""
    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        return value
    return convert(cfg)


def field_type(cls, path: str):
    """Type of the field at dotted ``path``; ConfigError if it does not resolve."""
    tp = cls
    for part in path.split("."):
        tp, _ = _strip_optional(tp)
        if not dataclasses.is_dataclass(tp):
            raise ConfigError(f"axis {path!r} does not resolve: {part!r} is not a section")
        hints = typing.get_type_hints(tp)
        if part not in hints:
            raise ConfigError(f"axis {path!r} does not resolve: no field {part!r}")
        tp = hints[part]
    return tp


def set_path(data: dict, path: str, value) -> None:
    """Set a dotted key in a nested dict, creating intermediate sections."""
    parts = path.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set {path!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` overrides; values are parsed as YAML scalars."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        field_type(ScenarioConfig, key)
        set_path(data, key, yaml.safe_load(raw))
    return data


def load_dict(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def load_config(path: str | Path | None = None, overrides: list[str] = (), seed: int | None = None) -> ScenarioConfig:
    data = load_dict(path) if path is not None else {}
    apply_overrides(data, list(overrides))
    if seed is not None:
        data["seed"] = seed
    return from_dict(ScenarioConfig, data)


def with_value(cfg: ScenarioConfig, path: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with the field at dotted ``path`` replaced."""
    field_type(ScenarioConfig, path)
    data = to_dict(cfg)
    set_path(data, path, value)
    return from_dict(ScenarioConfig, data)
