"""Network configuration: Table-I presets, ablation switches, JSON loading."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

PRESETS: dict[str, dict[str, list[int]]] = {
    "adu_net": {
        "encoder_channels": [32, 64, 128, 256, 256],
        "adb_channels": [128, 64, 32, 16],
    },
    "adu_net_plus": {
        "encoder_channels": [64, 128, 256, 512, 512],
        "adb_channels": [256, 128, 64, 32],
    },
}

ATTENTION_MODES = ("none", "wmsa_only", "swmsa_only", "asymmetric")
FUSION_MODES = ("none", "cff_only", "gcff_only", "asymmetric")
DECODER_MODES = ("single", "dual_symmetric", "dual_asymmetric")
LOSS_MODES = ("ssim", "mse", "ssim_plus_mse")


class ConfigError(ValueError):
    """Raised when a configuration is malformed or violates an invariant."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def default_adb_channels(encoder_channels: list[int]) -> list[int]:
    e = encoder_channels
    return [e[3] // 2, e[2] // 2, e[1] // 2, e[0] // 2]


@dataclass(frozen=True)
class NetworkConfig:
    """Every architectural hyperparameter of the network.

    ``adb_channels[j]`` is the output width of decoder block j. Block j >= 1
    fuses its latent with encoder feature ``F_{3-j}``, so its ``Conv_in``
    emits ``encoder_channels[3-j]`` channels.
    """

    preset: str = "adu_net"
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    adb_channels: tuple[int, ...] = (128, 64, 32, 16)
    window_size: int = 8
    num_heads: int = 4
    attention_mode: str = "asymmetric"
    fusion_mode: str = "asymmetric"
    decoder_mode: str = "dual_asymmetric"
    loss_mode: str = "ssim"
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "adb_channels", tuple(int(c) for c in self.adb_channels))
        self.validate()

    # -- derived widths -------------------------------------------------
    def attended_channels(self) -> list[int]:
        """Channel count seen by fusion/attention in ADB_0..ADB_3."""
        e = self.encoder_channels
        return [e[3], e[2], e[1], e[0]]

    @property
    def dual(self) -> bool:
        return self.decoder_mode != "single"

    def validate(self) -> None:
        if self.preset not in (*PRESETS, "custom"):
            raise ConfigError("preset", f"unknown preset {self.preset!r}")
        enc, adb = self.encoder_channels, self.adb_channels
        if len(enc) != 5:
            raise ConfigError("encoder_channels", f"expected 5 entries, got {len(enc)}")
        if len(adb) != 4:
            raise ConfigError("adb_channels", f"expected 4 entries, got {len(adb)}")
        if any(c <= 0 for c in enc):
            raise ConfigError("encoder_channels", "channels must be positive")
        if any(c <= 0 for c in adb):
            raise ConfigError("adb_channels", "channels must be positive")
        if any(b < a for a, b in zip(enc, enc[1:])):
            raise ConfigError("encoder_channels", "must be non-decreasing")
        if enc[3] != enc[4]:
            raise ConfigError("encoder_channels", "last two stages must be equal")
        if self.preset != "custom":
            ref = PRESETS[self.preset]
            if list(enc) != ref["encoder_channels"]:
                raise ConfigError("encoder_channels", f"preset {self.preset} requires {ref['encoder_channels']}")
            if list(adb) != ref["adb_channels"]:
                raise ConfigError("adb_channels", f"preset {self.preset} requires {ref['adb_channels']}")
        if self.window_size < 1:
            raise ConfigError("window_size", "must be >= 1")
        if self.num_heads < 1:
            raise ConfigError("num_heads", "must be >= 1")
        for c in self.attended_channels():
            if c % self.num_heads:
                raise ConfigError("num_heads", f"{self.num_heads} does not divide attended width {c}")
        for name, value, allowed in (
            ("attention_mode", self.attention_mode, ATTENTION_MODES),
            ("fusion_mode", self.fusion_mode, FUSION_MODES),
            ("decoder_mode", self.decoder_mode, DECODER_MODES),
            ("loss_mode", self.loss_mode, LOSS_MODES),
        ):
            if value not in allowed:
                raise ConfigError(name, f"{value!r} not in {allowed}")
        if not self.leaky_slope >= 0:
            raise ConfigError("leaky_slope", "must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["adb_channels"] = list(self.adb_channels)
        return d

    def hash(self) -> str:
        """Stable digest of the expanded config, stored in checkpoints."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> NetworkConfig:
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name for f in dataclasses.fields(NetworkConfig)}


def expand(raw: dict[str, Any] | NetworkConfig) -> NetworkConfig:
    """Expand a raw mapping (or an existing config) into a validated config.

    Preset channel lists are filled in when absent; for ``custom`` any
    missing channel list falls back to the ``adu_net`` values, and a missing
    ``adb_channels`` is derived from ``encoder_channels``.
    """
    if isinstance(raw, NetworkConfig):
        raw = raw.to_dict()
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    data = dict(raw)
    preset = data.setdefault("preset", "adu_net")
    if preset in PRESETS:
        for key, value in PRESETS[preset].items():
            data.setdefault(key, value)
    elif preset == "custom":
        data.setdefault("encoder_channels", PRESETS["adu_net"]["encoder_channels"])
        enc = data["encoder_channels"]
        if not isinstance(enc, (list, tuple)) or len(enc) != 5:
            raise ConfigError("encoder_channels", "expected a list of 5 ints")
        data.setdefault("adb_channels", default_adb_channels(list(enc)))
    else:
        raise ConfigError("preset", f"unknown preset {preset!r}")
    try:
        return NetworkConfig(**data)
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from exc


def load_config(path: str | Path) -> NetworkConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"cannot parse {path}: {exc}") from exc
    return expand(raw)


def tiny_config(**overrides) -> NetworkConfig:
    """Small custom network used for desk-scale training runs."""
    raw = {
        "preset": "custom",
        "encoder_channels": [8, 16, 32, 64, 64],
        "adb_channels": [32, 16, 8, 8],
        "window_size": 4,
        "leaky_slope": 0.2,
    }
    raw.update(overrides)
    return expand(raw)
