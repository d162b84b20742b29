"""Run configuration: defaults, ablation presets, file/env/CLI resolution.

Precedence when resolving a run: CLI overrides > environment (SSMREG_*) >
config file > built-in defaults. Defaults are desk scale so everything runs
on a laptop CPU; `full_scale()` restores the full-size settings.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .models import ArchConfig

ENV_PREFIX = "SSMREG_"

# modality-mixing presets: (appearance mode, content mode, flow mode, roi mask)
ABLATIONS = {
    "b1": {"md_mode": "none", "mi_mode": "none", "flow_mode": "none",
           "use_roi_mask": False},
    "b2": {"md_mode": "bi", "mi_mode": "none", "flow_mode": "none",
           "use_roi_mask": False},
    "b3": {"md_mode": "bi", "mi_mode": "bi", "flow_mode": "none",
           "use_roi_mask": False},
    "b4": {"md_mode": "uni", "mi_mode": "uni", "flow_mode": "uni",
           "use_roi_mask": False},
    "b5": {"md_mode": "bi", "mi_mode": "bi", "flow_mode": "bi",
           "use_roi_mask": False},
    "b6": {"md_mode": "bi", "mi_mode": "bi", "flow_mode": "bi",
           "use_roi_mask": True},
}

_MODES = ("none", "uni", "bi")


@dataclass
class TrainConfig:
    # data
    image_size: tuple = (64, 64)
    channels: int = 1
    # architecture
    code_channels: int = 32
    kernel_size: int = 3
    n_blocks: int = 4
    d_state: int = 2
    unet_depth: int = 3
    unet_base: int = 16
    md_mode: str = "bi"
    mi_mode: str = "bi"
    flow_mode: str = "bi"
    use_roi_mask: bool = True
    # optimization
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    poly_power: float = 0.9
    seed: int = 3407
    # loss weights
    w_sim: float = 100.0
    w_smooth: float = 10.0
    w_guide: float = 25.0
    w_recon: float = 10.0
    # runtime
    device: str = "cpu"

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        for name in ("channels", "code_channels", "kernel_size", "n_blocks",
                     "d_state", "unet_depth", "unet_base"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"bad image_size {self.image_size}")
        for name in ("md_mode", "mi_mode", "flow_mode"):
            if getattr(self, name) not in _MODES:
                raise ConfigError(f"{name} must be one of {_MODES}")
        if min(self.w_sim, self.w_smooth, self.w_guide, self.w_recon) < 0:
            raise ConfigError("loss weights must be >= 0")

    def arch(self) -> ArchConfig:
        return ArchConfig(
            channels=self.channels, code_channels=self.code_channels,
            kernel_size=self.kernel_size, n_blocks=self.n_blocks,
            d_state=self.d_state, unet_depth=self.unet_depth,
            unet_base=self.unet_base, md_mode=self.md_mode,
            mi_mode=self.mi_mode, flow_mode=self.flow_mode)

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.w_sim, beta=self.w_smooth,
                           gamma=self.w_guide, delta=self.w_recon)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d


def full_scale() -> TrainConfig:
    """Full-size settings; not runnable on a desk machine."""
    return TrainConfig(image_size=(128, 128), channels=3, d_state=16,
                       epochs=1000, batch_size=8)


def apply_ablation(cfg: TrainConfig, name: str) -> TrainConfig:
    try:
        return replace(cfg, **ABLATIONS[name.lower()])
    except KeyError:
        raise ConfigError(
            f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _coerce(name: str, value):
    if not isinstance(value, str):
        return value
    f = _FIELDS[name]
    try:
        if f.type in ("int", int):
            return int(value)
        if f.type in ("float", float):
            return float(value)
        if f.type in ("tuple", tuple):
            return tuple(int(v) for v in value.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse {name}={value!r}") from None
    if f.type in ("bool", bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {name}={value!r}")
    return value


def resolve_config(file: str | None = None, env: dict | None = None,
                   overrides: dict | None = None) -> TrainConfig:
    """Layer a config file, SSMREG_* environment variables, and explicit
    overrides (highest) on top of the defaults."""
    values: dict = {}
    if file:
        loaded = json.loads(Path(file).read_text())
        unknown = set(loaded) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys in {file}: {sorted(unknown)}")
        values.update(loaded)
    env = os.environ if env is None else env
    for key, raw in env.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in _FIELDS:
                values[name] = raw
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config override {key!r}")
        values[key] = val
    values = {k: _coerce(k, v) for k, v in values.items()}
    return TrainConfig(**values)


def save_config(cfg: TrainConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def config_digest(cfg: TrainConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
