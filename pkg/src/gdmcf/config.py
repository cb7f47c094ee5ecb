"""Training/run configuration and the flat ``key = value`` config file format.

File format: one ``key = value`` per line, ``#`` starts a comment, blank
lines ignored. Keys are the field names of ``TrainConfig`` and
``RunConfig``. Booleans accept true/false/on/off/1/0; ``ks`` is a comma
separated list.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

CORRUPTION_MODES = ("both", "continuous_only", "discrete_only", "none")
LR_GRID = (0.0002, 0.001, 0.005, 0.01)
STEP_GRID = (2, 5, 10, 20, 50, 100, 500)
VARIANT_NAMES = {
    "both": "GDMCF",
    "continuous_only": "GDMCF_CC",
    "discrete_only": "GDMCF_DC",
    "none": "GDMCF_NC",
}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 400
    lr: float = 0.001
    lambda1: float = 0.1
    steps: int = 5
    tau: float = 0.2
    layers: int = 2
    dim: int = 1000
    proj_dim: int = 0  # 0 means "same as dim"
    step_dim: int = 10
    scc: float = 0.1
    sdc: float = 0.0008
    corruption_mode: str = "both"
    user_active: bool = True
    readout: str = "mean"
    neg_sample: int = 0  # 0 scores every item column in the structural loss
    patience: int = 10
    eval_k: int = 20
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("epochs", "patience", "layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("batch_size", "steps", "dim", "step_dim", "eval_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.proj_dim < 0 or self.neg_sample < 0:
            raise ConfigError("proj_dim and neg_sample must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.lambda1 < 0:
            raise ConfigError("lambda1 must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0 < self.scc < 1:
            raise ConfigError("scc must lie in (0, 1)")
        if not 0 <= self.sdc < 1:
            raise ConfigError("sdc must lie in [0, 1)")
        if self.corruption_mode not in CORRUPTION_MODES:
            raise ConfigError(f"corruption_mode must be one of {CORRUPTION_MODES}")
        if self.readout not in ("mean", "last"):
            raise ConfigError("readout must be 'mean' or 'last'")

    @property
    def effective_proj_dim(self) -> int:
        return self.proj_dim or self.dim

    @property
    def variant(self) -> str:
        name = VARIANT_NAMES[self.corruption_mode]
        return name if self.user_active else name + "_NUA"


@dataclass
class RunConfig:
    data: str = ""
    split_dir: str = ""
    checkpoint: str = ""
    out_dir: str = "."
    ks: tuple = (10, 20)
    train: TrainConfig = field(default_factory=TrainConfig)


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "on", "yes"):
        return True
    if v in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(kind, text: str):
    if kind in (bool, "bool"):
        return _parse_bool(text)
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in (tuple, "tuple"):
        return tuple(int(k) for k in text.replace(" ", "").split(",") if k)
    return text.strip()


_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_RUN_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name != "train"}


def parse_config(text: str) -> dict:
    """Parse config text into a dict of typed values (unknown keys rejected)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        kind = _TRAIN_FIELDS.get(key) or _RUN_FIELDS.get(key)
        if kind is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(kind, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return values


def build_run_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then overrides (``None`` overrides are ignored)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    train_kw = {k: v for k, v in merged.items() if k in _TRAIN_FIELDS}
    run_kw = {k: v for k, v in merged.items() if k in _RUN_FIELDS}
    try:
        return RunConfig(train=TrainConfig(**train_kw), **run_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        values = parse_config(fh.read())
    return build_run_config(values, overrides)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in _RUN_FIELDS:
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{name} = {val}")
    for name in _TRAIN_FIELDS:
        val = getattr(cfg.train, name)
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{name} = {val}")
    return "\n".join(lines) + "\n"


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def train_config_from_strings(values: dict) -> TrainConfig:
    """Rebuild a TrainConfig from the string values stored in a checkpoint header."""
    kw = {}
    for key, text in values.items():
        if key in _TRAIN_FIELDS:
            kw[key] = _coerce(_TRAIN_FIELDS[key], text)
    return TrainConfig(**kw)
