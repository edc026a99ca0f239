"""Run configuration: a strict JSON schema over the module config dataclasses.

One file describes a whole run: data source, class split, model dimensions,
training hyperparameters, and the evaluation protocol. Loading is strict
(unknown keys anywhere are an error, so typos fail loudly instead of
silently using a default) and the resolved tree serializes back to the
same schema, which is what the CLI writes next to its outputs.

Dotted-path overrides ("train.learning_rate=1e-3") patch the raw dict
before validation; values parse as JSON, falling back to bare strings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .classifier import ClassifierConfig
from .conditioner import ConditionerConfig
from .datagen import SyntheticSpec
from .encoder import EncoderConfig
from .evaluator import EvalProtocol
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _build(cls, section, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {type(section).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class DataConfig:
    """Either a synthetic generator spec or a path to a dataset file."""

    synthetic: SyntheticSpec | None = None
    path: str | None = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.path is None):
            raise ConfigError("data: exactly one of 'synthetic' or 'path' is required")


@dataclass(frozen=True)
class SplitConfig:
    counts: tuple  # (n_train, n_val, n_test)
    seed: int = 0

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) != 3 or any(c < 0 for c in counts):
            raise ConfigError(f"split.counts must be three nonnegative ints, got {counts}")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    split: SplitConfig
    encoder: EncoderConfig = EncoderConfig()
    conditioner: ConditionerConfig = ConditionerConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalProtocol = EvalProtocol()
    sweep_b: tuple = (5, 50, 100)
    variants: tuple = ("inductive-baseline", "TNI", "TNT", "VNI", "VNT")
    out_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "sweep_b", tuple(int(b) for b in self.sweep_b))
        object.__setattr__(self, "variants", tuple(self.variants))
        if not self.sweep_b:
            raise ConfigError("sweep_b must list at least one query size")


_SECTIONS = {
    "encoder": EncoderConfig,
    "conditioner": ConditionerConfig,
    "classifier": ClassifierConfig,
    "train": TrainConfig,
    "eval": EvalProtocol,
}


def build_run_config(raw: dict) -> RunConfig:
    """Validate a raw JSON dict into a RunConfig; every key is checked."""
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"top level: unknown keys {unknown}")
    if "data" not in raw or "split" not in raw:
        raise ConfigError("top level: 'data' and 'split' sections are required")

    data_raw = dict(raw["data"]) if isinstance(raw["data"], dict) else raw["data"]
    if not isinstance(data_raw, dict):
        raise ConfigError("data: expected an object")
    data_unknown = sorted(set(data_raw) - {"synthetic", "path"})
    if data_unknown:
        raise ConfigError(f"data: unknown keys {data_unknown}")
    synthetic = data_raw.get("synthetic")
    if synthetic is not None:
        synthetic = _build(SyntheticSpec, synthetic, "data.synthetic")
    data = DataConfig(synthetic=synthetic, path=data_raw.get("path"))
    split = _build(SplitConfig, raw["split"], "split")

    kwargs = {"data": data, "split": split}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build(cls, raw[name], name)
    for name in ("sweep_b", "variants", "out_dir"):
        if name in raw:
            kwargs[name] = raw[name]
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=()) -> RunConfig:
    """Read a JSON config file, apply dotted overrides, validate."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for pair in overrides:
        apply_override(raw, pair)
    return build_run_config(raw)


def apply_override(raw: dict, pair: str) -> None:
    """Set one dotted-path key, e.g. 'train.learning_rate=1e-3'.

    The value is parsed as JSON when possible ('true', '3e-3', '[5,50]'),
    otherwise kept as a string. Intermediate objects are created as needed;
    a typo'd path therefore surfaces later as an unknown-key error.
    """
    if "=" not in pair:
        raise ConfigError(f"override {pair!r} is not of the form key.path=value")
    dotted, text = pair.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {pair!r} has an empty key path")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {pair!r}: {key!r} is not an object")
    node[keys[-1]] = value


def resolved_dict(config: RunConfig) -> dict:
    """The fully resolved tree, loadable again by build_run_config."""
    out = asdict(config)
    data = {}
    if config.data.synthetic is not None:
        data["synthetic"] = asdict(config.data.synthetic)
    if config.data.path is not None:
        data["path"] = config.data.path
    out["data"] = data
    out["sweep_b"] = list(config.sweep_b)
    out["variants"] = list(config.variants)
    out["split"] = {"counts": list(config.split.counts), "seed": config.split.seed}
    return out


def save_resolved(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
