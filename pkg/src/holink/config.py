"""Flat key = value run configuration: defaults, parsing, canonical writing.

Unknown keys are rejected; values are typed by their defaults. Writing the
defaults and re-reading them round-trips byte-identically, which the tests
pin down. The per-dataset (sequence length, patch size, patience) presets
keep the sequence-row count constant at 32.
"""

from __future__ import annotations

from dataclasses import fields

from .model import ModelConfig

# (seq_len, patch_size, patience) per known dataset configuration
DATASET_PRESETS = {
    "mooc": (256, 8, 2),
    "lastfm": (512, 16, 0),
    "canparl": (2048, 64, 2),
}

_MODEL_KEYS = [f.name for f in fields(ModelConfig)]

# non-model keys and their defaults, in canonical file order
_RUN_KEYS = {
    "data_path": "",
    "out_dir": "runs",
    "split_train": 0.70,
    "split_val": 0.15,
    "split_test": 0.15,
    "inductive_fraction": 0.10,
}


class ConfigError(ValueError):
    """Bad key, bad value, or unreadable config file."""


def default_config() -> dict:
    cfg = {f.name: getattr(ModelConfig(), f.name) for f in fields(ModelConfig)}
    cfg.update(_RUN_KEYS)
    return cfg


def apply_preset(cfg: dict, name: str) -> dict:
    try:
        seq_len, patch_size, patience = DATASET_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown dataset preset {name!r}; choose from {sorted(DATASET_PRESETS)}"
        ) from None
    out = dict(cfg)
    out.update(seq_len=seq_len, patch_size=patch_size, patience=patience)
    return out


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as err:
        raise ConfigError(f"config key {key!r}: {err}") from None


def write_config(cfg: dict, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config_text(cfg))


def config_text(cfg: dict) -> str:
    defaults = default_config()
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    lines = ["# holink run configuration (key = value; '#' starts a comment)"]
    for key in defaults:
        value = cfg.get(key, defaults[key])
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def read_config(path) -> dict:
    defaults = default_config()
    cfg = dict(defaults)
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in defaults:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            cfg[key] = _parse_value(key, text, defaults[key])
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(**{k: cfg[k] for k in _MODEL_KEYS})


def split_ratios(cfg: dict) -> tuple[float, float, float]:
    return (cfg["split_train"], cfg["split_val"], cfg["split_test"])
