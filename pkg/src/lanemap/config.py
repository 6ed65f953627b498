"""Key=value configuration files mirroring the pipeline's config dataclasses.

Format: UTF-8 INI-style sections, one per config group:

    [heatmap]
    stride = 4
    sigma = 2.0

    [match]
    k = 20
    crop_size = 64

    [eval]
    thresholds = 2.0, 5.0, 10.0

    [synth]
    seed = 0
    width = 320

Unknown sections or keys are rejected by name; values are coerced to the
annotated field types.  Command-line flags override file values.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .evaluation import EvalConfig
from .heatmap import HeatmapConfig, HeatmapMode
from .matching import MatchConfig
from .synth import SynthConfig

_SECTIONS = {
    "heatmap": HeatmapConfig,
    "match": MatchConfig,
    "eval": EvalConfig,
    "synth": SynthConfig,
}


@dataclass(frozen=True)
class Settings:
    heatmap: HeatmapConfig = HeatmapConfig()
    match: MatchConfig = MatchConfig()
    eval: EvalConfig = EvalConfig()
    synth: SynthConfig = SynthConfig()


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"key {key!r}: cannot parse {raw!r} as a boolean")


def _coerce(raw: str, field: dataclasses.Field, key: str):
    t = field.type
    try:
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t == "bool":
            return _parse_bool(raw, key)
        if t == "str":
            return raw.strip()
        if t == "HeatmapMode":
            return HeatmapMode(raw.strip())
        if t.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(","))
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"key {key!r}: cannot parse {raw!r} as {t}") from exc
    raise ValidationError(f"key {key!r} has unsupported type {t}")


def _build_section(cls, items: dict[str, str], section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in fields:
            raise ValidationError(f"unknown key {key!r} in section [{section}]")
        kwargs[key] = _coerce(raw, fields[key], f"{section}.{key}")
    return cls(**kwargs)


def load_settings(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
    except configparser.Error as exc:
        raise ValidationError(f"config {p}: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValidationError(f"unknown section [{section}] in {p}")
        kwargs[section] = _build_section(_SECTIONS[section], dict(parser.items(section)), section)
    return Settings(**kwargs)
