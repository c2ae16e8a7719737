"""Run configuration and its flat ``key = value`` file format.

Every field of TrainConfig, RenderConfig and ParamGroupConfig appears once
under its own name. Lines starting with ``#`` are comments; unknown keys are
rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InvalidParameterError
from .render import RenderConfig


SKETCH_VIEWS = ("front", "horizontal")


@dataclass(frozen=True)
class ParamGroupConfig:
    lr_position: float = 1e-4
    lr_opacity: float = 5e-2
    lr_sh: float = 1.5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr_position", "lr_opacity", "lr_sh", "lr_scale", "lr_rotation"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def lr(self, group: str) -> float:
        return {
            "position": self.lr_position,
            "rotation": self.lr_rotation,
            "log_scale": self.lr_scale,
            "opacity_logit": self.lr_opacity,
            "sh": self.lr_sh,
        }[group]


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 500
    batch_poses: int = 4
    guidance_refresh_interval: int = 30
    schedule_step_degrees: int = 30
    radius: float = 3.0
    fov_y: float = 50.0
    resolution: int = 512
    use_color: bool = True
    use_sds: bool = True
    use_sketch: bool = True
    color_weight: float = 1.0
    sds_weight: float = 1.0
    sketch_weight: float = 0.1
    # "front": horizontal angle 0 only; "horizontal": every horizontal-circle pose
    sketch_views: str = "front"
    raw_pose_weight: bool = False
    sds_t_min: int = 20
    sds_t_max: int = 980
    prompt: str = ""
    prune_interval: int = 0
    prune_threshold: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise InvalidParameterError("total_steps must be positive")
        if self.batch_poses < 1:
            raise InvalidParameterError("batch_poses must be >= 1")
        if self.guidance_refresh_interval < 1:
            raise InvalidParameterError("guidance_refresh_interval must be >= 1")
        if self.sketch_views not in SKETCH_VIEWS:
            raise InvalidParameterError(f"sketch_views must be one of {', '.join(SKETCH_VIEWS)}")
        if not 1 <= self.sds_t_min <= self.sds_t_max <= 1000:
            raise InvalidParameterError("need 1 <= sds_t_min <= sds_t_max <= 1000")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    groups: ParamGroupConfig = field(default_factory=ParamGroupConfig)


_SECTIONS = {"train": TrainConfig, "render": RenderConfig, "groups": ParamGroupConfig}


def _key_owner() -> dict[str, tuple[str, dataclasses.Field]]:
    owners = {}
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            owners[f.name] = (section, f)
    return owners


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, template, key: str):
    try:
        if isinstance(template, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(template, tuple):
            return tuple(float(p) for p in text.split(","))
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        return text
    except ValueError as exc:
        raise FormatError(f"bad value for {key!r}: {text!r}") from exc


def serialize_config(config: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(config, section)
        lines.append(f"# {section}")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    owners = _key_owner()
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    defaults = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in owners:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        section, _f = owners[key]
        template = getattr(getattr(defaults, section), key)
        values[section][key] = _parse(val, template, key)
    return RunConfig(**{s: cls(**values[s]) for s, cls in _SECTIONS.items()})


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(serialize_config(config))
