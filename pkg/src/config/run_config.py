"""
Run configuration: the flat `key = value` file used by every command.

    # comment
    seed = 3
    num_stages = 2
    stage.2.t_fg = 0.6
    anchor.strides = 8, 16

Stage fields are t_fg, t_bg, lambda and alpha under `stage.<i>.` (1-based).
Stages without overrides take default_stage_config(i). Any unknown key, duplicate
key or malformed line is a ConfigError naming the line.
"""
from __future__ import annotations

import re
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.assignment.assigner import StageConfig, default_stage_config
from src.geometry.anchors import AnchorSpec
from src.losses.detection import LossSettings
from src.utils.errors import ConfigError

BACKBONE_STRIDES = (2, 4, 8, 16)
MAX_STAGES = 3
NUM_SHAPE_CLASSES = 3

_STAGE_KEY = re.compile(r"^stage\.(\d+)\.(t_fg|t_bg|lambda|alpha)$")
_STAGE_FIELDS = {"t_fg": "t_fg", "t_bg": "t_bg", "lambda": "lambda_", "alpha": "alpha"}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    seed: int = 0
    num_stages: int = Field(default=2, ge=1, le=MAX_STAGES)
    stages: list[StageConfig] = []
    use_fcm: bool = True

    image_height: int = Field(default=64, gt=0)
    image_width: int = Field(default=64, gt=0)
    num_classes: int = Field(default=3, ge=1, le=NUM_SHAPE_CLASSES)
    channels: int = Field(default=16, ge=1)
    head_depth: int = Field(default=2, ge=0)
    anchor_strides: tuple[int, ...] = Field(default=(8, 16), alias="anchor.strides")
    anchor_scales: tuple[float, ...] = Field(default=(12.0, 16.0), alias="anchor.scales")
    anchor_ratios: tuple[float, ...] = Field(default=(0.5, 1.0, 2.0), alias="anchor.ratios")
    prior_prob: float = Field(default=0.01, gt=0.0, lt=1.0)

    focal_alpha: float = Field(default=0.25, ge=0.0, le=1.0)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    smooth_l1_beta: float = Field(default=1.0 / 9.0, ge=0.0)

    lr: float = Field(default=0.01, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    grad_clip_norm: float = Field(default=10.0, ge=0.0)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=8, ge=1)
    train_scenes: int = Field(default=1000, ge=1)
    val_scenes: int = Field(default=200, ge=1)
    hflip: bool = True
    clip_refined_boxes: bool = True

    nms_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    score_threshold: float = Field(default=0.05, ge=0.0, le=1.0)
    top_k: int = Field(default=100, ge=1)
    ensemble_mode: Literal["average", "last"] = "average"

    min_shapes: int = Field(default=1, ge=1)
    max_shapes: int = Field(default=4, ge=1)
    min_size: float = Field(default=8.0, ge=4.0)
    max_size: float = Field(default=28.0, ge=4.0)

    @field_validator("anchor_strides", "anchor_scales", "anchor_ratios", mode="before")
    @classmethod
    def _split_list(cls, v: Any) -> Any:
        if isinstance(v, str):
            return tuple(part.strip() for part in v.split(",") if part.strip())
        return v

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if not self.stages:
            self.stages = [default_stage_config(i) for i in range(1, self.num_stages + 1)]
        if len(self.stages) != self.num_stages:
            raise ValueError(f"num_stages={self.num_stages} but {len(self.stages)} stage configs given")
        if not self.anchor_strides or not self.anchor_scales or not self.anchor_ratios:
            raise ValueError("anchor.strides, anchor.scales and anchor.ratios must be non-empty")
        if list(self.anchor_strides) != sorted(set(self.anchor_strides)):
            raise ValueError("anchor.strides must be strictly increasing")
        for stride in self.anchor_strides:
            if stride not in BACKBONE_STRIDES:
                raise ValueError(f"anchor stride {stride} is not a backbone stride {BACKBONE_STRIDES}")
            if self.image_height % stride or self.image_width % stride:
                raise ValueError(f"anchor stride {stride} does not divide image size {self.image_height}x{self.image_width}")
        if any(s <= 0 for s in self.anchor_scales) or any(r <= 0 for r in self.anchor_ratios):
            raise ValueError("anchor scales and ratios must be positive")
        if self.min_shapes > self.max_shapes:
            raise ValueError("min_shapes must be <= max_shapes")
        if self.min_size > self.max_size:
            raise ValueError("min_size must be <= max_size")
        if self.max_size > min(self.image_height, self.image_width):
            raise ValueError("max_size must fit inside the image")
        return self

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    def anchor_spec(self) -> AnchorSpec:
        return AnchorSpec(
            level_strides=tuple(self.anchor_strides),
            scales=tuple(self.anchor_scales),
            aspect_ratios=tuple(self.anchor_ratios),
        )

    def loss_settings(self) -> LossSettings:
        return LossSettings(
            focal_alpha=self.focal_alpha,
            focal_gamma=self.focal_gamma,
            smooth_l1_beta=self.smooth_l1_beta,
        )

    def with_overrides(self, **changes: Any) -> "RunConfig":
        """Re-validated copy; stage configs are rebuilt from defaults if num_stages changes."""
        data = self.model_dump()
        data["stages"] = list(self.stages)
        if "num_stages" in changes and changes["num_stages"] != self.num_stages and "stages" not in changes:
            data["stages"] = []
        data.update(changes)
        return build_run_config(data)


def build_run_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def _field_keys() -> dict[str, str]:
    """File key -> field name."""
    keys = {}
    for name, info in RunConfig.model_fields.items():
        if name == "stages":
            continue
        keys[info.alias or name] = name
    return keys


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    fields = _field_keys()
    values: dict[str, str] = {}
    stage_values: dict[int, dict[str, float]] = {}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value in {raw.strip()!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        stage_match = _STAGE_KEY.match(key)
        if stage_match:
            index = int(stage_match.group(1))
            try:
                number = float(value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: {key} must be a number, got {value!r}")
            stage_values.setdefault(index, {})[_STAGE_FIELDS[stage_match.group(2)]] = number
        elif key in fields:
            values[fields[key]] = value
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")

    try:
        num_stages = int(values.get("num_stages", RunConfig.model_fields["num_stages"].default))
    except ValueError:
        raise ConfigError(f"{source}: num_stages must be an integer, got {values['num_stages']!r}")
    for index in stage_values:
        if not 1 <= index <= num_stages:
            raise ConfigError(f"{source}: stage.{index} is outside 1..{num_stages}")
    stages = []
    for index in range(1, num_stages + 1):
        base = default_stage_config(index)
        overrides = stage_values.get(index, {})
        if "t_fg" in overrides and "t_bg" not in overrides and index > 1:
            overrides = {**overrides, "t_bg": round(overrides["t_fg"] - 0.1, 10)}
        stages.append(
            StageConfig(
                t_fg=overrides.get("t_fg", base.t_fg),
                t_bg=overrides.get("t_bg", base.t_bg),
                lambda_=overrides.get("lambda_", base.lambda_),
                alpha=overrides.get("alpha", base.alpha),
            )
        )
    return build_run_config({**values, "stages": stages})


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_run_config(path.read_text(encoding="utf-8"), source=str(path))


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def dump_run_config(cfg: RunConfig) -> str:
    """Inverse of parse_run_config: every key written explicitly."""
    lines = []
    for key, name in _field_keys().items():
        lines.append(f"{key} = {_format_value(getattr(cfg, name))}")
    for index, stage in enumerate(cfg.stages, start=1):
        lines.append(f"stage.{index}.t_fg = {stage.t_fg!r}")
        lines.append(f"stage.{index}.t_bg = {stage.t_bg!r}")
        lines.append(f"stage.{index}.lambda = {stage.lambda_!r}")
        lines.append(f"stage.{index}.alpha = {stage.alpha!r}")
    return "\n".join(lines) + "\n"
