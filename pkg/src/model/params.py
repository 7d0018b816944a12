"""
Parameter containers for the cascade detector.

Names are hierarchical and stable, e.g. `backbone.conv2.weight`,
`stage1.head.tower0.bias`, `stage2.fcm.offset_conv.weight`; they are the keys
of the checkpoint file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from src.config.run_config import RunConfig
from src.numerics.tensor import Tensor
from src.utils.errors import CheckpointError

FCM_KERNEL = 3


@dataclass(frozen=True)
class ArchSpec:
    in_channels: int
    channels: int
    num_classes: int
    anchors_per_location: int
    head_depth: int
    num_stages: int
    use_fcm: bool
    level_strides: tuple[int, ...]
    prior_prob: float

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ArchSpec":
        return cls(
            in_channels=3,
            channels=cfg.channels,
            num_classes=cfg.num_classes,
            anchors_per_location=cfg.anchor_spec().anchors_per_location,
            head_depth=cfg.head_depth,
            num_stages=cfg.num_stages,
            use_fcm=cfg.use_fcm,
            level_strides=tuple(cfg.anchor_strides),
            prior_prob=cfg.prior_prob,
        )

    def meta(self) -> dict[str, str]:
        return {
            "in_channels": str(self.in_channels),
            "channels": str(self.channels),
            "num_classes": str(self.num_classes),
            "anchors_per_location": str(self.anchors_per_location),
            "head_depth": str(self.head_depth),
            "num_stages": str(self.num_stages),
            "use_fcm": str(self.use_fcm).lower(),
            "level_strides": ",".join(str(s) for s in self.level_strides),
        }


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


@dataclass
class HeadParams:
    tower: list[ConvParams]
    cls_out: ConvParams
    reg_out: ConvParams

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for j, conv in enumerate(self.tower):
            yield from conv.named(f"{prefix}.tower{j}")
        yield from self.cls_out.named(f"{prefix}.cls_out")
        yield from self.reg_out.named(f"{prefix}.reg_out")


@dataclass
class FCMParams:
    # 1x1 conv producing (dy, dx) for each of the kh*kw bins
    offset_conv: ConvParams
    # kernel applied at the shifted bins
    deform: ConvParams

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.offset_conv.named(f"{prefix}.offset_conv")
        yield from self.deform.named(f"{prefix}.deform")


@dataclass
class CascadeParams:
    arch: ArchSpec
    backbone: list[ConvParams]
    heads: list[HeadParams]
    # one per stage; None for stage 1 and for every stage when the FCM is off
    fcms: list[FCMParams | None] = field(default_factory=list)

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for i, conv in enumerate(self.backbone, start=1):
            named.update(conv.named(f"backbone.conv{i}"))
        for s, head in enumerate(self.heads, start=1):
            fcm = self.fcms[s - 1] if s - 1 < len(self.fcms) else None
            if fcm is not None:
                named.update(fcm.named(f"stage{s}.fcm"))
            named.update(head.named(f"stage{s}.head"))
        for name, t in named.items():
            t.name = name
        return named

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Copy values in; names and shapes must match exactly."""
        named = self.named_parameters()
        for name, t in named.items():
            if name not in arrays:
                raise CheckpointError(f"architecture mismatch: checkpoint lacks tensor {name!r}")
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise CheckpointError(
                    f"architecture mismatch: {name!r} has shape {value.shape} in checkpoint, model expects {t.shape}"
                )
        extra = [name for name in arrays if name not in named]
        if extra:
            raise CheckpointError(f"architecture mismatch: checkpoint has unexpected tensor {extra[0]!r}")
        for name, t in named.items():
            t.data[...] = arrays[name]


def _conv(rng: np.random.Generator, c_out: int, c_in: int, k: int, std: float | None, bias: float = 0.0) -> ConvParams:
    """std=None means He-normal for a relu layer."""
    if std is None:
        std = math.sqrt(2.0 / (c_in * k * k))
    weight = rng.normal(0.0, std, size=(c_out, c_in, k, k)) if std > 0 else np.zeros((c_out, c_in, k, k))
    return ConvParams(Tensor(weight, requires_grad=True), Tensor(np.full(c_out, bias), requires_grad=True))


def prior_bias(prior_prob: float) -> float:
    return -math.log((1.0 - prior_prob) / prior_prob)


def init_head(rng: np.random.Generator, arch: ArchSpec) -> HeadParams:
    c, a = arch.channels, arch.anchors_per_location
    tower = [_conv(rng, c, c, 3, None) for _ in range(arch.head_depth)]
    cls_out = _conv(rng, a * arch.num_classes, c, 3, 0.01, bias=prior_bias(arch.prior_prob))
    reg_out = _conv(rng, a * 4, c, 3, 0.01)
    return HeadParams(tower=tower, cls_out=cls_out, reg_out=reg_out)


def init_fcm(rng: np.random.Generator, arch: ArchSpec) -> FCMParams:
    # Zero offsets at start: the module begins as a plain 3x3 conv.
    c = arch.channels
    offset_conv = _conv(rng, 2 * FCM_KERNEL * FCM_KERNEL, c, 1, 0.0)
    deform = _conv(rng, c, c, FCM_KERNEL, None)
    return FCMParams(offset_conv=offset_conv, deform=deform)


def backbone_depth(arch: ArchSpec) -> int:
    """Stride-2 blocks needed to reach the coarsest anchor level."""
    return int(round(math.log2(max(arch.level_strides))))


def init_params(arch: ArchSpec, seed: int) -> CascadeParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    backbone = []
    c_in = arch.in_channels
    for _ in range(backbone_depth(arch)):
        backbone.append(_conv(rng, arch.channels, c_in, 3, None))
        c_in = arch.channels
    heads = []
    fcms: list[FCMParams | None] = []
    for s in range(arch.num_stages):
        fcms.append(init_fcm(rng, arch) if s > 0 and arch.use_fcm else None)
        heads.append(init_head(rng, arch))
    params = CascadeParams(arch=arch, backbone=backbone, heads=heads, fcms=fcms)
    params.named_parameters()
    return params
