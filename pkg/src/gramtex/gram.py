"""Gram matrices, Gram Blocks and the Gram-Net classifier.

Gram-Net is a small residual CNN whose classifier sees, besides the pooled
backbone feature, a global-texture feature from a Gram Block at each of six
taps: the raw input, the stem output, and the output of each of the four
stages (each of which is followed by a downsampling step: the next stage's
stride-2 entry conv, or the final global pool).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .nn import ShapeError, concat_features, global_avg_pool, relu


def gram_matrix(f: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    """Channel Gram matrix ``G_ij = sum_k F_ik F_jk`` over vectorized positions.

    ``f`` is ``(C, H, W)`` or a batch ``(B, C, H, W)``. With ``normalize`` the
    sum is divided by ``K = H * W``. Single-precision inputs are accumulated
    in double precision and rounded once, so the result does not depend on
    the order of spatial positions.
    """
    if f.dim() not in (3, 4):
        raise ShapeError(f"gram_matrix needs (C, H, W) or (B, C, H, W), got {tuple(f.shape)}")
    flat = f.flatten(-2)
    acc = flat.double() if flat.dtype in (torch.float32, torch.float16, torch.bfloat16) else flat
    g = acc @ acc.transpose(-1, -2)
    if normalize:
        g = g / flat.shape[-1]
    return g.to(f.dtype)


def covariance_matrix(f: torch.Tensor) -> torch.Tensor:
    """Channel covariance over spatial positions (mean removed, divisor ``K - 1``)."""
    if f.dim() not in (3, 4):
        raise ShapeError(f"covariance_matrix needs (C, H, W) or (B, C, H, W), got {tuple(f.shape)}")
    flat = f.flatten(-2)
    k = flat.shape[-1]
    if k < 2:
        raise ShapeError("covariance needs at least two spatial positions")
    centered = flat - flat.mean(dim=-1, keepdim=True)
    return centered @ centered.transpose(-1, -2) / (k - 1)


@dataclass
class GramBlockConfig:
    align_channels: int = 16
    refine_channels: int = 32

    @property
    def output_dim(self) -> int:
        return self.refine_channels


@dataclass
class GramNetConfig:
    stage_widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    blocks_per_stage: int = 2
    num_classes: int = 2
    in_channels: int = 3
    gram: GramBlockConfig = field(default_factory=GramBlockConfig)

    def __post_init__(self):
        if isinstance(self.gram, dict):
            self.gram = GramBlockConfig(**self.gram)
        if not self.stage_widths or any(w < 1 for w in self.stage_widths):
            raise ValueError("stage widths must be positive")
        if any(b < a for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ValueError("stage widths must be non-decreasing")

    @property
    def tap_channels(self) -> list[int]:
        """Channels at each Gram tap: input, stem, then every stage output."""
        return [self.in_channels, self.stage_widths[0], *self.stage_widths]

    @property
    def num_taps(self) -> int:
        return len(self.stage_widths) + 2

    @property
    def min_input_size(self) -> int:
        """Smallest side that survives every stride-2 stage entry."""
        return 2 ** len(self.stage_widths)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GramNetConfig":
        return cls(**data)


class ConvBNReLU(nn.Sequential):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1):
        super().__init__(
            nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(),
        )


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)

    def forward(self, x):
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return relu(out + x)


class Stage(nn.Module):
    """Stride-2 entry conv followed by residual blocks."""

    def __init__(self, cin: int, cout: int, blocks: int):
        super().__init__()
        self.down = ConvBNReLU(cin, cout, stride=2)
        self.blocks = nn.Sequential(*[ResidualBlock(cout) for _ in range(blocks)])

    def forward(self, x):
        return self.blocks(self.down(x))


class Backbone(nn.Module):
    def __init__(self, cfg: GramNetConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths
        self.stem = ConvBNReLU(cfg.in_channels, widths[0])
        cins = [widths[0], *widths[:-1]]
        self.stages = nn.ModuleList(Stage(a, b, cfg.blocks_per_stage) for a, b in zip(cins, widths))

    def forward(self, x, taps: list | None = None):
        """Pooled feature ``(B, stage_widths[-1])``; tap activations go into ``taps``."""
        h, w = x.shape[-2:]
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (B, {self.cfg.in_channels}, H, W) input, got {tuple(x.shape)}")
        if min(h, w) < self.cfg.min_input_size:
            raise ShapeError(f"input {h}x{w} is smaller than the minimum {self.cfg.min_input_size}")
        if taps is not None:
            taps.append(x)
        x = self.stem(x)
        if taps is not None:
            taps.append(x)
        for stage in self.stages:
            x = stage(x)
            if taps is not None:
                taps.append(x)
        return global_avg_pool(x).flatten(1)


class GramBlock(nn.Module):
    """Align (1x1 conv) -> normalized Gram -> two conv-BN-ReLU -> global pool."""

    def __init__(self, in_channels: int, cfg: GramBlockConfig | None = None):
        super().__init__()
        cfg = cfg or GramBlockConfig()
        self.cfg = cfg
        self.align = nn.Conv2d(in_channels, cfg.align_channels, 1)
        self.refine = nn.Sequential(
            ConvBNReLU(1, cfg.refine_channels),
            ConvBNReLU(cfg.refine_channels, cfg.refine_channels),
        )

    def forward(self, x):
        g = gram_matrix(self.align(x)).unsqueeze(1)
        return global_avg_pool(self.refine(g)).flatten(1)


class GramNet(nn.Module):
    def __init__(self, cfg: GramNetConfig | None = None):
        super().__init__()
        cfg = cfg or GramNetConfig()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.gram_blocks = nn.ModuleList(GramBlock(c, cfg.gram) for c in cfg.tap_channels)
        self.head = nn.Linear(self.feature_dim, cfg.num_classes)

    @property
    def feature_dim(self) -> int:
        return self.cfg.stage_widths[-1] + self.cfg.num_taps * self.cfg.gram.output_dim

    def features(self, x) -> tuple[torch.Tensor, list[torch.Tensor]]:
        taps: list[torch.Tensor] = []
        pooled = self.backbone(x, taps)
        return pooled, [block(t) for block, t in zip(self.gram_blocks, taps)]

    def forward(self, x):
        pooled, grams = self.features(x)
        return self.head(concat_features([pooled, *grams]))


class BaselineNet(nn.Module):
    """The same backbone and head without any Gram Blocks."""

    def __init__(self, cfg: GramNetConfig | None = None):
        super().__init__()
        cfg = cfg or GramNetConfig()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.head = nn.Linear(self.feature_dim, cfg.num_classes)

    @property
    def feature_dim(self) -> int:
        return self.cfg.stage_widths[-1]

    def forward(self, x):
        return self.head(self.backbone(x))


MODEL_KINDS = {"gramnet": GramNet, "baseline": BaselineNet}


def build_model(kind: str, cfg: GramNetConfig | None = None, seed: int = 0) -> nn.Module:
    """Construct a freshly initialized model; initialization depends only on ``seed``."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return MODEL_KINDS[kind](cfg or GramNetConfig())


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
