"""Per-modality convolutional encoders.

Each encoder maps one image-like input (RGB frame or single-channel log-mel
grid) to a D-dimensional embedding. Weights are shared across the N time
slots of a modality but never across modalities. Two topologies:

* ``paper_resnet18`` — the standard 18-layer residual network with a
  configurable first-convolution channel count, D = 512.
* ``small`` — a width/depth-reduced residual net for desk-scale runs, D = 64.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


class ShapeError(ValueError):
    """Input tensor shape does not match the encoder configuration."""


@dataclass(frozen=True)
class EncoderConfig:
    topology: str  # "paper_resnet18" | "small"
    input_channels: int  # 3 for visual/tactile, 1 for audio spectrograms
    input_size: tuple[int, int]  # (height, width)
    feature_dim: int = 0  # 0 -> topology default

    def __post_init__(self):
        if self.topology not in ("paper_resnet18", "small"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.feature_dim == 0:
            object.__setattr__(
                self, "feature_dim", 512 if self.topology == "paper_resnet18" else 64
            )

    def to_dict(self) -> dict:
        return {
            "topology": self.topology,
            "input_channels": self.input_channels,
            "input_size": list(self.input_size),
            "feature_dim": self.feature_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(
            d["topology"], d["input_channels"], tuple(d["input_size"]), d["feature_dim"]
        )


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with an identity (or 1x1-projected) skip."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ModalityEncoder(nn.Module):
    """Residual CNN producing one embedding per input image."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c_in = config.input_channels
        if config.topology == "paper_resnet18":
            widths = (64, 128, 256, 512)
            self.stem = nn.Sequential(
                nn.Conv2d(c_in, 64, 7, stride=2, padding=3, bias=False),
                nn.BatchNorm2d(64),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(3, stride=2, padding=1),
            )
            stages = []
            prev = 64
            for i, w in enumerate(widths):
                stride = 1 if i == 0 else 2
                stages += [BasicBlock(prev, w, stride), BasicBlock(w, w)]
                prev = w
            self.stages = nn.Sequential(*stages)
            self.head = nn.Identity()  # pooled width 512 == D
        else:
            self.stem = nn.Sequential(
                nn.Conv2d(c_in, 8, 5, stride=4, padding=2, bias=False),
                nn.BatchNorm2d(8),
                nn.ReLU(inplace=True),
            )
            self.stages = nn.Sequential(BasicBlock(8, 16, 2), BasicBlock(16, 32, 2))
            self.head = nn.Linear(32, config.feature_dim)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, D)."""
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"{self.config.topology} encoder expects (B, {self.config.input_channels}, H, W), "
                f"got {tuple(x.shape)}"
            )
        x = self.stem(x)
        x = self.stages(x)
        x = self.pool(x).flatten(1)
        return self.head(x)


def encode_modality(stack: torch.Tensor, encoder: ModalityEncoder) -> torch.Tensor:
    """Encode an N-slot stack (B, N, C, H, W) into tokens (B, N, D).

    Slots are encoded independently with shared weights, so the token order
    follows the slot order exactly.
    """
    if stack.ndim != 5:
        raise ShapeError(f"expected (B, N, C, H, W), got {tuple(stack.shape)}")
    b, n = stack.shape[:2]
    flat = stack.reshape(b * n, *stack.shape[2:])
    tokens = encoder(flat)
    return tokens.reshape(b, n, -1)


def normalize_pixels(frames: torch.Tensor) -> torch.Tensor:
    """uint8 [0,255] -> standardized float32 with fixed mean 0.5 / std 0.25."""
    return (frames.float() / 255.0 - PIXEL_MEAN) / PIXEL_STD
