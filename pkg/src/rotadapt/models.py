"""Trainable components: two-stream feature extractor and the two heads.

The feature extractor is a pair of identically-shaped (but not weight-shared)
convolutional backbones, one per modality, whose terminal feature maps are
concatenated along channels (late fusion). The main head classifies objects
from the globally-pooled fused map; the pretext head classifies the rotation
from the fused map itself, keeping spatial structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, DataError

SMALL_CONV = "small-conv"
RESNET18 = "resnet18"

CONV_HEAD = "conv"
FC_HEAD = "fc"


@dataclass
class BackboneSpec:
    kind: str = SMALL_CONV
    pretrained_path: str | None = None
    feature_channels: int = 64

    def __post_init__(self):
        if self.kind not in (SMALL_CONV, RESNET18):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        if self.kind == RESNET18:
            self.feature_channels = 512

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pretrained_path": self.pretrained_path,
                "feature_channels": self.feature_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(kind=d["kind"], pretrained_path=d.get("pretrained_path"),
                   feature_channels=int(d.get("feature_channels", 64)))


class SmallConvBackbone(nn.Module):
    """Four stride-2 conv blocks; cheap enough for gradient checks and CI runs."""

    def __init__(self, out_channels: int = 64):
        super().__init__()
        widths = [16, 32, 64, out_channels]
        layers = []
        in_ch = 3
        for w in widths:
            layers += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1),
                       nn.BatchNorm2d(w), nn.ReLU()]
            in_ch = w
        self.features = nn.Sequential(*layers)

    def forward(self, x):
        return self.features(x)


def _resnet18_backbone(pretrained_path: str | None) -> nn.Module:
    import torchvision.models

    net = torchvision.models.resnet18(weights=None)
    if pretrained_path is not None:
        state = torch.load(pretrained_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    # drop global average pooling and the fully connected classifier
    return nn.Sequential(*list(net.children())[:-2])


def build_backbone(spec: BackboneSpec) -> nn.Module:
    if spec.kind == SMALL_CONV:
        return SmallConvBackbone(spec.feature_channels)
    return _resnet18_backbone(spec.pretrained_path)


class MainHead(nn.Module):
    """Object classifier: gap -> fc(1000)+BN+ReLU+dropout -> fc(C) -> softmax."""

    def __init__(self, in_channels: int, num_classes: int, hidden: int = 1000,
                 dropout: float = 0.5):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Linear(in_channels, hidden)
        self.bn1 = nn.BatchNorm1d(hidden)
        self.relu = nn.ReLU()
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden, num_classes)

    def hidden(self, fused: torch.Tensor) -> torch.Tensor:
        """Last-hidden-layer activations (post-ReLU, pre-dropout)."""
        x = self.pool(fused).flatten(1)
        return self.relu(self.bn1(self.fc1(x)))

    def logits(self, fused: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(self.hidden(fused)))

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(fused), dim=1)


class ConvPretextHead(nn.Module):
    """Rotation classifier that keeps spatial structure.

    conv(1x1,100) -> conv(3x3,100, stride 2, valid) -> fc(100) -> fc(4),
    batch norm + ReLU on all but the final layer.
    """

    def __init__(self, in_channels: int, spatial: int, width: int = 100,
                 dropout: float = 0.5, num_rotations: int = 4):
        super().__init__()
        if spatial < 3:
            raise ConfigError(
                f"fused map {spatial}×{spatial} too small for the 3×3 valid conv")
        self.conv1 = nn.Conv2d(in_channels, width, 1)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=2, padding=0)
        self.bn2 = nn.BatchNorm2d(width)
        self.relu = nn.ReLU()
        out_spatial = (spatial - 3) // 2 + 1
        self.fc1 = nn.Linear(width * out_spatial * out_spatial, width)
        self.bn3 = nn.BatchNorm1d(width)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(width, num_rotations)

    def logits(self, fused: torch.Tensor) -> torch.Tensor:
        x = self.relu(self.bn1(self.conv1(fused)))
        x = self.relu(self.bn2(self.conv2(x)))
        x = x.flatten(1)
        x = self.drop(self.relu(self.bn3(self.fc1(x))))
        return self.fc2(x)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(fused), dim=1)


class FcPretextHead(nn.Module):
    """Ablation variant: the main head's architecture applied to the 4-way task."""

    def __init__(self, in_channels: int, hidden: int = 1000, dropout: float = 0.5,
                 num_rotations: int = 4):
        super().__init__()
        self.head = MainHead(in_channels, num_rotations, hidden=hidden, dropout=dropout)

    def logits(self, fused: torch.Tensor) -> torch.Tensor:
        return self.head.logits(fused)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return self.head(fused)


class ModelBundle(nn.Module):
    """The four trainable parameter groups: E_color, E_depth, M, P."""

    def __init__(self, E_color: nn.Module, E_depth: nn.Module, M: nn.Module,
                 P: nn.Module, num_classes: int, backbone: BackboneSpec,
                 pretext_head: str, input_size: int):
        super().__init__()
        self.E_color = E_color
        self.E_depth = E_depth
        self.M = M
        self.P = P
        self.num_classes = num_classes
        self.backbone_spec = backbone
        self.pretext_head_kind = pretext_head
        self.input_size = input_size

    @property
    def feature_channels(self) -> int:
        return self.backbone_spec.feature_channels

    def extract_features(self, color: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
        """Fused (B, 2F, h, w) map; first F channels always from E_color."""
        if color.shape[0] != depth.shape[0]:
            raise DataError(
                f"batch length mismatch: color {color.shape[0]} vs depth {depth.shape[0]}")
        return torch.cat([self.E_color(color), self.E_depth(depth)], dim=1)

    def main_probs(self, fused: torch.Tensor) -> torch.Tensor:
        return self.M(fused)

    def main_hidden(self, fused: torch.Tensor) -> torch.Tensor:
        return self.M.hidden(fused)

    def pretext_probs(self, fused: torch.Tensor) -> torch.Tensor:
        return self.P(fused)

    def classify(self, color: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
        """Main-task class probabilities; the pretext head is not involved."""
        return self.main_probs(self.extract_features(color, depth))

    def parameter_groups(self) -> dict[str, dict[str, torch.Tensor]]:
        """Exhaustive partition of trainable parameters into the four groups."""
        groups = {"E_color": {}, "E_depth": {}, "M": {}, "P": {}}
        for name, p in self.named_parameters():
            group, _, rest = name.partition(".")
            groups[group][rest] = p
        return groups


def _fused_spatial(backbone: nn.Module, input_size: int) -> tuple[int, int]:
    with torch.no_grad():
        probe = torch.zeros(1, 3, input_size, input_size)
        was_training = backbone.training
        backbone.eval()
        out = backbone(probe)
        backbone.train(was_training)
    return out.shape[1], out.shape[2]


def init_xavier(module: nn.Module) -> None:
    """Xavier-uniform weights for conv/linear layers, unit batch-norm scales."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build_bundle(num_classes: int, backbone: BackboneSpec | None = None,
                 input_size: int = 64, pretext_head: str = CONV_HEAD,
                 dropout: float = 0.5) -> ModelBundle:
    """Construct the model with freshly initialized weights.

    Layers outside a pretrained backbone use Xavier initialization; the
    backbone uses the same scheme when no pretrained weight file is given.
    """
    backbone = backbone or BackboneSpec()
    if pretext_head not in (CONV_HEAD, FC_HEAD):
        raise ConfigError(f"unknown pretext head {pretext_head!r}")
    e_color = build_backbone(backbone)
    e_depth = build_backbone(backbone)
    channels, spatial = _fused_spatial(e_color, input_size)
    if channels != backbone.feature_channels:
        raise ConfigError(
            f"backbone produced {channels} channels, spec says {backbone.feature_channels}")
    fused_channels = 2 * backbone.feature_channels
    m_head = MainHead(fused_channels, num_classes, dropout=dropout)
    if pretext_head == CONV_HEAD:
        p_head = ConvPretextHead(fused_channels, spatial, dropout=dropout)
    else:
        p_head = FcPretextHead(fused_channels, dropout=dropout)
    if backbone.pretrained_path is None:
        init_xavier(e_color)
        init_xavier(e_depth)
    init_xavier(m_head)
    init_xavier(p_head)
    return ModelBundle(e_color, e_depth, m_head, p_head, num_classes, backbone,
                       pretext_head, input_size)
