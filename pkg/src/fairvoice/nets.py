"""Backbone-plus-two-heads classifier: shared CNN feature extractor, an age
head and a PD/HC head (each 2 logits on the pooled features).

Three backbones: ResNet-50 and DenseNet-161 (optionally ImageNet-pretrained)
for full-scale runs, and TinyTest, a small from-scratch conv stack that makes
the whole suite runnable on CPU.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError, InvalidArgumentError, ModelInitError

CHECKPOINT_VERSION = 1


class BackboneKind(enum.Enum):
    RESIDUAL50 = "resnet50"
    DENSE161 = "densenet161"
    TINY_TEST = "tinytest"


@dataclass
class TrainConfig:
    epochs: int = 24
    learning_rate: float = 1e-5
    batch_size: int = 32
    seed: int = 0
    pretrained: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")


class TinyBackbone(nn.Module):
    """Five stride-2 conv stages: 224 -> 7 spatial, 32 channels pooled."""

    feature_width = 32

    def __init__(self):
        super().__init__()
        chans = [3, 8, 16, 32, 32, 32]
        layers = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers += [
                nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
            ]
        self.features = nn.Sequential(*layers)

    def forward(self, x):
        return self.features(x)


def _torchvision_backbone(kind: BackboneKind, pretrained: bool) -> tuple[nn.Module, int]:
    import torchvision.models as tvm

    try:
        if kind is BackboneKind.RESIDUAL50:
            weights = tvm.ResNet50_Weights.IMAGENET1K_V1 if pretrained else None
            net = tvm.resnet50(weights=weights)
            width = net.fc.in_features
            trunk = nn.Sequential(*list(net.children())[:-2])
        else:
            weights = tvm.DenseNet161_Weights.IMAGENET1K_V1 if pretrained else None
            net = tvm.densenet161(weights=weights)
            width = net.classifier.in_features
            trunk = net.features
    except Exception as e:  # weight download/cache failure
        raise ModelInitError(
            f"could not initialize {kind.value} (pretrained={pretrained}): {e}. "
            "If pretrained weights are unavailable offline, pre-populate the "
            "torchvision cache or set pretrained=False."
        ) from e
    return trunk, width


class DualHeadModel(nn.Module):
    """Shared backbone with global-average pooling and two 2-logit heads."""

    def __init__(self, kind: BackboneKind, seed: int, pretrained: bool = False):
        super().__init__()
        self.kind = kind
        self.seed = seed
        self.pretrained = pretrained
        if kind is BackboneKind.TINY_TEST:
            if pretrained:
                raise InvalidArgumentError("TinyTest has no pretrained weights")
            gen = torch.Generator().manual_seed(seed)
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self.backbone = TinyBackbone()
            self.feature_width = TinyBackbone.feature_width
        else:
            self.backbone, self.feature_width = _torchvision_backbone(kind, pretrained)
            gen = torch.Generator().manual_seed(seed)
        # Heads always drawn from the given seed, independent of the backbone.
        self.age_head = nn.Linear(self.feature_width, 2)
        self.pd_head = nn.Linear(self.feature_width, 2)
        for head in (self.age_head, self.pd_head):
            nn.init.normal_(head.weight, std=0.01, generator=gen)
            nn.init.zeros_(head.bias)

    def feature_maps(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise InvalidArgumentError(f"expected Nx3xHxW images, got {tuple(images.shape)}")
        return self.backbone(images)

    @staticmethod
    def pool(feature_maps: torch.Tensor) -> torch.Tensor:
        return feature_maps.mean(dim=(2, 3))

    def forward(self, images: torch.Tensor):
        """Returns (feature_maps, pooled, age_logits, pd_logits)."""
        fmaps = self.feature_maps(images)
        pooled = self.pool(fmaps)
        return fmaps, pooled, self.age_head(pooled), self.pd_head(pooled)


def init_model(kind: BackboneKind, config: TrainConfig) -> DualHeadModel:
    return DualHeadModel(kind, seed=config.seed, pretrained=config.pretrained)


@torch.no_grad()
def extract_final_features(model: DualHeadModel, images: torch.Tensor) -> np.ndarray:
    """Pooled feature vectors, one row per image."""
    was_training = model.training
    model.eval()
    try:
        fmaps = model.feature_maps(images)
        return model.pool(fmaps).cpu().numpy()
    finally:
        model.train(was_training)


def images_to_tensor(images: np.ndarray | list[np.ndarray]) -> torch.Tensor:
    """Stack one or more 3x224x224 arrays into a float32 batch tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise InvalidArgumentError(f"expected Nx3xHxW images, got {arr.shape}")
    return torch.from_numpy(arr)


def parameter_checksum(model: nn.Module) -> str:
    """Stable digest of all named parameters and buffers."""
    h = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: DualHeadModel, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "backbone_kind": model.kind.value,
            "seed": model.seed,
            "pretrained": model.pretrained,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> DualHeadModel:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path}: not a fairvoice checkpoint")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {payload['format_version']} != {CHECKPOINT_VERSION}"
        )
    try:
        kind = BackboneKind(payload["backbone_kind"])
    except ValueError:
        raise CheckpointError(
            f"{path}: unknown backbone kind {payload['backbone_kind']!r}"
        ) from None
    # Architecture is rebuilt without pretrained downloads; weights come from file.
    model = DualHeadModel(kind, seed=payload["seed"], pretrained=False)
    model.pretrained = bool(payload.get("pretrained", False))
    try:
        model.load_state_dict(payload["state_dict"])
    except Exception as e:
        raise CheckpointError(f"{path}: weight mismatch for {kind.value}: {e}") from e
    return model
