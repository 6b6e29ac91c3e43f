"""Training orchestration: manifests -> cached mel grids -> seeded epochs for
each variant (plain, gradcam, resample, adversarial) -> scored predictions.

Class index conventions, shared by every head and score:
PD = 0, HC = 1; young = 0, elderly = 1. The reported PD score is the softmax
weight of class 0.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import debias
from .corpus import DatasetManifest, PD, YOUNG, load_waveform
from .debias import AdversarialConfig, MaskConfig, _masks_from_batch, _pd_score
from .errors import TrainingError
from .evalkit import PredictionRow, PredictionSet
from .nets import BackboneKind, DualHeadModel, TrainConfig, init_model
from .spectro import MelParams, jet_colorize, to_mel

log = logging.getLogger(__name__)

PD_CLASS = 0
HC_CLASS = 1
YOUNG_CLASS = 0
ELDERLY_CLASS = 1


class Variant(enum.Enum):
    PLAIN = "plain"
    GRADCAM = "gradcam"
    RESAMPLE = "resample"
    ADVERSARIAL = "adversarial"


@dataclass
class SpectroDataset:
    """Mel grids plus labels for one manifest; images are colorized per batch."""

    sample_ids: list[str]
    subject_ids: list[str]
    age_groups: list[str]
    diagnoses: list[str]
    grids: np.ndarray  # (N, 224, 224) float32
    age_labels: np.ndarray  # int64, young=0 elderly=1
    pd_labels: np.ndarray  # int64, PD=0 HC=1

    @classmethod
    def from_manifest(
        cls, manifest: DatasetManifest, mel_params: MelParams = MelParams()
    ) -> "SpectroDataset":
        sample_ids, subject_ids, groups, diags = [], [], [], []
        grids = np.empty((len(manifest.samples), 224, 224), dtype=np.float32)
        age_labels = np.empty(len(manifest.samples), dtype=np.int64)
        pd_labels = np.empty(len(manifest.samples), dtype=np.int64)
        grid_cache: dict[str, np.ndarray] = {}
        for i, s in enumerate(manifest.samples):
            if s.audio_path not in grid_cache:
                wav, rate = load_waveform(s.audio_path)
                grid_cache[s.audio_path] = to_mel(wav, rate, mel_params).astype(np.float32)
            grids[i] = grid_cache[s.audio_path]
            subj = manifest.subject_of(s)
            sample_ids.append(s.sample_id)
            subject_ids.append(s.subject_id)
            groups.append(subj.age_group)
            diags.append(subj.diagnosis)
            age_labels[i] = YOUNG_CLASS if subj.age_group == YOUNG else ELDERLY_CLASS
            pd_labels[i] = PD_CLASS if subj.diagnosis == PD else HC_CLASS
        return cls(sample_ids, subject_ids, groups, diags, grids, age_labels, pd_labels)

    def __len__(self):
        return len(self.sample_ids)

    def images(self, idx: np.ndarray) -> torch.Tensor:
        batch = jet_colorize(self.grids[idx].astype(np.float64))
        # jet_colorize stacks channels first: (3, n, H, W) -> (n, 3, H, W)
        return torch.from_numpy(np.ascontiguousarray(batch.transpose(1, 0, 2, 3), dtype=np.float32))


@dataclass
class TrainResult:
    model: DualHeadModel
    epoch_losses: list[dict] = field(default_factory=list)


def train_model(
    dataset: SpectroDataset,
    kind: BackboneKind,
    config: TrainConfig,
    variant: Variant,
    mask_cfg: MaskConfig = MaskConfig(),
    adv_cfg: AdversarialConfig = AdversarialConfig(),
) -> TrainResult:
    """Train one model; data shuffling and head init both follow config.seed.

    The resample variant expects an already-oversampled dataset and trains like
    plain (PD loss only).
    """
    torch.manual_seed(config.seed)
    model = init_model(kind, config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_age, epoch_pd, epoch_total, n_batches = 0.0, 0.0, 0.0, 0
        for start in range(0, len(dataset), config.batch_size):
            idx = order[start : start + config.batch_size]
            images = dataset.images(idx)
            pd_labels = torch.from_numpy(dataset.pd_labels[idx])
            age_labels = torch.from_numpy(dataset.age_labels[idx])
            if variant is Variant.GRADCAM:
                out = debias.dual_pass_train_step(
                    model, optimizer, images, age_labels, pd_labels, mask_cfg
                )
            elif variant is Variant.ADVERSARIAL:
                out = debias.adversarial_train_step(
                    model, optimizer, images, age_labels, pd_labels, adv_cfg
                )
            else:
                out = debias.plain_train_step(model, optimizer, images, pd_labels)
            epoch_age += out.loss_age
            epoch_pd += out.loss_pd
            epoch_total += out.loss_total
            n_batches += 1
        losses.append(
            {
                "epoch": epoch,
                "loss_age": epoch_age / n_batches,
                "loss_pd": epoch_pd / n_batches,
                "loss_total": epoch_total / n_batches,
            }
        )
        log.info("epoch %d: %s", epoch, losses[-1])
    return TrainResult(model=model, epoch_losses=losses)


def predict_scores(
    model: DualHeadModel,
    dataset: SpectroDataset,
    variant: Variant,
    mask_cfg: MaskConfig = MaskConfig(),
    batch_size: int = 32,
) -> np.ndarray:
    """Per-sample PD scores in [0, 1]; the gradcam variant scores masked inputs."""
    model.eval()
    scores = np.empty(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        images = dataset.images(idx)
        if variant is Variant.GRADCAM:
            with torch.enable_grad():
                fmaps = model.feature_maps(images)
                age_logits = model.age_head(model.pool(fmaps))
                pred_age = age_logits.argmax(dim=1)
                masks = _masks_from_batch(
                    fmaps, age_logits, pred_age, mask_cfg.threshold,
                    tuple(images.shape[2:]),
                )
            images = images * masks[:, None]
        with torch.no_grad():
            pd_logits = model.pd_head(model.pool(model.feature_maps(images)))
            scores[idx] = _pd_score(pd_logits).numpy()
    return scores


def predictions_from_scores(dataset: SpectroDataset, scores: np.ndarray) -> PredictionSet:
    return PredictionSet(
        [
            PredictionRow(sid, grp, diag, float(np.clip(s, 0.0, 1.0)))
            for sid, grp, diag, s in zip(
                dataset.sample_ids, dataset.age_groups, dataset.diagnoses, scores
            )
        ]
    )
