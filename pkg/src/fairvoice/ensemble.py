"""Seed-varied model ensembles with exact-median score aggregation."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .debias import MaskConfig
from .errors import CheckpointError, InvalidArgumentError, TrainingError
from .nets import BackboneKind, DualHeadModel, TrainConfig, load_checkpoint, save_checkpoint
from .training import SpectroDataset, TrainResult, Variant, predict_scores, train_model

BUNDLE_MANIFEST = "bundle.json"


@dataclass
class EnsembleBundle:
    members: list[DualHeadModel]
    seeds: list[int]
    variant: Variant
    kind: BackboneKind

    def __post_init__(self):
        if len(self.members) != len(self.seeds):
            raise InvalidArgumentError("members and seeds must align")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidArgumentError("ensemble seeds must be pairwise distinct")


def train_ensemble(
    dataset: SpectroDataset,
    kind: BackboneKind,
    config: TrainConfig,
    variant: Variant,
    n: int = 5,
    base_seed: int | None = None,
    mask_cfg: MaskConfig = MaskConfig(),
    **train_kwargs,
) -> tuple[EnsembleBundle, list[TrainResult]]:
    """Train n members; member i uses seed base_seed + i for head init and
    data order. A failing member aborts the bundle, naming the member."""
    if n < 1:
        raise InvalidArgumentError("ensemble size must be >= 1")
    base = config.seed if base_seed is None else base_seed
    members, seeds, results = [], [], []
    for i in range(n):
        member_cfg = TrainConfig(
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            seed=base + i,
            pretrained=config.pretrained,
        )
        try:
            res = train_model(dataset, kind, member_cfg, variant, mask_cfg=mask_cfg,
                              **train_kwargs)
        except Exception as e:
            raise TrainingError(f"ensemble member {i} (seed {base + i}) failed: {e}") from e
        members.append(res.model)
        seeds.append(base + i)
        results.append(res)
    return EnsembleBundle(members, seeds, variant, kind), results


def median_scores(member_scores: np.ndarray) -> np.ndarray:
    """Exact per-sample median over members: middle order statistic for odd n,
    midpoint of the two central values for even n."""
    arr = np.asarray(member_scores, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidArgumentError("expected a non-empty (n_members, n_samples) array")
    return np.median(arr, axis=0)


def predict_median(
    bundle: EnsembleBundle,
    dataset: SpectroDataset,
    mask_cfg: MaskConfig = MaskConfig(),
    batch_size: int = 32,
) -> np.ndarray:
    if not bundle.members:
        raise InvalidArgumentError("empty ensemble bundle")
    per_member = np.stack(
        [
            predict_scores(m, dataset, bundle.variant, mask_cfg, batch_size)
            for m in bundle.members
        ]
    )
    return median_scores(per_member)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_bundle(bundle: EnsembleBundle, root: str | os.PathLike) -> str:
    """Write `root/{variant}/member_{i}.ckpt` plus a manifest with seeds."""
    out = os.path.join(os.fspath(root), bundle.variant.value)
    os.makedirs(out, exist_ok=True)
    for i, m in enumerate(bundle.members):
        save_checkpoint(m, os.path.join(out, f"member_{i}.ckpt"))
    meta = {
        "variant": bundle.variant.value,
        "backbone": bundle.kind.value,
        "seeds": bundle.seeds,
    }
    meta["config_hash"] = _config_hash(meta)
    with open(os.path.join(out, BUNDLE_MANIFEST), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    return out


def load_bundle(path: str | os.PathLike) -> EnsembleBundle:
    path = os.fspath(path)
    manifest_path = os.path.join(path, BUNDLE_MANIFEST)
    if not os.path.exists(manifest_path):
        raise CheckpointError(f"{path}: no {BUNDLE_MANIFEST} found")
    with open(manifest_path, encoding="utf-8") as f:
        meta = json.load(f)
    members = [
        load_checkpoint(os.path.join(path, f"member_{i}.ckpt"))
        for i in range(len(meta["seeds"]))
    ]
    return EnsembleBundle(
        members=members,
        seeds=list(meta["seeds"]),
        variant=Variant(meta["variant"]),
        kind=BackboneKind(meta["backbone"]),
    )
