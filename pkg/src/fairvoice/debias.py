"""Age-feature masking: GradCAM saliency from the age head, threshold masks,
the dual-pass training step with summed cross-entropy, masked inference, and
the gradient-reversal adversarial baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError, TrainingError
from .nets import DualHeadModel


@dataclass(frozen=True)
class MaskConfig:
    threshold: float = 0.6


@dataclass(frozen=True)
class AdversarialConfig:
    weight: float = 0.01

    def __post_init__(self):
        if self.weight < 0:
            raise InvalidArgumentError("adversarial weight must be >= 0")


@dataclass
class SaliencyMap:
    """GradCAM map at feature resolution plus its upsampled input-size view,
    both min-max normalized to [0, 1] (all zeros when the raw map is constant)."""

    low_res: np.ndarray  # (h, w)
    upsampled: np.ndarray  # (H, W)


@dataclass
class TrainStepOutput:
    loss_age: float
    loss_pd: float
    loss_total: float


def _normalize(raw: np.ndarray) -> np.ndarray:
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0.0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def _bilinear_up(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(a, dtype=np.float64))[None, None]
    up = F.interpolate(t, size=(out_h, out_w), mode="bilinear", align_corners=False)
    return up[0, 0].numpy()


def gradcam(
    feature_maps: np.ndarray,
    gradients: np.ndarray,
    out_size: tuple[int, int] = (224, 224),
) -> SaliencyMap:
    """Channel weights = spatial mean of gradients; raw map = rectified
    weighted sum of channels; min-max normalized then bilinearly upsampled."""
    fmaps = np.asarray(feature_maps, dtype=np.float64)
    grads = np.asarray(gradients, dtype=np.float64)
    if fmaps.shape != grads.shape or fmaps.ndim != 3:
        raise InvalidArgumentError(
            f"feature maps {fmaps.shape} and gradients {grads.shape} must be "
            "matching (C, h, w) arrays"
        )
    weights = grads.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, fmaps, axes=1), 0.0)
    low = _normalize(raw)
    return SaliencyMap(low_res=low, upsampled=_bilinear_up(low, *out_size))


def threshold_mask(saliency: np.ndarray, theta: float) -> np.ndarray:
    """Binary mask: 0 where saliency > theta, 1 otherwise."""
    s = np.asarray(saliency, dtype=np.float64)
    return (s <= theta).astype(np.float64)


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply all 3 channels cell-wise by the mask."""
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3 or img.shape[1:] != m.shape:
        raise InvalidArgumentError(
            f"image {img.shape} and mask {m.shape} spatial shapes must match"
        )
    return img * m[None]


def _saliency_grads(
    fmaps: torch.Tensor, age_logits: torch.Tensor, target_classes: torch.Tensor
) -> torch.Tensor:
    """Per-sample gradients of the target age-class logits wrt feature maps.

    Samples are independent through the conv stack, so one backward over the
    batch sum yields the per-sample gradients. The result is detached: no
    parameter gradient flows through mask construction.
    """
    selected = age_logits.gather(1, target_classes.view(-1, 1)).sum()
    (grads,) = torch.autograd.grad(selected, fmaps, retain_graph=True, create_graph=False)
    return grads.detach()


def _masks_from_batch(
    fmaps: torch.Tensor,
    age_logits: torch.Tensor,
    target_classes: torch.Tensor,
    theta: float,
    out_hw: tuple[int, int],
) -> torch.Tensor:
    """Binary masks (N, H, W) as a constant (detached) tensor."""
    grads = _saliency_grads(fmaps, age_logits, target_classes)
    fm = fmaps.detach()
    weights = grads.mean(dim=(2, 3))  # (N, C)
    raw = torch.relu(torch.einsum("nc,nchw->nhw", weights, fm))
    flat = raw.flatten(1)
    lo = flat.min(dim=1).values.view(-1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1)
    span = (hi - lo).clamp_min(1e-30)
    norm = torch.where(hi > lo, (raw - lo) / span, torch.zeros_like(raw))
    up = F.interpolate(norm[:, None], size=out_hw, mode="bilinear", align_corners=False)
    return (up[:, 0] <= theta).to(fmaps.dtype)


def dual_pass_train_step(
    model: DualHeadModel,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    age_labels: torch.Tensor,
    pd_labels: torch.Tensor,
    mask_cfg: MaskConfig = MaskConfig(),
) -> TrainStepOutput:
    """One masked-training update.

    Pass 1: age head on the original images; saliency from the true-age-class
    logit. Pass 2: PD head on the mask-multiplied images. Loss is the plain sum
    of both cross-entropies; the mask itself carries no parameter gradient.
    """
    model.train()
    optimizer.zero_grad()

    fmaps = model.feature_maps(images)
    age_logits = model.age_head(model.pool(fmaps))
    loss_age = F.cross_entropy(age_logits, age_labels)

    masks = _masks_from_batch(
        fmaps, age_logits, age_labels, mask_cfg.threshold, tuple(images.shape[2:])
    )
    masked = images * masks[:, None]

    fmaps2 = model.feature_maps(masked)
    pd_logits = model.pd_head(model.pool(fmaps2))
    loss_pd = F.cross_entropy(pd_logits, pd_labels)

    loss = loss_age + loss_pd
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss (age={loss_age.item()}, pd={loss_pd.item()})"
        )
    loss.backward()
    optimizer.step()
    return TrainStepOutput(
        loss_age=loss_age.item(), loss_pd=loss_pd.item(), loss_total=loss.item()
    )


@torch.no_grad()
def _pd_score(pd_logits: torch.Tensor) -> torch.Tensor:
    """PD-class probability from (z_PD, z_HC) logits; PD is class index 0."""
    return torch.softmax(pd_logits, dim=1)[:, 0]


def masked_inference(
    model: DualHeadModel, image: np.ndarray, mask_cfg: MaskConfig = MaskConfig()
) -> tuple[float, int, np.ndarray]:
    """Frozen-model prediction: (pd_score, predicted_age_class, binary mask).

    The saliency target is the argmax age class of the original image; the PD
    score is the softmax PD weight on the masked image.
    """
    model.eval()
    x = torch.from_numpy(np.asarray(image, dtype=np.float32))[None]
    x.requires_grad_(False)

    fmaps = model.feature_maps(x)
    age_logits = model.age_head(model.pool(fmaps))
    pred_age = age_logits.argmax(dim=1)
    # Re-run with grad enabled on feature maps only.
    with torch.enable_grad():
        fmaps_g = model.feature_maps(x)
        age_logits_g = model.age_head(model.pool(fmaps_g))
        masks = _masks_from_batch(
            fmaps_g, age_logits_g, pred_age, mask_cfg.threshold, tuple(x.shape[2:])
        )
    with torch.no_grad():
        masked = x * masks[:, None]
        pd_logits = model.pd_head(model.pool(model.feature_maps(masked)))
        score = float(_pd_score(pd_logits)[0])
    return score, int(pred_age[0]), masks[0].numpy()


def saliency_for_image(
    model: DualHeadModel, image: np.ndarray
) -> tuple[SaliencyMap, int]:
    """Saliency of the predicted age class for one image on a frozen model."""
    model.eval()
    x = torch.from_numpy(np.asarray(image, dtype=np.float32))[None]
    with torch.enable_grad():
        fmaps = model.feature_maps(x)
        age_logits = model.age_head(model.pool(fmaps))
        pred_age = age_logits.argmax(dim=1)
        grads = _saliency_grads(fmaps, age_logits, pred_age)
    sal = gradcam(
        fmaps[0].detach().numpy(), grads[0].numpy(), out_size=tuple(x.shape[2:])
    )
    return sal, int(pred_age[0])


def plain_train_step(
    model: DualHeadModel,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    pd_labels: torch.Tensor,
) -> TrainStepOutput:
    """Baseline update: PD cross-entropy only, unmasked input."""
    model.train()
    optimizer.zero_grad()
    _, pooled, _, pd_logits = model(images)
    loss = F.cross_entropy(pd_logits, pd_labels)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite PD loss {loss.item()}")
    loss.backward()
    optimizer.step()
    return TrainStepOutput(loss_age=0.0, loss_pd=loss.item(), loss_total=loss.item())


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, alpha):
        ctx.alpha = alpha
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.alpha * grad_output, None


def grad_reverse(x: torch.Tensor, alpha: float) -> torch.Tensor:
    """Identity forward; backward multiplies the gradient by -alpha."""
    return _GradReverse.apply(x, alpha)


def adversarial_train_step(
    model: DualHeadModel,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    age_labels: torch.Tensor,
    pd_labels: torch.Tensor,
    adv_cfg: AdversarialConfig = AdversarialConfig(),
) -> TrainStepOutput:
    """Adversarial baseline: PD cross-entropy plus an age loss whose gradient
    is reversed (scaled by -alpha) on its way into the backbone. The age head
    itself descends its own unscaled loss."""
    model.train()
    optimizer.zero_grad()

    fmaps = model.feature_maps(images)
    pooled = model.pool(fmaps)
    pd_logits = model.pd_head(pooled)
    age_logits = model.age_head(grad_reverse(pooled, adv_cfg.weight))

    loss_pd = F.cross_entropy(pd_logits, pd_labels)
    loss_age = F.cross_entropy(age_logits, age_labels)
    loss = loss_pd + loss_age
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss (age={loss_age.item()}, pd={loss_pd.item()})"
        )
    loss.backward()
    optimizer.step()
    return TrainStepOutput(
        loss_age=loss_age.item(),
        loss_pd=loss_pd.item(),
        loss_total=loss_pd.item() + adv_cfg.weight * loss_age.item(),
    )


def export_saliency_png(saliency: SaliencyMap, path) -> None:
    """Grayscale PNG of the upsampled saliency map."""
    from PIL import Image

    arr = np.round(255.0 * np.clip(saliency.upsampled, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def export_mask_png(mask: np.ndarray, path) -> None:
    """Strictly bilevel PNG of a binary mask."""
    from PIL import Image

    arr = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")
