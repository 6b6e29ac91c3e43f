"""Waveform -> 3x224x224 jet-colorized mel-spectrogram images.

The mel grid covers seconds 0-10 on the x axis (padding/truncating the input)
and mel frequency on the y axis, low frequencies at the bottom row. Values are
min-max normalized per sample, so the image is invariant to global gain.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError

TARGET_SIZE = 224
CLIP_SECONDS = 10.0
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MelParams:
    fft_window: int = 2048
    overlap: float = 0.75
    mel_bins: int = 128
    fmax: float | None = None  # None -> sample_rate / 2

    def __post_init__(self):
        if self.fft_window < 16:
            raise InvalidArgumentError("fft_window too small")
        if not 0.0 <= self.overlap < 1.0:
            raise InvalidArgumentError("overlap must be in [0, 1)")
        if self.mel_bins < 2:
            raise InvalidArgumentError("need at least 2 mel bins")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmax: float) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - ctr, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def _bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with edge-aligned sample positions."""
    in_h, in_w = a.shape

    def positions(n_in, n_out):
        if n_in == 1:
            return np.zeros(n_out), np.zeros(n_out, dtype=int), np.zeros(n_out, dtype=int)
        x = np.linspace(0.0, n_in - 1.0, n_out)
        i0 = np.clip(np.floor(x).astype(int), 0, n_in - 2)
        return x - i0, i0, i0 + 1

    fy, y0, y1 = positions(in_h, out_h)
    fx, x0, x1 = positions(in_w, out_w)
    rows = a[y0] * (1.0 - fy)[:, None] + a[y1] * fy[:, None]
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def to_mel(
    samples: np.ndarray, sample_rate: int, params: MelParams = MelParams()
) -> np.ndarray:
    """Compute the 224x224 [0, 1] mel grid for one waveform.

    Row 0 is the highest mel bin (image orientation); a constant input yields
    the all-zero grid.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise InvalidArgumentError("waveform must be a non-empty 1-D array")
    if sample_rate <= 0:
        raise InvalidArgumentError("sample_rate must be positive")
    fmax = params.fmax if params.fmax is not None else sample_rate / 2.0
    if sample_rate < 2.0 * fmax:
        raise InvalidArgumentError(
            f"sample_rate {sample_rate} below twice the top mel frequency {fmax}"
        )

    n_target = int(round(CLIP_SECONDS * sample_rate))
    if samples.size >= n_target:
        samples = samples[:n_target]
    else:
        samples = np.pad(samples, (0, n_target - samples.size))

    win = min(params.fft_window, n_target)
    hop = max(int(round(win * (1.0 - params.overlap))), 1)
    window = np.hanning(win)
    n_frames = 1 + (n_target - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * window
    mag = np.abs(np.fft.rfft(frames, n=win, axis=1))  # (frames, bins)

    fb = mel_filterbank(sample_rate, win, params.mel_bins, fmax)
    mel = mag @ fb.T  # (frames, mels)
    peak = mel.max()
    if peak <= 0.0:
        return np.zeros((TARGET_SIZE, TARGET_SIZE))
    # Peak-normalize before the log floor so gain cancels exactly.
    logmel = np.log(mel / peak + LOG_FLOOR)

    lo, hi = logmel.min(), logmel.max()
    if hi - lo <= 0.0:
        return np.zeros((TARGET_SIZE, TARGET_SIZE))
    norm = (logmel - lo) / (hi - lo)

    # (mels, frames) with low frequencies at the bottom row.
    grid = _bilinear_resize(norm.T[::-1], TARGET_SIZE, TARGET_SIZE)
    return np.clip(grid, 0.0, 1.0)


def jet_colorize(grid: np.ndarray) -> np.ndarray:
    """Map a [0, 1] grid to a 3xHxW jet-colored image, fixed piecewise-linear."""
    v = np.asarray(grid, dtype=np.float64)
    r = np.clip(np.minimum(4.0 * v - 1.5, -4.0 * v + 4.5), 0.0, 1.0)
    g = np.clip(np.minimum(4.0 * v - 0.5, -4.0 * v + 3.5), 0.0, 1.0)
    b = np.clip(np.minimum(4.0 * v + 0.5, -4.0 * v + 2.5), 0.0, 1.0)
    return np.stack([r, g, b])


def waveform_to_image(
    samples: np.ndarray, sample_rate: int, params: MelParams = MelParams()
) -> np.ndarray:
    """Full pipeline: waveform -> 3x224x224 jet mel-spectrogram in [0, 1]."""
    return jet_colorize(to_mel(samples, sample_rate, params))


def render_png(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write a 3xHxW [0, 1] image as 8-bit RGB PNG, value = round(255 * v)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidArgumentError(f"expected a 3xHxW image, got shape {image.shape}")
    rgb = np.round(255.0 * np.clip(image, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(rgb.transpose(1, 2, 0), mode="RGB").save(os.fspath(path), format="PNG")


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG back to a 3xHxW array in [0, 1]."""
    with Image.open(os.fspath(path)) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return rgb.transpose(2, 0, 1)
