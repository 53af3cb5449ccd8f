"""Waveform -> 3x256x256 spectrogram heatmap image."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from recolor_fad import TARGET_LENGTH
from recolor_fad.audio import Waveform

N_BINS = 257
IMG_SIZE = 256


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_magnitude(w, window_size: int = 512, hop: int = 256) -> np.ndarray:
    """Center-padded (reflect) Hann STFT magnitude, shape (window_size//2+1, 1+len//hop)."""
    x = np.asarray(w.samples if isinstance(w, Waveform) else w, dtype=np.float64)
    if x.ndim != 1 or len(x) != TARGET_LENGTH:
        raise ValueError(f"expected a waveform of {TARGET_LENGTH} samples, got shape {x.shape}")
    pad = window_size // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + len(x) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, window_size)[::hop][:n_frames]
    spec = np.abs(np.fft.rfft(frames * hann(window_size), axis=1)).T
    return spec


def trim_and_normalize(s: np.ndarray) -> np.ndarray:
    """Drop last frequency row and last frame, log1p, min-max to [0, 1]."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (N_BINS, N_BINS):
        raise ValueError(f"expected a {N_BINS}x{N_BINS} spectrogram, got {s.shape}")
    g = np.log1p(s[:IMG_SIZE, :IMG_SIZE])
    lo, hi = g.min(), g.max()
    if hi <= lo:
        return np.zeros_like(g)
    return (g - lo) / (hi - lo)


def to_heatmap(g: np.ndarray) -> np.ndarray:
    """Jet-like closed-form colormap; (H, W) in [0,1] -> (3, H, W) in [0,1]."""
    g = np.asarray(g, dtype=np.float64)
    if g.size and (np.nanmin(g) < 0.0 or np.nanmax(g) > 1.0 or np.isnan(g).any()):
        raise ValueError("heatmap input must lie in [0, 1]")
    v4 = 4.0 * g
    r = np.clip(1.5 - np.abs(v4 - 3.0), 0.0, 1.0)
    gr = np.clip(1.5 - np.abs(v4 - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(v4 - 1.0), 0.0, 1.0)
    return np.stack([r, gr, b])


def featurize(w) -> np.ndarray:
    s = stft_magnitude(w)
    assert s.shape == (N_BINS, N_BINS)
    g = trim_and_normalize(s)
    assert g.shape == (IMG_SIZE, IMG_SIZE)
    img = to_heatmap(g)
    assert img.shape == (3, IMG_SIZE, IMG_SIZE)
    return img


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0,1] -> (H, W, 3) uint8 via round(v*255)."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(img * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(img: np.ndarray, path) -> Path:
    path = Path(path)
    Image.fromarray(to_uint8(img), mode="RGB").save(path)
    return path
