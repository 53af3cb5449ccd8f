"""Synthetic two-class corpus for desk-scale runs.

Bona fide utterances are harmonic tone stacks with a slow amplitude
envelope. Spoofed ones use the same generator with two artifacts added: a
spectral notch (harmonics inside a band are removed) and band-limited noise
bursts in the 4-7 kHz region.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import soundfile as sf
from scipy import signal

from recolor_fad import SAMPLE_RATE, TARGET_LENGTH
from recolor_fad.audio import (BONAFIDE, SPOOF, CorpusManifest, UtteranceRecord,
                               write_protocol)

_PREFIX = {"train": "T", "dev": "D", "eval": "E", "pretrain": "P"}


def _tone_stack(rng, n, sr, notch=None):
    t = np.arange(n) / sr
    f0 = rng.uniform(90.0, 260.0)
    vib = 1.0 + 0.015 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vib) / sr
    x = np.zeros(n)
    for h in range(1, int(5000.0 // f0) + 1):
        if notch is not None and notch[0] <= h * f0 <= notch[1]:
            continue
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    rate = rng.uniform(1.5, 4.0)
    env = 0.55 + 0.45 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    return x * env


def _noise_bursts(rng, n, sr, level):
    sos = signal.butter(6, [4000.0, 7000.0], btype="bandpass", fs=sr, output="sos")
    out = np.zeros(n)
    # first burst always lands inside the prefix window used at FAD time
    limits = [min(n, TARGET_LENGTH)] + [n] * 2
    for limit in limits:
        dur = int(rng.uniform(0.25, 0.5) * sr)
        dur = min(dur, limit)
        start = int(rng.integers(0, max(limit - dur, 0) + 1))
        burst = signal.sosfilt(sos, rng.standard_normal(dur))
        burst *= np.hanning(dur) ** 0.25
        out[start:start + dur] += level * burst / max(np.max(np.abs(burst)), 1e-9)
    return out


def synth_utterance(rng: np.random.Generator, spoof: bool, sr: int = SAMPLE_RATE) -> np.ndarray:
    n = int(rng.uniform(3.0, 5.5) * sr)
    notch = None
    if spoof:
        lo = rng.uniform(800.0, 2200.0)
        notch = (lo, lo + 700.0)
    x = _tone_stack(rng, n, sr, notch)
    x /= np.max(np.abs(x))
    if spoof:
        x += _noise_bursts(rng, n, sr, level=0.6)
    x += 0.003 * rng.standard_normal(n)
    return 0.9 * x / np.max(np.abs(x))


def synth_toy_corpus(n_per_class: int, seed: int, out_dir, partition: str = "train") -> CorpusManifest:
    """Write ``2 * n_per_class`` WAV files plus ``<partition>.txt`` protocol under ``out_dir``."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    rng = np.random.default_rng(seed)
    prefix = _PREFIX.get(partition, "X")
    records = []
    for i in range(2 * n_per_class):
        spoof = i >= n_per_class
        utt_id = f"TOY_{prefix}_{i:05d}"
        speaker = f"TOY_{rng.integers(0, 20):04d}"
        x = synth_utterance(rng, spoof)
        path = wav_dir / f"{utt_id}.wav"
        sf.write(str(path), x, SAMPLE_RATE, subtype="PCM_16", format="WAV")
        records.append(UtteranceRecord(utt_id, speaker, "T01" if spoof else "-",
                                       SPOOF if spoof else BONAFIDE, path))
    write_protocol(records, out_dir / f"{partition}.txt")
    return CorpusManifest(partition, records)
