"""Corpus ingest: protocol files, waveform loading and length fixing."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import soundfile as sf

from recolor_fad import SAMPLE_RATE, TARGET_LENGTH

log = logging.getLogger(__name__)

BONAFIDE = "bonafide"
SPOOF = "spoof"
LABELS = (BONAFIDE, SPOOF)
PARTITIONS = ("train", "dev", "eval", "pretrain")
MODES = ("pad_repeat", "crop_fixed", "crop_random")

CORPUS_ROOT_ENV = "RECOLOR_FAD_CORPUS_ROOT"


class ProtocolError(ValueError):
    pass


class ManifestError(FileNotFoundError):
    pass


class AudioError(OSError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    system_id: str
    label: str
    path: Path

    def __post_init__(self):
        if self.label not in LABELS:
            raise ProtocolError(f"unknown label {self.label!r}")


@dataclass
class CorpusManifest:
    partition: str
    records: list[UtteranceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def counts(self) -> dict[str, int]:
        out = {lab: 0 for lab in LABELS}
        for r in self.records:
            out[r.label] += 1
        return out

    def check_paths(self) -> None:
        missing = [str(r.path) for r in self.records if not r.path.exists()]
        if missing:
            listing = "\n  ".join(missing[:50])
            more = f"\n  ... and {len(missing) - 50} more" if len(missing) > 50 else ""
            raise ManifestError(f"{len(missing)} missing audio files:\n  {listing}{more}")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)


def resolve_root(path: str | os.PathLike) -> Path:
    """Resolve a relative corpus path against $RECOLOR_FAD_CORPUS_ROOT if set."""
    path = Path(path)
    root = os.environ.get(CORPUS_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def parse_protocol(path, partition: str, audio_dir=None, ext: str = ".wav",
                   check_paths: bool = True) -> CorpusManifest:
    """Parse an ASVspoof-style 5-column protocol file.

    Columns are ``speaker utt_id unused system_id key``. Audio paths are
    ``audio_dir/utt_id + ext``; ``audio_dir`` defaults to ``<protocol dir>/wav``.
    """
    if partition not in PARTITIONS:
        raise ProtocolError(f"unknown partition {partition!r}")
    path = Path(path)
    if audio_dir is None:
        audio_dir = path.parent / "wav"
    audio_dir = Path(audio_dir)

    records = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 5:
                raise ProtocolError(f"{path}:{lineno}: expected 5 fields, got {len(cols)}")
            speaker, utt_id, _, system_id, key = cols
            if key not in LABELS:
                raise ProtocolError(f"{path}:{lineno}: unknown key {key!r}")
            if utt_id in seen:
                raise ProtocolError(f"{path}:{lineno}: duplicate utterance id {utt_id}")
            seen.add(utt_id)
            records.append(UtteranceRecord(utt_id, speaker, system_id, key,
                                           audio_dir / f"{utt_id}{ext}"))
    manifest = CorpusManifest(partition, records)
    if check_paths:
        manifest.check_paths()
    return manifest


def write_protocol(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{r.speaker_id} {r.utt_id} - {r.system_id} {r.label}\n")


def load_waveform(path, target_sr: int = SAMPLE_RATE, normalize: bool = True) -> Waveform:
    """Read a PCM file as mono float64, resampled to ``target_sr`` and peak-normalized."""
    try:
        data, sr = sf.read(str(path), dtype="float64", always_2d=True)
    except Exception as exc:
        raise AudioError(f"cannot read audio file {path}: {exc}") from exc
    x = data.mean(axis=1)
    if sr != target_sr:
        log.info("resampling %s from %d Hz to %d Hz (linear)", path, sr, target_sr)
        x = resample_linear(x, sr, target_sr)
    if normalize:
        x = x / max(np.max(np.abs(x), initial=0.0), 1e-9)
    return Waveform(x, target_sr)


def resample_linear(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    n_out = int(round(len(x) * sr_out / sr_in))
    t_out = np.arange(n_out) * (sr_in / sr_out)
    return np.interp(t_out, np.arange(len(x)), x)


def fix_length(w: Waveform, target: int = TARGET_LENGTH, mode: str = "crop_fixed",
               seed: int | None = 0) -> Waveform:
    """Tile short input, crop long input; output has exactly ``target`` samples.

    ``crop_random`` draws its window offset from ``seed`` (an int or a
    ``numpy.random.Generator``).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if target <= 0:
        raise ValueError("target must be positive")
    x = np.asarray(w.samples)
    n = len(x)
    if n == 0:
        raise ValueError("cannot fix the length of an empty waveform")
    if n < target:
        x = np.tile(x, -(-target // n))[:target]
    elif n > target:
        if mode == "crop_random":
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            offset = int(rng.integers(0, n - target + 1))
        else:
            offset = 0
        x = x[offset:offset + target]
    return Waveform(x.copy(), w.sample_rate)


def manifest_from_dir(root, partition: str = "pretrain",
                      exts=(".wav", ".flac")) -> CorpusManifest:
    """All audio files under ``root`` as bona fide records (clean-speech pretraining corpora)."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"audio directory not found: {root}")
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in exts)
    records = [UtteranceRecord(p.stem, p.parent.name, "-", BONAFIDE, p) for p in paths]
    return CorpusManifest(partition, records)
