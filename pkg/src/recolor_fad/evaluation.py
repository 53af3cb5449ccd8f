"""Score files, DET operating points and equal error rate."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from recolor_fad.audio import BONAFIDE, LABELS, SPOOF


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreEntry:
    utt_id: str
    label: str
    score: float


@dataclass
class EERResult:
    eer: float
    threshold: float
    n_bona: int
    n_spoof: int

    @property
    def percent(self) -> str:
        return f"{100.0 * self.eer:.2f}%"


def split_scores(entries) -> tuple[np.ndarray, np.ndarray]:
    bona = np.array([e.score for e in entries if e.label == BONAFIDE], dtype=np.float64)
    spoof = np.array([e.score for e in entries if e.label == SPOOF], dtype=np.float64)
    if len(bona) == 0 or len(spoof) == 0:
        raise ScoreError(f"EER needs both classes, got {len(bona)} bonafide and {len(spoof)} spoof")
    return bona, spoof


def error_rates(bona: np.ndarray, spoof: np.ndarray):
    """FAR/FRR at every distinct score and at +inf.

    FAR(t) is the spoof fraction scoring >= t, FRR(t) the bona fide fraction
    scoring < t. Returns (thresholds, far, frr), thresholds ascending.
    """
    bona = np.sort(np.asarray(bona, dtype=np.float64))
    spoof = np.sort(np.asarray(spoof, dtype=np.float64))
    thr = np.unique(np.concatenate([bona, spoof]))
    thr = np.append(thr, np.inf)
    frr = np.searchsorted(bona, thr, side="left") / len(bona)
    far = 1.0 - np.searchsorted(spoof, thr, side="left") / len(spoof)
    return thr, far, frr


def eer_from_arrays(bona, spoof) -> EERResult:
    if len(bona) == 0 or len(spoof) == 0:
        raise ScoreError("EER needs both classes")
    thr, far, frr = error_rates(bona, spoof)
    diff = far - frr                   # non-increasing, starts at 1, ends at -1
    i = int(np.nonzero(diff <= 0)[0][0])
    if diff[i] == 0:
        eer, t = far[i], thr[i]
    else:
        # crossing between grid points i-1 and i
        alpha = diff[i - 1] / (diff[i - 1] - diff[i])
        eer = far[i - 1] + alpha * (far[i] - far[i - 1])
        t = thr[i - 1] if np.isinf(thr[i]) else thr[i - 1] + alpha * (thr[i] - thr[i - 1])
    return EERResult(float(eer), float(t), len(bona), len(spoof))


def compute_eer(entries) -> EERResult:
    return eer_from_arrays(*split_scores(entries))


def det_points(entries) -> list[tuple[float, float]]:
    """(FAR, FRR) at every threshold, threshold ascending (FAR falls, FRR rises)."""
    _, far, frr = error_rates(*split_scores(entries))
    return [(float(a), float(r)) for a, r in zip(far, frr)]


def write_scores(entries, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for e in entries:
            fh.write(f"{e.utt_id} {e.label} {float(e.score)!r}\n")
    return path


def read_scores(path) -> list[ScoreEntry]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 3 or cols[1] not in LABELS:
                raise ScoreError(f"{path}:{lineno}: expected 'utt_id label score', got {line.strip()!r}")
            try:
                score = float(cols[2])
            except ValueError:
                raise ScoreError(f"{path}:{lineno}: bad score {cols[2]!r}") from None
            out.append(ScoreEntry(cols[0], cols[1], score))
    return out


def write_det_csv(points, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("far,frr\n")
        for far, frr in points:
            fh.write(f"{far!r},{frr!r}\n")
    return path
