"""Reconstruction pretraining and joint FAD training with gated reconstruction loss."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from recolor_fad.audio import BONAFIDE, CorpusManifest, fix_length, load_waveform
from recolor_fad.classifiers import build_classifier, fuse, scores_from_logits
from recolor_fad.evaluation import ScoreEntry, compute_eer
from recolor_fad.features import featurize
from recolor_fad.recolor import (CheckpointError, RecolorConfig, RecolorNet, load_recolor,
                                 read_checkpoint, save_checkpoint)

log = logging.getLogger(__name__)

BONA_IDX, SPOOF_IDX = 0, 1
REC_MODES = ("true_rec", "all_rec")


class TrainingError(RuntimeError):
    pass


@dataclass
class LossConfig:
    rec_mode: str = "true_rec"
    rec_weight: float = 1.0
    cls_loss: str = "cross_entropy"

    def __post_init__(self):
        if self.rec_mode not in REC_MODES:
            raise ValueError(f"unknown rec_mode {self.rec_mode!r}")
        if self.rec_weight < 0:
            raise ValueError("rec_weight must be >= 0")
        if self.cls_loss != "cross_entropy":
            raise ValueError(f"unknown cls_loss {self.cls_loss!r}")


@dataclass
class Hyper:
    lr: float = 1e-4
    batch_size: int = 16
    weight_decay: float = 0.0
    epochs: int = 100
    steps: int = 1000
    patience: int = 10
    cosine: bool = True
    grid_every: int = 0
    eval_path: str = "test"
    freeze_recolor: bool = False
    detach_cls: bool = False
    class_weighting: bool = False
    seed: int = 0


# ---------------------------------------------------------------------------
# losses


def per_sample_mse(recons: torch.Tensor, originals: torch.Tensor) -> torch.Tensor:
    if recons.shape != originals.shape:
        raise ValueError(f"shape mismatch: {tuple(recons.shape)} vs {tuple(originals.shape)}")
    return ((recons - originals) ** 2).flatten(1).mean(dim=1)


def reconstruction_loss(recon: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    if recon.shape != original.shape:
        raise ValueError(f"shape mismatch: {tuple(recon.shape)} vs {tuple(original.shape)}")
    return ((recon - original) ** 2).mean()


def gated_reconstruction_loss(recons, originals, labels, mode: str) -> torch.Tensor:
    """Mean per-sample MSE over the whole batch (all_rec) or bona fide only (true_rec).

    ``labels`` holds class indices (0 = bonafide). true_rec on a batch
    without bona fide samples is 0.
    """
    labels = torch.as_tensor(labels)
    if len(recons) != len(originals) or len(recons) != len(labels):
        raise ValueError("recons, originals and labels must have equal batch sizes")
    mse = per_sample_mse(recons, originals)
    if mode == "all_rec":
        return mse.mean()
    if mode == "true_rec":
        mask = labels == BONA_IDX
        if not bool(mask.any()):
            return mse.sum() * 0.0
        return mse[mask].mean()
    raise ValueError(f"unknown rec mode {mode!r}")


# ---------------------------------------------------------------------------
# data


class FeatureSet:
    """Utterances of a manifest as spectrogram images (prefix crop, cached)."""

    def __init__(self, manifest: CorpusManifest):
        self.manifest = manifest
        self._cache: dict[int, torch.Tensor] = {}

    def __len__(self):
        return len(self.manifest.records)

    def image(self, i: int) -> torch.Tensor:
        if i not in self._cache:
            w = fix_length(load_waveform(self.manifest.records[i].path), mode="crop_fixed")
            self._cache[i] = torch.from_numpy(featurize(w)).float()
        return self._cache[i]

    def batch(self, idx):
        x = torch.stack([self.image(int(i)) for i in idx])
        y = torch.tensor([label_index(self.manifest.records[int(i)].label) for i in idx])
        return x, y

    @property
    def labels(self) -> np.ndarray:
        return np.array([label_index(r.label) for r in self.manifest.records])


def label_index(label: str) -> int:
    return BONA_IDX if label == BONAFIDE else SPOOF_IDX


def _check_finite(loss, batch, out_dir, what):
    if torch.isfinite(loss):
        return
    dump = None
    if out_dir is not None:
        dump = Path(out_dir) / f"nonfinite_{what}_batch.pt"
        torch.save({k: v.detach() for k, v in batch.items()}, dump)
    raise TrainingError(f"non-finite {what} loss ({loss.item()}); batch dumped to {dump}")


class LossLog:
    """Append-only ``step loss_cls loss_rec dev_eer`` lines."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[tuple[int, float, float, float]] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, step, loss_cls=math.nan, loss_rec=math.nan, dev_eer=math.nan):
        row = (int(step), float(loss_cls), float(loss_rec), float(dev_eer))
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(f"{row[0]} {row[1]!r} {row[2]!r} {row[3]!r}\n")


def read_loss_log(path) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _optimizer(params, hyper: Hyper, total_steps: int):
    opt = torch.optim.Adam(params, lr=hyper.lr, weight_decay=hyper.weight_decay)
    sched = None
    if hyper.cosine and total_steps > 0:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total_steps)
    return opt, sched


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainResult:
    checkpoint: Path | None
    model: RecolorNet
    losses: list[float]
    eval_before: float
    eval_after: float


@torch.no_grad()
def reconstruction_error(model: RecolorNet, images: torch.Tensor, mode="train", batch_size=8) -> float:
    """Mean MSE between ``images`` and their recolored versions."""
    model.eval()
    total = 0.0
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        total += per_sample_mse(model(x, mode=mode), x).sum().item()
    return total / len(images)


def pretrain(manifest: CorpusManifest, cfg: RecolorConfig, hyper: Hyper, out_dir=None,
             init: RecolorNet | None = None) -> PretrainResult:
    """Train the recolor network alone on random segments, minimizing MSE.

    Emits ``pretrain_log.txt``, periodic reconstruction grids (every
    ``hyper.grid_every`` steps) and ``recolor.pt`` under ``out_dir``.
    """
    if len(manifest) == 0:
        raise TrainingError("pretraining manifest is empty")
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    waves = [load_waveform(r.path) for r in manifest.records]
    fixed = torch.stack([torch.from_numpy(featurize(fix_length(w, mode="crop_fixed"))).float()
                         for w in waves])

    model = init if init is not None else RecolorNet(cfg)
    model.cfg.temperature = cfg.temperature
    opt, sched = _optimizer(model.parameters(), hyper, hyper.steps)
    eval_before = reconstruction_error(model, fixed)
    loss_log = LossLog(out_dir / "pretrain_log.txt" if out_dir else None)

    bs = min(hyper.batch_size, len(waves))
    losses = []
    for step in range(hyper.steps):
        model.train()
        idx = rng.choice(len(waves), size=bs, replace=False)
        x = torch.stack([torch.from_numpy(featurize(fix_length(waves[i], mode="crop_random", seed=rng))).float()
                         for i in idx])
        recon = model(x, mode="train")
        loss = reconstruction_loss(recon, x)
        _check_finite(loss, {"x": x, "recon": recon}, out_dir, "reconstruction")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if sched:
            sched.step()
        losses.append(loss.item())
        loss_log.append(step, loss_rec=loss.item())
        if out_dir and hyper.grid_every and (step + 1) % hyper.grid_every == 0:
            from recolor_fad.plotting import save_reconstruction_grid
            save_reconstruction_grid(model, fixed[:4], out_dir / f"grid_step{step + 1:06d}.png")

    eval_after = reconstruction_error(model, fixed)
    ckpt = None
    if out_dir:
        ckpt = save_checkpoint(out_dir / "recolor.pt", model, kind="pretrain", steps=hyper.steps)
        from recolor_fad.plotting import plot_loss_curve
        plot_loss_curve(loss_log.path, out_dir / "pretrain_loss.png")
    log.info("pretrain: recon MSE %.5f -> %.5f", eval_before, eval_after)
    return PretrainResult(ckpt, model, losses, eval_before, eval_after)


# ---------------------------------------------------------------------------
# FAD training


@dataclass
class TrainState:
    step: int
    recolor: RecolorNet
    classifier: torch.nn.Module
    optimizer: torch.optim.Optimizer
    classifier_name: str
    fusion: str
    classifier_width: int | None
    loss_cfg: LossConfig
    hyper: Hyper
    best_dev_eer: float = math.inf
    best_epoch: int = -1
    dev_eers: list[float] = field(default_factory=list)
    best_checkpoint: Path | None = None

    def save(self, path, **extra) -> Path:
        return save_checkpoint(
            path, self.recolor,
            kind="fad",
            step=self.step,
            classifier_name=self.classifier_name,
            classifier_width=self.classifier_width,
            classifier_state=self.classifier.state_dict(),
            optimizer_state=self.optimizer.state_dict(),
            fusion=self.fusion,
            loss_config=asdict(self.loss_cfg),
            hyper=asdict(self.hyper),
            **extra,
        )


def load_detector(path):
    """Load (recolor, classifier, fusion) from a FAD checkpoint."""
    payload = read_checkpoint(path)
    if payload.get("kind") != "fad":
        raise CheckpointError(f"{path} is not a FAD checkpoint (kind={payload.get('kind')!r})")
    recolor = load_recolor(path)
    clf = build_classifier(payload["classifier_name"], payload["classifier_width"])
    clf.load_state_dict(payload["classifier_state"])
    return recolor, clf, payload["fusion"], payload


def init_recolor(cfg: RecolorConfig, init: str = "scratch") -> RecolorNet:
    """``init`` is ``scratch`` or ``pretrained:PATH``."""
    if init == "scratch":
        return RecolorNet(cfg)
    if init.startswith("pretrained:"):
        return load_recolor(init.split(":", 1)[1], expect=cfg)
    raise ValueError(f"unknown init {init!r}; use 'scratch' or 'pretrained:PATH'")


@torch.no_grad()
def score_features(recolor, classifier, fusion, feats: FeatureSet, path="test", batch_size=16):
    recolor.eval()
    classifier.eval()
    entries = []
    for i in range(0, len(feats), batch_size):
        idx = range(i, min(i + batch_size, len(feats)))
        x, _ = feats.batch(idx)
        recon = recolor(x, mode=path)
        s = scores_from_logits(classifier(fuse(x, recon, fusion)))
        for j, score in zip(idx, s.tolist()):
            r = feats.manifest.records[j]
            entries.append(ScoreEntry(r.utt_id, r.label, score))
    return entries


def fad_train(train: CorpusManifest, dev: CorpusManifest, cfg: RecolorConfig,
              classifier: str = "lcnn", fusion: str = "sub", loss_cfg: LossConfig | None = None,
              hyper: Hyper | None = None, init: str = "scratch", classifier_width: int | None = None,
              out_dir=None) -> TrainState:
    """Jointly train recolor net and classifier; keep the lowest dev-EER epoch.

    Total loss is cross-entropy on the fused feature plus
    ``rec_weight * gated_reconstruction_loss``. Recolor uses the soft path
    while optimizing; dev scoring uses ``hyper.eval_path``.
    """
    loss_cfg = loss_cfg or LossConfig()
    hyper = hyper or Hyper()
    counts = train.counts()
    if min(counts.values()) == 0:
        raise TrainingError(f"training manifest must contain both classes, got {counts}")
    if min(dev.counts().values()) == 0:
        raise TrainingError(f"dev manifest must contain both classes, got {dev.counts()}")
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    recolor = init_recolor(cfg, init)
    clf = build_classifier(classifier, classifier_width, seed=cfg.seed)
    if hyper.freeze_recolor:
        recolor.requires_grad_(False)
    params = [p for p in list(recolor.parameters()) + list(clf.parameters()) if p.requires_grad]

    train_feats, dev_feats = FeatureSet(train), FeatureSet(dev)
    n = len(train_feats)
    bs = min(hyper.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    opt, sched = _optimizer(params, hyper, hyper.epochs * steps_per_epoch)
    class_w = None
    if hyper.class_weighting:
        class_w = torch.tensor([n / (2 * counts[BONAFIDE]), n / (2 * counts["spoof"])])

    state = TrainState(0, recolor, clf, opt, classifier, fusion, classifier_width, loss_cfg, hyper)
    loss_log = LossLog(out_dir / "train_log.txt" if out_dir else None)
    since_best = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            recolor.train(not hyper.freeze_recolor)
            clf.train()
            x, y = train_feats.batch(order[b * bs:(b + 1) * bs])
            recon = recolor(x, mode="train")
            feat = fuse(x, recon.detach() if hyper.detach_cls else recon, fusion)
            loss_cls = F.cross_entropy(clf(feat), y, weight=class_w)
            loss_rec = gated_reconstruction_loss(recon, x, y, loss_cfg.rec_mode)
            loss = loss_cls + loss_cfg.rec_weight * loss_rec
            _check_finite(loss, {"x": x, "y": y, "recon": recon}, out_dir, "training")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if sched:
                sched.step()
            state.step += 1
            dev_eer = math.nan
            if b == steps_per_epoch - 1:
                entries = score_features(recolor, clf, fusion, dev_feats, hyper.eval_path)
                dev_eer = compute_eer(entries).eer
                state.dev_eers.append(dev_eer)
            loss_log.append(state.step, loss_cls.item(), loss_rec.item(), dev_eer)

        log.info("epoch %d: dev EER %.2f%%", epoch, 100 * dev_eer)
        if dev_eer < state.best_dev_eer:
            state.best_dev_eer, state.best_epoch = dev_eer, epoch
            since_best = 0
            if out_dir:
                state.best_checkpoint = state.save(out_dir / "best.pt", dev_eer=dev_eer, epoch=epoch)
        else:
            since_best += 1
            if since_best >= hyper.patience:
                log.info("early stop after %d epochs without improvement", since_best)
                break
        if dev_eer == 0.0:
            break

    if out_dir:
        state.save(out_dir / "last.pt")
        with open(out_dir / "dev_eer.txt", "w") as fh:
            for epoch, eer in enumerate(state.dev_eers):
                fh.write(f"{epoch} {eer!r}\n")
        from recolor_fad.plotting import plot_loss_curve
        plot_loss_curve(loss_log.path, out_dir / "train_loss.png")
    return state
