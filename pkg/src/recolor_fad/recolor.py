"""Color-quantization reconstruction network.

A U-shaped encoder produces per-pixel K-way class activations, a palette
module produces K RGB colors per image, and the two are combined either
softly (temperature softmax, differentiable) or discretely (argmax ->
one-hot -> palette matmul).
"""

from __future__ import annotations

import math
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_FORMAT = "recolor-fad-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class RecolorConfig:
    num_colors: int = 8
    temperature: float = 0.01
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    pam_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.num_colors < 1:
            raise ValueError("num_colors must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if len(self.encoder_channels) != 3:
            raise ValueError("encoder_channels needs exactly three widths")

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d


def _check_image(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, H, W) image batch, got {tuple(x.shape)}")
    if x.shape[-1] % 8 or x.shape[-2] % 8:
        raise ValueError(f"spatial size must be divisible by 8, got {tuple(x.shape[-2:])}")


# ---------------------------------------------------------------------------
# quantization paths


def softmax_weights(a: torch.Tensor, temperature: float) -> torch.Tensor:
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return torch.softmax(a / temperature, dim=-3)


def quantize_train(a: torch.Tensor, p: torch.Tensor, temperature: float) -> torch.Tensor:
    """Soft recoloring: per-pixel softmax(a / T) over K mixes palette rows.

    ``a`` is (..., K, H, W) and ``p`` is (..., K, 3); returns (..., 3, H, W).
    """
    if a.shape[-3] != p.shape[-2] or p.shape[-1] != 3:
        raise ValueError(f"activation {tuple(a.shape)} and palette {tuple(p.shape)} disagree")
    s = softmax_weights(a, temperature)
    return torch.einsum("...khw,...kc->...chw", s, p)


def color_index(a: torch.Tensor) -> torch.Tensor:
    # torch.argmax returns the first maximal index, so ties go to the lowest k
    return torch.argmax(a, dim=-3)


def quantize_test(a: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Hard recoloring: argmax index map -> one-hot -> matmul with the palette."""
    if a.shape[-3] != p.shape[-2] or p.shape[-1] != 3:
        raise ValueError(f"activation {tuple(a.shape)} and palette {tuple(p.shape)} disagree")
    k = a.shape[-3]
    onehot = F.one_hot(color_index(a), k).movedim(-1, -3).to(p.dtype)
    return torch.einsum("...khw,...kc->...chw", onehot, p)


def quantize_test_gather(a: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Same result as :func:`quantize_test`, by indexing instead of matmul."""
    idx = color_index(a)                                   # (..., H, W)
    flat = idx.flatten(-2)                                 # (..., HW)
    gathered = torch.gather(p, -2, flat.unsqueeze(-1).expand(*flat.shape, 3))
    return gathered.movedim(-1, -2).reshape(*idx.shape[:-2], 3, *idx.shape[-2:])


def count_unique_colors(q) -> int:
    """Number of distinct RGB triples in a (3, H, W) image (exact equality)."""
    q = torch.as_tensor(q)
    if q.dim() != 3 or q.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {tuple(q.shape)}")
    return int(torch.unique(q.reshape(3, -1), dim=1).shape[1])


# ---------------------------------------------------------------------------
# pixel-mapping encoder


def _shift(x: torch.Tensor, dim: int, shift_size: int) -> torch.Tensor:
    """Shift channel groups by -pad..pad along ``dim`` with zero fill."""
    pad = shift_size // 2
    h, w = x.shape[-2:]
    xp = F.pad(x, (pad, pad, pad, pad))
    chunks = torch.chunk(xp, shift_size, dim=1)
    shifted = [torch.roll(c, s, dim) for c, s in zip(chunks, range(-pad, pad + 1))]
    out = torch.cat(shifted, dim=1)
    return out[..., pad:pad + h, pad:pad + w]


class ShiftedMLP(nn.Module):
    """Tokenized MLP: shift along H, fc, depthwise conv, GELU, shift along W, fc."""

    def __init__(self, dim, hidden=None, shift_size=5):
        super().__init__()
        hidden = hidden or dim
        self.shift_size = shift_size
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        b, c, h, w = x.shape
        t = _shift(x, 2, self.shift_size).flatten(2).transpose(1, 2)
        t = self.fc1(t)
        t = t.transpose(1, 2).reshape(b, -1, h, w)
        t = self.act(self.dwconv(t))
        t = _shift(t, 3, self.shift_size).flatten(2).transpose(1, 2)
        t = self.fc2(t)
        return t.transpose(1, 2).reshape(b, c, h, w)


class TokenizedBlock(nn.Module):
    def __init__(self, in_ch, dim):
        super().__init__()
        self.embed = nn.Conv2d(in_ch, dim, 3, stride=2, padding=1)
        self.norm1 = nn.LayerNorm(dim)
        self.mlp = ShiftedMLP(dim)
        self.norm2 = nn.LayerNorm(dim)

    def _ln(self, norm, x):
        return norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)

    def forward(self, x):
        x = self._ln(self.norm1, self.embed(x))
        x = x + self.mlp(x)
        return self._ln(self.norm2, x)


def _conv_stage(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.GroupNorm(1, out_ch),
        nn.MaxPool2d(2),
        nn.ReLU(inplace=True),
    )


class PixelMappingEncoder(nn.Module):
    """Two conv stages, a tokenized-MLP bottleneck, and a skip-connected decoder.

    Each encoder stage halves resolution; the decoder restores it and a 1x1
    conv projects to K class activations at full resolution.
    """

    def __init__(self, num_colors, channels=(16, 32, 64)):
        super().__init__()
        c1, c2, c3 = channels
        self.enc1 = _conv_stage(3, c1)
        self.enc2 = _conv_stage(c1, c2)
        self.bottleneck = TokenizedBlock(c2, c3)
        self.dec3 = nn.Conv2d(c3, c2, 3, padding=1)
        self.dec2 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = nn.Conv2d(c1, c1, 3, padding=1)
        self.norm3 = nn.GroupNorm(1, c2)
        self.norm2 = nn.GroupNorm(1, c1)
        self.head = nn.Conv2d(c1, num_colors, 1)
        # Start from uniform assignments: at low temperature a random head
        # saturates the softmax and starves the encoder of gradient.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @staticmethod
    def _up(x):
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, x):
        e1 = self.enc1(x)            # /2
        e2 = self.enc2(e1)           # /4
        e3 = self.bottleneck(e2)     # /8
        d = F.relu(self._up(self.norm3(self.dec3(e3))) + e2)
        d = F.relu(self._up(self.norm2(self.dec2(d))) + e1)
        d = F.relu(self._up(self.dec1(d)))
        return self.head(d)


# ---------------------------------------------------------------------------
# palette acquisition


class PaletteAcquisition(nn.Module):
    """Locate K colors in RGB space with learnable queries over conv features.

    Two stride-2 convs give a lower-resolution feature map; K queries attend
    over its flattened positions (scaled dot product) and a small head maps
    each attended vector to a sigmoid-bounded RGB triple.
    """

    def __init__(self, num_colors, channels=32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, channels, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.norm = nn.LayerNorm(channels)
        self.queries = nn.Parameter(torch.empty(num_colors, channels).uniform_(-1, 1))
        self.key = nn.Linear(channels, channels)
        self.value = nn.Linear(channels, channels)
        self.head = nn.Sequential(
            nn.Linear(channels, channels),
            nn.ReLU(inplace=True),
            nn.Linear(channels, 3),
        )

    def forward(self, x):
        f = self.norm(self.stem(x).flatten(2).transpose(1, 2))     # (B, N, C)
        k, v = self.key(f), self.value(f)
        scores = torch.einsum("qc,bnc->bqn", self.queries, k) / math.sqrt(k.shape[-1])
        attended = torch.softmax(scores, dim=-1) @ v                 # (B, K, C)
        return torch.sigmoid(self.head(attended + self.queries))


# ---------------------------------------------------------------------------


class RecolorNet(nn.Module):
    def __init__(self, cfg: RecolorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or RecolorConfig()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.encoder = PixelMappingEncoder(cfg.num_colors, cfg.encoder_channels)
            self.pam = PaletteAcquisition(cfg.num_colors, cfg.pam_channels)

    @property
    def num_colors(self):
        return self.cfg.num_colors

    def encode_activation(self, x):
        _check_image(x)
        return self.encoder(x)

    def acquire_palette(self, x):
        _check_image(x)
        return self.pam(x)

    def forward(self, x, mode: str = "train", temperature: float | None = None):
        a = self.encode_activation(x)
        p = self.acquire_palette(x)
        if mode == "train":
            return quantize_train(a, p, temperature or self.cfg.temperature)
        if mode == "test":
            return quantize_test(a, p)
        raise ValueError(f"unknown mode {mode!r}")


def recolor_forward(x, cfg: RecolorConfig, model: RecolorNet, mode: str = "test"):
    """Run ``model`` on a single (3, H, W) image or a batch."""
    single = x.dim() == 3
    xb = x.unsqueeze(0) if single else x
    out = model(xb, mode=mode, temperature=cfg.temperature)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoints


def _to_numpy(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().numpy().copy()
    if isinstance(obj, dict):
        return {k: _to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_numpy(v) for v in obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _to_torch(obj):
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(obj)
    if isinstance(obj, dict):
        return {k: _to_torch(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_torch(v) for v in obj)
    return obj


def save_checkpoint(path, recolor: RecolorNet, **extra) -> Path:
    """Pickle config and tensors (as numpy arrays); equal contents give equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "recolor_config": recolor.cfg.to_dict(),
        "recolor_state": recolor.state_dict(),
    }
    payload.update(extra)
    with open(path, "wb") as fh:
        pickle.dump(_to_numpy(payload), fh, protocol=4)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except Exception as exc:
        raise CheckpointError(f"{path} is not a recolor checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a recolor checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    return _to_torch(payload)


def load_recolor(path, expect: RecolorConfig | None = None) -> RecolorNet:
    """Load a RecolorNet; with ``expect``, fail on K or width mismatch."""
    payload = read_checkpoint(path)
    cfg = RecolorConfig(**payload["recolor_config"])
    if expect is not None:
        if cfg.num_colors != expect.num_colors:
            raise CheckpointError(
                f"shape mismatch: checkpoint {path} has {cfg.num_colors} colors, "
                f"config asks for {expect.num_colors}")
        if cfg.encoder_channels != expect.encoder_channels or cfg.pam_channels != expect.pam_channels:
            raise CheckpointError(
                f"shape mismatch: checkpoint {path} widths {cfg.encoder_channels}/{cfg.pam_channels} "
                f"vs config {expect.encoder_channels}/{expect.pam_channels}")
        cfg = RecolorConfig(**{**cfg.to_dict(), "temperature": expect.temperature, "seed": expect.seed})
    model = RecolorNet(cfg)
    try:
        model.load_state_dict(payload["recolor_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"shape mismatch loading {path}: {exc}") from exc
    return model
