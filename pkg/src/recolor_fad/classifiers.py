"""Feature fusion and the back-end classifiers (LCNN, ResNet18, adapted AASIST).

Every classifier takes a (B, 3, 256, 256) feature image and returns (B, 2)
logits ordered (bonafide, spoof). Inputs are standardized per sample and
channel first, since add/sub fusion leaves values outside [0, 1].
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

# "original" ignores the reconstruction: the plain-feature baseline
FUSION_MODES = ("only_rec", "add", "sub", "original")
CLASSIFIERS = ("lcnn", "resnet18", "aasist")


def fuse(original: torch.Tensor, recon: torch.Tensor, mode: str) -> torch.Tensor:
    if original.shape != recon.shape:
        raise ValueError(f"shape mismatch: {tuple(original.shape)} vs {tuple(recon.shape)}")
    if mode == "only_rec":
        return recon
    if mode == "add":
        return original + recon
    if mode == "sub":
        return original - recon
    if mode == "original":
        return original
    raise ValueError(f"unknown fusion mode {mode!r}")


def scores_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Higher means more bona fide."""
    return logits[:, 0] - logits[:, 1]


def standardize(x, eps=1e-5):
    mean = x.mean(dim=(-2, -1), keepdim=True)
    std = x.std(dim=(-2, -1), keepdim=True, unbiased=False)
    return (x - mean) / (std + eps)


def _check_input(x):
    if x.dim() != 4 or tuple(x.shape[1:]) != (3, 256, 256):
        raise ValueError(f"expected (B, 3, 256, 256) input, got {tuple(x.shape)}")


# ---------------------------------------------------------------------------
# LCNN


class MFM(nn.Module):
    """Max-Feature-Map: split channels in two halves and keep the elementwise max."""

    def __init__(self, in_ch, out_ch, k=3, s=1, p=None, fc=False):
        super().__init__()
        self.out_ch = out_ch
        if fc:
            self.filter = nn.Linear(in_ch, 2 * out_ch)
        else:
            self.filter = nn.Conv2d(in_ch, 2 * out_ch, k, s, k // 2 if p is None else p)

    def forward(self, x):
        return self.filter(x).unflatten(1, (2, self.out_ch)).max(dim=1).values


class LCNN(nn.Module):
    """Nine conv/MFM layers in the usual anti-spoofing LCNN arrangement.

    The last map is max-pooled to a coarse ``pool`` grid and flattened, so the
    head still sees where in frequency a pattern occurred.
    """

    def __init__(self, widths=(32, 48, 64, 32, 32), dropout=0.3, pool=(4, 4)):
        super().__init__()
        w1, w2, w3, w4, w5 = widths
        self.features = nn.Sequential(
            MFM(3, w1, k=5),
            nn.MaxPool2d(2),
            MFM(w1, w1, k=1),
            nn.BatchNorm2d(w1, affine=False),
            MFM(w1, w2, k=3),
            nn.MaxPool2d(2),
            nn.BatchNorm2d(w2, affine=False),
            MFM(w2, w2, k=1),
            nn.BatchNorm2d(w2, affine=False),
            MFM(w2, w3, k=3),
            nn.MaxPool2d(2),
            MFM(w3, w3, k=1),
            nn.BatchNorm2d(w3, affine=False),
            MFM(w3, w4, k=3),
            nn.BatchNorm2d(w4, affine=False),
            MFM(w4, w4, k=1),
            nn.BatchNorm2d(w4, affine=False),
            MFM(w4, w5, k=3),
            nn.MaxPool2d(2),
        )
        self.pool = nn.AdaptiveMaxPool2d(pool)
        self.fc = MFM(w5 * pool[0] * pool[1], w5, fc=True)
        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(w5, 2)

    def forward(self, x):
        _check_input(x)
        x = self.features(standardize(x))
        x = self.pool(x).flatten(1)
        return self.out(self.drop(self.fc(x)))


# ---------------------------------------------------------------------------
# ResNet18


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False),
                                      nn.BatchNorm2d(out_ch))

    def forward(self, x):
        idt = x if self.down is None else self.down(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + idt)


class ResNet18(nn.Module):
    def __init__(self, base_width=64):
        super().__init__()
        w = base_width
        self.stem = nn.Sequential(
            nn.Conv2d(3, w, 7, 2, 3, bias=False),
            nn.BatchNorm2d(w),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        layers, in_ch = [], w
        for i, out_ch in enumerate((w, 2 * w, 4 * w, 8 * w)):
            stride = 1 if i == 0 else 2
            layers += [BasicBlock(in_ch, out_ch, stride), BasicBlock(out_ch, out_ch)]
            in_ch = out_ch
        self.layers = nn.Sequential(*layers)
        self.fc = nn.Linear(in_ch, 2)

    def forward(self, x):
        _check_input(x)
        x = self.layers(self.stem(standardize(x)))
        return self.fc(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))


# ---------------------------------------------------------------------------
# AASIST with a linear front-end


def image_to_frames(x: torch.Tensor) -> torch.Tensor:
    """(B, C, Q, T) -> (B, T, C*Q); element (c, q, t) lands at frame t, index c*Q + q."""
    b, c, q, t = x.shape
    return x.permute(0, 3, 1, 2).reshape(b, t, c * q)


class GraphAttention(nn.Module):
    """Homogeneous graph attention over a fully connected node set."""

    def __init__(self, in_dim, out_dim, temperature=2.0, dropout=0.2):
        super().__init__()
        self.att_proj = nn.Linear(in_dim, out_dim)
        self.att_weight = nn.Parameter(torch.empty(out_dim, 1))
        nn.init.xavier_normal_(self.att_weight)
        self.proj_with_att = nn.Linear(in_dim, out_dim)
        self.proj_without_att = nn.Linear(in_dim, out_dim)
        self.bn = nn.BatchNorm1d(out_dim)
        self.drop = nn.Dropout(dropout)
        self.temperature = temperature

    def forward(self, x):
        x = self.drop(x)
        pair = x.unsqueeze(2) * x.unsqueeze(1)                     # (B, N, N, D)
        e = torch.tanh(self.att_proj(pair)) @ self.att_weight      # (B, N, N, 1)
        att = torch.softmax(e.squeeze(-1) / self.temperature, dim=-1)
        out = self.proj_with_att(att @ x) + self.proj_without_att(x)
        return F.selu(self.bn(out.transpose(1, 2)).transpose(1, 2))


class HeteroGraphAttention(nn.Module):
    """Joint attention over two node types plus a master node."""

    def __init__(self, in_dim, out_dim, temperature=100.0, dropout=0.2):
        super().__init__()
        self.proj_type1 = nn.Linear(in_dim, in_dim)
        self.proj_type2 = nn.Linear(in_dim, in_dim)
        self.att_proj = nn.Linear(in_dim, out_dim)
        self.att_proj_m = nn.Linear(in_dim, out_dim)
        self.att_weight11 = nn.Parameter(torch.empty(out_dim, 1))
        self.att_weight22 = nn.Parameter(torch.empty(out_dim, 1))
        self.att_weight12 = nn.Parameter(torch.empty(out_dim, 1))
        self.att_weight_m = nn.Parameter(torch.empty(out_dim, 1))
        for w in (self.att_weight11, self.att_weight22, self.att_weight12, self.att_weight_m):
            nn.init.xavier_normal_(w)
        self.proj_with_att = nn.Linear(in_dim, out_dim)
        self.proj_without_att = nn.Linear(in_dim, out_dim)
        self.proj_with_att_m = nn.Linear(in_dim, out_dim)
        self.proj_without_att_m = nn.Linear(in_dim, out_dim)
        self.bn = nn.BatchNorm1d(out_dim)
        self.drop = nn.Dropout(dropout)
        self.temperature = temperature

    def forward(self, x1, x2, master):
        n1 = x1.shape[1]
        x = torch.cat([self.proj_type1(x1), self.proj_type2(x2)], dim=1)
        x = self.drop(x)

        # master node attends over all nodes
        e_m = torch.tanh(self.att_proj_m(x * master)) @ self.att_weight_m
        att_m = torch.softmax(e_m.squeeze(-1) / self.temperature, dim=-1)
        master = self.proj_with_att_m(att_m.unsqueeze(1) @ x) + self.proj_without_att_m(master)

        pair = torch.tanh(self.att_proj(x.unsqueeze(2) * x.unsqueeze(1)))
        n = x.shape[1]
        is1 = torch.arange(n, device=x.device) < n1
        same1 = is1[:, None] & is1[None, :]
        same2 = ~is1[:, None] & ~is1[None, :]
        e = torch.where(same1[..., None], pair @ self.att_weight11,
                        torch.where(same2[..., None], pair @ self.att_weight22,
                                    pair @ self.att_weight12)).squeeze(-1)
        att = torch.softmax(e / self.temperature, dim=-1)
        out = self.proj_with_att(att @ x) + self.proj_without_att(x)
        out = F.selu(self.bn(out.transpose(1, 2)).transpose(1, 2))
        return out[:, :n1], out[:, n1:], master


class GraphPool(nn.Module):
    def __init__(self, dim, ratio):
        super().__init__()
        self.score = nn.Linear(dim, 1)
        self.ratio = ratio

    def forward(self, h):
        s = torch.sigmoid(self.score(h))
        h = h * s
        k = max(int(h.shape[1] * self.ratio), 1)
        idx = torch.topk(s.squeeze(-1), k, dim=1).indices
        return torch.gather(h, 1, idx.unsqueeze(-1).expand(-1, -1, h.shape[-1]))


class ResidualBlock2d(nn.Module):
    def __init__(self, in_ch, out_ch, first=False):
        super().__init__()
        self.first = first
        if not first:
            self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, (2, 3), padding=(1, 1))
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, (2, 3), padding=(0, 1))
        self.down = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else None
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        idt = x if self.down is None else self.down(x)
        out = x if self.first else F.selu(self.bn1(x))
        out = self.conv2(F.selu(self.bn2(self.conv1(out))))
        return self.pool(out + idt)


class AASIST(nn.Module):
    """AASIST back-end on 256 frames x 768 features with a linear 768->128 front-end.

    The linear output is treated as a (1, 128, 256) map, encoded by residual
    blocks, and split into spectral and temporal node sets that go through
    graph attention, pooling and two heterogeneous branches.
    """

    def __init__(self, filters=(16, 32), gat_dims=(32, 16), pool_ratios=(0.5, 0.5, 0.5, 0.5),
                 temperatures=(2.0, 2.0, 100.0, 100.0), in_features=768, front_dim=128,
                 dropout=0.5):
        super().__init__()
        f1, f2 = filters
        g1, g2 = gat_dims
        self.front = nn.Linear(in_features, front_dim)
        self.first_bn = nn.BatchNorm2d(1)
        self.encoder = nn.Sequential(
            ResidualBlock2d(1, f1, first=True),
            ResidualBlock2d(f1, f1),
            ResidualBlock2d(f1, f2),
            ResidualBlock2d(f2, f2),
        )
        freq_nodes = front_dim // 16
        self.pos_s = nn.Parameter(torch.randn(1, freq_nodes, f2) * 0.02)
        self.master1 = nn.Parameter(torch.randn(1, 1, g1))
        self.master2 = nn.Parameter(torch.randn(1, 1, g1))

        self.gat_s = GraphAttention(f2, g1, temperatures[0])
        self.gat_t = GraphAttention(f2, g1, temperatures[1])
        self.pool_s = GraphPool(g1, pool_ratios[0])
        self.pool_t = GraphPool(g1, pool_ratios[1])

        self.htrg11 = HeteroGraphAttention(g1, g2, temperatures[2])
        self.htrg12 = HeteroGraphAttention(g2, g2, temperatures[2])
        self.htrg21 = HeteroGraphAttention(g1, g2, temperatures[2])
        self.htrg22 = HeteroGraphAttention(g2, g2, temperatures[2])
        self.pool_hs1 = GraphPool(g2, pool_ratios[2])
        self.pool_ht1 = GraphPool(g2, pool_ratios[2])
        self.pool_hs2 = GraphPool(g2, pool_ratios[2])
        self.pool_ht2 = GraphPool(g2, pool_ratios[2])

        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(5 * g2, 2)

    def _branch(self, s, t, master, htrg1, htrg2, pool_s, pool_t):
        t1, s1, m1 = htrg1(t, s, master)
        s1, t1 = pool_s(s1), pool_t(t1)
        t2, s2, m2 = htrg2(t1, s1, m1)
        return t1 + t2, s1 + s2, m1 + m2

    def forward(self, x):
        _check_input(x)
        frames = image_to_frames(standardize(x))               # (B, 256, 768)
        e = self.front(frames).transpose(1, 2).unsqueeze(1)    # (B, 1, 128, 256)
        e = F.selu(self.first_bn(e))
        e = self.encoder(e)                                    # (B, C, F', T')

        s = torch.amax(e.abs(), dim=3).transpose(1, 2) + self.pos_s
        t = torch.amax(e.abs(), dim=2).transpose(1, 2)
        s = self.pool_s(self.gat_s(s))
        t = self.pool_t(self.gat_t(t))

        b = x.shape[0]
        t1, s1, m1 = self._branch(s, t, self.master1.expand(b, -1, -1),
                                  self.htrg11, self.htrg12, self.pool_hs1, self.pool_ht1)
        t2, s2, m2 = self._branch(s, t, self.master2.expand(b, -1, -1),
                                  self.htrg21, self.htrg22, self.pool_hs2, self.pool_ht2)
        t = torch.maximum(t1, t2)
        s = torch.maximum(s1, s2)
        m = torch.maximum(m1, m2)

        h = torch.cat([t.abs().amax(1), t.mean(1), s.abs().amax(1), s.mean(1), m.squeeze(1)], dim=1)
        return self.out(self.drop(h))


def build_classifier(name: str, width: int | None = None, seed: int = 0) -> nn.Module:
    """Construct a classifier; ``width`` scales channel counts (None = full size)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if name == "lcnn":
            w = width or 32
            return LCNN((w, w * 3 // 2, w * 2, w, w))
        if name == "resnet18":
            return ResNet18(width or 64)
        if name == "aasist":
            if width is None:
                return AASIST(filters=(32, 64), gat_dims=(64, 32))
            return AASIST(filters=(width, 2 * width), gat_dims=(2 * width, width))
    raise ValueError(f"unknown classifier {name!r}")
