"""Stage-1 denoising network: a 1D U-Net with hierarchical multi-scale convolution
blocks and a gated, geography-aware attention module on every skip connection.

Input and output are (batch, length, 3) tensors over the (lat, lon, intensity)
channels of normalized latent movement sequences. Sequence lengths are padded
(replicate) to a multiple of 2**(levels-1) and cropped on output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .latent import NormStats


@dataclass
class DenoiserConfig:
    in_channels: int = 3
    base_channels: int = 128
    channel_multipliers: tuple[int, ...] = (1, 2, 2, 2)
    res_blocks_per_level: int = 2
    attention_level: int | None = None  # None: pick the level whose length is nearest 16
    pool_kernels: tuple[int, ...] = (2, 4, 8)
    bias_embed_dim: int = 32

    def __post_init__(self):
        if self.in_channels != 3:
            raise ValueError("denoiser operates on (lat, lon, intensity): in_channels must be 3")
        if len(self.channel_multipliers) == 0:
            raise ValueError("channel_multipliers must be non-empty")
        if len(self.pool_kernels) < 2:
            raise ValueError("need at least 2 pooling branches")
        if self.base_channels % 2 != 0:
            raise ValueError("base_channels must be even for the sinusoidal step embedding")


@dataclass
class ClampBounds:
    """Valid coordinate box for denormalized noisy inputs (dataset bbox plus margin)."""

    lat_min: float = -90.0
    lat_max: float = 90.0
    lon_min: float = -180.0
    lon_max: float = 180.0

    def __post_init__(self):
        self.lat_min = max(self.lat_min, -90.0)
        self.lat_max = min(self.lat_max, 90.0)
        self.lon_min = max(self.lon_min, -180.0)
        self.lon_max = min(self.lon_max, 180.0)

    @classmethod
    def from_coords(cls, coords, margin_deg: float = 1.0) -> "ClampBounds":
        return cls(
            lat_min=float(coords[:, 0].min()) - margin_deg,
            lat_max=float(coords[:, 0].max()) + margin_deg,
            lon_min=float(coords[:, 1].min()) - margin_deg,
            lon_max=float(coords[:, 1].max()) + margin_deg,
        )


def sinusoidal_step_embedding(n: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sinusoidal embedding of integer diffusion steps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=n.device) / (half - 1)
    )
    args = n.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb


def _norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


def torch_haversine_km(lat1, lon1, lat2, lon2):
    r1, r2 = torch.deg2rad(lat1), torch.deg2rad(lat2)
    dlat = r2 - r1
    dlon = torch.deg2rad(lon2 - lon1)
    a = torch.sin(dlat / 2) ** 2 + torch.cos(r1) * torch.cos(r2) * torch.sin(dlon / 2) ** 2
    return 6371.0 * 2.0 * torch.asin(torch.sqrt(torch.clamp(a, 0.0, 1.0)))


class HierarchicalConvBlock(nn.Module):
    """Parallel multi-scale branches summed with a direct conv, plus a residual.

    Each pooled branch is avg-pool(k) -> conv(3) -> nearest upsample back to
    the input length; output length always equals input length.
    """

    def __init__(self, in_channels: int, out_channels: int, pool_kernels: tuple[int, ...]):
        super().__init__()
        self.pool_kernels = tuple(pool_kernels)
        self.direct = nn.Conv1d(in_channels, out_channels, 3, padding=1)
        self.pooled = nn.ModuleList(
            nn.Conv1d(in_channels, out_channels, 3, padding=1) for _ in self.pool_kernels
        )
        self.skip = (
            nn.Identity() if in_channels == out_channels else nn.Conv1d(in_channels, out_channels, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        length = x.shape[-1]
        if length < max(self.pool_kernels):
            raise ValueError(f"length {length} shorter than largest pool kernel {max(self.pool_kernels)}")
        h = self.direct(x)
        for k, conv in zip(self.pool_kernels, self.pooled):
            branch = F.avg_pool1d(x, k)
            branch = conv(branch)
            h = h + F.interpolate(branch, size=length, mode="nearest")
        return h + self.skip(x)


class HierarchicalResBlock(nn.Module):
    """Pre-activation residual block built around the multi-scale convolution."""

    def __init__(self, in_channels: int, out_channels: int, emb_dim: int, pool_kernels):
        super().__init__()
        self.norm1 = _norm(in_channels)
        self.multi = HierarchicalConvBlock(in_channels, out_channels, pool_kernels)
        self.emb = nn.Linear(emb_dim, out_channels)
        self.norm2 = _norm(out_channels)
        self.conv2 = nn.Conv1d(out_channels, out_channels, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        self.skip = (
            nn.Identity() if in_channels == out_channels else nn.Conv1d(in_channels, out_channels, 1)
        )

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.multi(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(emb))[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class IntensityGate(nn.Module):
    """Dynamic gating signal g = sigmoid(conv(relu(conv(h)))), applied elementwise."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)

    def gate(self, h: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv2(F.relu(self.conv1(h))))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.gate(h) * h


class LocalSpatialBias(nn.Module):
    """Embed the per-step hop distances of the (denormalized) noisy input.

    Distances are haversine kilometers between consecutive sequence positions,
    with 0 at the first position. Coordinates are recovered through the
    normalization stats and clamped to the dataset box before measuring.
    """

    def __init__(self, embed_dim: int, out_channels: int, stats: NormStats, bounds: ClampBounds):
        super().__init__()
        if stats is None:
            raise ValueError("LocalSpatialBias requires normalization stats")
        self.net = nn.Sequential(
            nn.Linear(1, embed_dim),
            nn.ReLU(),
            nn.Linear(embed_dim, embed_dim),
        )
        self.proj = nn.Linear(embed_dim, out_channels)
        self.bounds = bounds
        self.register_buffer("coord_mean", torch.as_tensor(stats.mean[:2], dtype=torch.float32))
        self.register_buffer("coord_std", torch.as_tensor(stats.std[:2], dtype=torch.float32))

    def distances(self, x: torch.Tensor) -> torch.Tensor:
        """Hop distances in km for a (B, L, 3) normalized input; shape (B, L)."""
        with torch.no_grad():
            coords = x[..., :2] * self.coord_std + self.coord_mean
            lat = coords[..., 0].clamp(self.bounds.lat_min, self.bounds.lat_max)
            lon = coords[..., 1].clamp(self.bounds.lon_min, self.bounds.lon_max)
            hop = torch_haversine_km(lat[:, :-1], lon[:, :-1], lat[:, 1:], lon[:, 1:])
            return F.pad(hop, (1, 0))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d = self.distances(x).to(x.dtype)
        h = self.proj(self.net(d.unsqueeze(-1)))  # (B, L, C)
        return h.transpose(1, 2)


class S2GAttention(nn.Module):
    """Skip-connection refinement: gated features query a spatial-bias value map.

    Q and K are independent projections of the intensity-gated features; V is
    the local spatial bias of the noisy input pooled to the skip's length. The
    attention output is added residually to the incoming skip features.
    """

    def __init__(self, channels: int, bias_embed_dim: int, stats: NormStats, bounds: ClampBounds):
        super().__init__()
        if channels == 0:
            raise ValueError("attention head dimension must be positive")
        self.channels = channels
        self.gate = IntensityGate(channels)
        self.bias = LocalSpatialBias(bias_embed_dim, channels, stats, bounds)
        self.to_q = nn.Conv1d(channels, channels, 1)
        self.to_k = nn.Conv1d(channels, channels, 1)

    def attention(self, h_enc: torch.Tensor, x_noisy: torch.Tensor):
        """Returns (refined features, attention probabilities)."""
        length = h_enc.shape[-1]
        pooled = F.adaptive_avg_pool1d(x_noisy.transpose(1, 2), length).transpose(1, 2)
        gated = self.gate(h_enc)
        q = self.to_q(gated).transpose(1, 2)
        k = self.to_k(gated).transpose(1, 2)
        v = self.bias(pooled).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.channels), dim=-1)
        out = (attn @ v).transpose(1, 2)
        return h_enc + out, attn

    def forward(self, h_enc: torch.Tensor, x_noisy: torch.Tensor) -> torch.Tensor:
        refined, _ = self.attention(h_enc, x_noisy)
        return refined


class SelfAttention1d(nn.Module):
    """Single-head global self-attention along the length dimension."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.norm = _norm(channels)
        self.qkv = nn.Conv1d(channels, channels * 3, 1)
        self.out = nn.Conv1d(channels, channels, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def attention(self, x: torch.Tensor):
        h = self.norm(x)
        q, k, v = self.qkv(h).chunk(3, dim=1)
        q, k, v = (t.transpose(1, 2) for t in (q, k, v))
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.channels), dim=-1)
        out = (attn @ v).transpose(1, 2)
        return x + self.out(out), attn

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.attention(x)
        return out


class SASGUNet(nn.Module):
    """Noise-prediction U-Net for latent movement sequences of a fixed length."""

    def __init__(
        self,
        config: DenoiserConfig,
        seq_len: int,
        stats: NormStats,
        bounds: ClampBounds | None = None,
    ):
        super().__init__()
        if stats is None:
            raise ValueError("SASGUNet requires normalization stats for the spatial bias path")
        self.config = config
        self.seq_len = seq_len
        bounds = bounds or ClampBounds()

        levels = len(config.channel_multipliers)
        factor = 2 ** (levels - 1)
        self.padded_len = ((seq_len + factor - 1) // factor) * factor
        if self.padded_len % factor != 0:
            raise ValueError("padded length must divide by the downsampling factor")
        level_lengths = [self.padded_len // (2**i) for i in range(levels)]
        if config.attention_level is None:
            self.attention_level = min(range(levels), key=lambda i: abs(level_lengths[i] - 16))
        else:
            if not (0 <= config.attention_level < levels):
                raise ValueError(f"attention_level {config.attention_level} out of range")
            self.attention_level = config.attention_level

        chs = [config.base_channels * m for m in config.channel_multipliers]
        emb_dim = config.base_channels * 4
        self.step_mlp = nn.Sequential(
            nn.Linear(config.base_channels, emb_dim),
            nn.SiLU(),
            nn.Linear(emb_dim, emb_dim),
        )

        self.stem = nn.Conv1d(config.in_channels, config.base_channels, 3, padding=1)

        self.enc_levels = nn.ModuleList()
        self.downs = nn.ModuleList()
        in_ch = config.base_channels
        for i, ch in enumerate(chs):
            blocks = nn.ModuleList()
            for b in range(config.res_blocks_per_level):
                blocks.append(
                    HierarchicalResBlock(in_ch if b == 0 else ch, ch, emb_dim, config.pool_kernels)
                )
            self.enc_levels.append(blocks)
            if i < levels - 1:
                self.downs.append(nn.Conv1d(ch, ch, 3, stride=2, padding=1))
            in_ch = ch

        self.enc_attn = SelfAttention1d(chs[self.attention_level])
        self.mid1 = HierarchicalResBlock(chs[-1], chs[-1], emb_dim, config.pool_kernels)
        self.mid_attn = SelfAttention1d(chs[-1])
        self.mid2 = HierarchicalResBlock(chs[-1], chs[-1], emb_dim, config.pool_kernels)

        self.s2g = nn.ModuleList(
            S2GAttention(ch, config.bias_embed_dim, stats, bounds) for ch in chs
        )

        self.dec_levels = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i, ch in enumerate(chs):
            incoming = chs[i + 1] if i < levels - 1 else chs[-1]
            blocks = nn.ModuleList()
            for b in range(config.res_blocks_per_level):
                blocks.append(
                    HierarchicalResBlock(
                        ch + incoming if b == 0 else ch, ch, emb_dim, config.pool_kernels
                    )
                )
            self.dec_levels.append(blocks)
            if i > 0:
                self.ups.append(nn.Conv1d(ch, ch, 3, padding=1))
        self.dec_attn = SelfAttention1d(chs[self.attention_level])

        self.out_norm = _norm(chs[0])
        self.out_conv = nn.Conv1d(chs[0], config.in_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, n) -> torch.Tensor:
        if x.dim() != 3 or x.shape[-1] != self.config.in_channels:
            raise ValueError(f"expected (batch, L, {self.config.in_channels}), got {tuple(x.shape)}")
        if x.shape[1] != self.seq_len:
            raise ValueError(f"model built for length {self.seq_len}, got {x.shape[1]}")
        if not torch.is_tensor(n):
            n = torch.full((x.shape[0],), int(n), dtype=torch.long, device=x.device)
        if torch.any(n < 1):
            raise ValueError("diffusion step index must be >= 1")

        levels = len(self.config.channel_multipliers)
        h = x.transpose(1, 2)
        pad = self.padded_len - self.seq_len
        if pad:
            h = F.pad(h, (0, pad), mode="replicate")
        x_padded = h.transpose(1, 2)

        emb = self.step_mlp(sinusoidal_step_embedding(n, self.config.base_channels).to(x.dtype))

        h = self.stem(h)
        skips = []
        for i, blocks in enumerate(self.enc_levels):
            for block in blocks:
                h = block(h, emb)
            if i == self.attention_level:
                h = self.enc_attn(h)
            skips.append(h)
            if i < levels - 1:
                h = self.downs[i](h)

        h = self.mid1(h, emb)
        h = self.mid_attn(h)
        h = self.mid2(h, emb)

        for i in reversed(range(levels)):
            skip = self.s2g[i](skips[i], x_padded)
            h = torch.cat([h, skip], dim=1)
            for block in self.dec_levels[i]:
                h = block(h, emb)
            if i == self.attention_level:
                h = self.dec_attn(h)
            if i > 0:
                h = F.interpolate(h, size=skips[i - 1].shape[-1], mode="nearest")
                h = self.ups[i - 1](h)

        out = self.out_conv(F.silu(self.out_norm(h)))
        return out[:, :, : self.seq_len].transpose(1, 2)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
