"""Stage 2: translate filtered latent sequences into fine-grained (POI, timestamp) pairs.

The encoder blends spatial-proximity attention and temporal-pattern attention
over a shared POI embedding codebook; the decoder generates autoregressively
with a classification head for the POI and a constant-intensity temporal point
process head for the next timestamp (exponential inter-event gaps sampled by
inverse transform).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data_model import POICatalog
from .latent import FilteredSequence, NormStats

IGNORE_INDEX = -100


@dataclass
class Coarse2FineConfig:
    model_dim: int = 64
    heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 2
    ff_dim: int = 256
    t2v_dim: int = 16
    tau_s: float = 0.25
    dropout: float = 0.0
    max_seq_len: int = 75          # encoder input cap
    max_events: int = 75           # decoder event budget
    time_unit_seconds: float = 60.0  # base unit for intensities and gaps
    min_gap_seconds: float = 60.0
    duration_seconds: float = 604800.0

    def __post_init__(self):
        if self.t2v_dim < 2:
            raise ValueError("Time2Vec needs at least one periodic component")
        if self.tau_s <= 0:
            raise ValueError("spatial temperature must be positive")
        if self.model_dim <= self.t2v_dim:
            raise ValueError("model_dim must exceed the temporal embedding width")


class Time2Vec(nn.Module):
    """One linear component plus dim-1 sine components of a scalar time."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.w = nn.Parameter(torch.randn(dim))
        self.b = nn.Parameter(torch.zeros(dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        args = t.unsqueeze(-1) * self.w + self.b
        linear = args[..., :1]
        periodic = torch.sin(args[..., 1:])
        return torch.cat([linear, periodic], dim=-1)


class PoiCodebook(nn.Module):
    """Shared POI embeddings from coordinates, visit frequencies and categories.

    Rows 0..P-1 are real POIs; rows P and P+1 are free BOS/EOS embeddings.
    Coordinates live in the normalized space defined by the latent stats so
    the spatial temperature is comparable across datasets.
    """

    def __init__(self, catalog: POICatalog, stats: NormStats, dim: int):
        super().__init__()
        self.n_pois = catalog.n_pois
        self.bos = catalog.n_pois
        self.eos = catalog.n_pois + 1
        coords_norm = (catalog.coords - stats.mean[:2]) / stats.std[:2]
        self.register_buffer("coords_norm", torch.as_tensor(coords_norm, dtype=torch.float32))
        self.register_buffer("freq", torch.as_tensor(catalog.freq, dtype=torch.float32))
        self.register_buffer("category", torch.as_tensor(catalog.category, dtype=torch.long))
        self.w_latlon = nn.Linear(2, dim, bias=False)
        self.w_freq = nn.Linear(catalog.freq.shape[1], dim, bias=False)
        self.w_cat = nn.Embedding(catalog.category_count, dim)
        self.special = nn.Parameter(torch.randn(2, dim) * 0.02)

    def forward(self) -> torch.Tensor:
        real = self.w_latlon(self.coords_norm) + self.w_freq(self.freq) + self.w_cat(self.category)
        return torch.cat([real, self.special.to(real.dtype)], dim=0)  # (P+2, dim)


def exponential_gap(lam: float, u: float) -> float:
    """Inverse-transform sample of an Exponential(lam) inter-event gap (time units)."""
    if lam <= 0:
        raise ValueError("intensity must be positive")
    if not (0.0 < u < 1.0):
        raise ValueError("u must lie strictly inside (0, 1)")
    return -math.log1p(-u) / lam


def sample_next_time(
    lam: float,
    u: float,
    t_prev: float,
    time_unit: float = 60.0,
    min_gap: float = 60.0,
) -> float:
    """Next absolute timestamp in seconds, with the minimum-gap clamp applied."""
    return t_prev + max(exponential_gap(lam, u) * time_unit, min_gap)


# --- loss components ----------------------------------------------------------


def poi_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over valid target positions (IGNORE_INDEX padding)."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=IGNORE_INDEX)

def time_nll(lam: torch.Tensor, dt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean NTPP negative log-likelihood -(log lam - lam*dt) over masked positions."""
    if torch.any(dt[mask] <= 0):
        raise ValueError("target inter-event times must be positive")
    nll = -(torch.log(lam.clamp_min(1e-12)) - lam * dt)
    return nll[mask].mean()


def spatial_loss_expected(
    logits: torch.Tensor, target_poi: torch.Tensor, mask: torch.Tensor, coords_norm: torch.Tensor
) -> torch.Tensor:
    """Differentiable spatial penalty: expected predicted coordinate vs true coordinate."""
    n_pois = coords_norm.shape[0]
    probs = torch.softmax(logits[..., :n_pois], dim=-1)
    expected = probs @ coords_norm
    target = coords_norm[target_poi.clamp(min=0, max=n_pois - 1)]
    dist = torch.linalg.vector_norm(expected - target, dim=-1)
    return dist[mask].mean()


def spatial_loss_argmax(
    logits: torch.Tensor, target_poi: torch.Tensor, mask: torch.Tensor, coords_norm: torch.Tensor
) -> torch.Tensor:
    """Reported spatial penalty: coordinate of the argmax POI vs true coordinate."""
    n_pois = coords_norm.shape[0]
    pred = logits[..., :n_pois].argmax(dim=-1)
    dist = torch.linalg.vector_norm(coords_norm[pred] - coords_norm[target_poi.clamp(min=0, max=n_pois - 1)], dim=-1)
    return dist[mask].mean()


class Coarse2FineNet(nn.Module):
    def __init__(self, config: Coarse2FineConfig, catalog: POICatalog, stats: NormStats):
        super().__init__()
        self.config = config
        self.stats = stats
        self.codebook = PoiCodebook(catalog, stats, config.model_dim)
        self.vocab = catalog.n_pois + 2

        spatial_dim = config.model_dim - config.t2v_dim
        self.spatial_proj = nn.Linear(2, spatial_dim)
        self.enc_t2v = Time2Vec(config.t2v_dim)
        self.dec_t2v = Time2Vec(config.t2v_dim)
        self.w_t = nn.Linear(config.t2v_dim, catalog.freq.shape[1], bias=False)
        self.fusion = nn.Linear(config.model_dim, 2)
        self.in_proj = nn.Linear(config.model_dim, config.model_dim)
        self.dec_proj = nn.Linear(config.model_dim + config.t2v_dim, config.model_dim)

        enc_layer = nn.TransformerEncoderLayer(
            config.model_dim, config.heads, config.ff_dim, dropout=config.dropout, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(enc_layer, config.enc_layers, enable_nested_tensor=False)
        dec_layer = nn.TransformerDecoderLayer(
            config.model_dim, config.heads, config.ff_dim, dropout=config.dropout, batch_first=True
        )
        self.decoder = nn.TransformerDecoder(dec_layer, config.dec_layers)

        self.poi_head = nn.Linear(config.model_dim, self.vocab)
        self.time_head = nn.Linear(config.model_dim, 1)
        # softplus(rho) == 1 at init
        rho0 = math.log(math.e - 1.0)
        self.loss_rho = nn.Parameter(torch.full((3,), rho0))

    # --- encoder pieces -------------------------------------------------------

    def _normalize_coords(self, latlon: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.stats.mean[:2], dtype=latlon.dtype, device=latlon.device)
        std = torch.as_tensor(self.stats.std[:2], dtype=latlon.dtype, device=latlon.device)
        return (latlon - mean) / std

    def spatial_attention_weights(self, l_norm: torch.Tensor) -> torch.Tensor:
        """Proximity attention over the vocabulary; BOS/EOS columns get weight 0.

        l_norm: (..., 2) coordinates in normalized space. Returns (..., P+2).
        """
        coords = self.codebook.coords_norm.to(l_norm.dtype)
        dist = torch.cdist(l_norm.reshape(-1, 2), coords).reshape(*l_norm.shape[:-1], -1)
        weights = torch.softmax(-dist / self.config.tau_s, dim=-1)
        pad = weights.new_zeros(*weights.shape[:-1], 2)
        return torch.cat([weights, pad], dim=-1)

    def temporal_attention_weights(self, t_vec: torch.Tensor) -> torch.Tensor:
        """Visit-pattern attention from dot products of projected time embeddings."""
        w = self.w_t(t_vec)
        logits = w @ self.codebook.freq.to(w.dtype).T
        weights = torch.softmax(logits, dim=-1)
        pad = weights.new_zeros(*weights.shape[:-1], 2)
        return torch.cat([weights, pad], dim=-1)

    def fusion_weights(self, l_vec: torch.Tensor, t_vec: torch.Tensor, pad_mask: torch.Tensor):
        """Per-sequence (beta_s, beta_t) with beta_s + beta_t == 1 exactly.

        pad_mask: (B, S) True at padded positions.
        """
        keep = (~pad_mask).unsqueeze(-1).to(l_vec.dtype)
        count = keep.sum(dim=1).clamp(min=1.0)
        mean_l = (l_vec * keep).sum(dim=1) / count
        mean_t = (t_vec * keep).sum(dim=1) / count
        logits = self.fusion(torch.cat([mean_l, mean_t], dim=-1))
        beta_s = torch.sigmoid(logits[:, 0] - logits[:, 1])
        return beta_s, 1.0 - beta_s

    def encode(
        self, latlon: torch.Tensor, times: torch.Tensor, pad_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Contextual representations H for (B, S, 2) degree coordinates and (B, S) times."""
        if latlon.dim() != 3 or latlon.shape[1] == 0:
            raise ValueError("encoder input must be a non-empty (B, S, 2) batch")
        if latlon.shape[1] > self.config.max_seq_len:
            raise ValueError(f"encoder input longer than {self.config.max_seq_len}")
        if pad_mask is None:
            pad_mask = torch.zeros(latlon.shape[:2], dtype=torch.bool, device=latlon.device)

        l_norm = self._normalize_coords(latlon)
        l_vec = self.spatial_proj(l_norm)
        t_vec = self.enc_t2v(times / self.config.duration_seconds)

        alpha_s = self.spatial_attention_weights(l_norm)
        alpha_t = self.temporal_attention_weights(t_vec)
        beta_s, beta_t = self.fusion_weights(l_vec, t_vec, pad_mask)
        alpha = beta_s[:, None, None] * alpha_s + beta_t[:, None, None] * alpha_t
        h_poi = alpha @ self.codebook()

        enc_in = self.in_proj(torch.cat([l_vec, t_vec], dim=-1)) + h_poi
        return self.encoder(enc_in, src_key_padding_mask=pad_mask)

    # --- decoder pieces -------------------------------------------------------

    def _embed_events(self, pois: torch.Tensor, times: torch.Tensor) -> torch.Tensor:
        e = self.codebook()[pois]
        t = self.dec_t2v(times / self.config.duration_seconds)
        return self.dec_proj(torch.cat([e, t], dim=-1))

    def decode(
        self,
        memory: torch.Tensor,
        pois: torch.Tensor,
        times: torch.Tensor,
        memory_pad_mask: torch.Tensor | None = None,
        tgt_pad_mask: torch.Tensor | None = None,
    ):
        """Causal decode of an embedded prefix; returns (poi logits, lam) per position."""
        if pois.shape[1] - 1 > self.config.max_events:
            raise ValueError(f"prefix exceeds the {self.config.max_events}-event budget")
        tgt = self._embed_events(pois, times)
        causal = torch.triu(
            torch.ones(tgt.shape[1], tgt.shape[1], dtype=torch.bool, device=tgt.device), diagonal=1
        )
        h = self.decoder(
            tgt,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=tgt_pad_mask,
            memory_key_padding_mask=memory_pad_mask,
        )
        logits = self.poi_head(h)
        lam = F.softplus(self.time_head(h).squeeze(-1))
        return logits, lam

    def decode_step(self, memory: torch.Tensor, pois: list[int], times: list[float]):
        """Single-sequence step: logits over the vocabulary and intensity for the next event."""
        if pois[0] != self.codebook.bos:
            raise ValueError("prefix must begin with the BOS token")
        device = memory.device
        p = torch.as_tensor([pois], dtype=torch.long, device=device)
        t = torch.as_tensor([times], dtype=torch.float32, device=device)
        logits, lam = self.decode(memory, p, t)
        return logits[0, -1], float(lam[0, -1])

    # --- training objective -----------------------------------------------------

    def loss_weights(self) -> torch.Tensor:
        return F.softplus(self.loss_rho)

    def loss(self, batch: dict) -> tuple[torch.Tensor, dict]:
        """Teacher-forced multi-task objective.

        The three components are balanced by positive learnable weights with a
        -log(weight) term so no component can be silenced by driving its
        weight to zero.
        """
        memory = self.encode(batch["enc_latlon"], batch["enc_times"], batch["enc_pad"])
        logits, lam = self.decode(
            memory,
            batch["dec_pois"],
            batch["dec_times"],
            memory_pad_mask=batch["enc_pad"],
            tgt_pad_mask=batch["dec_pad"],
        )
        l_poi = poi_loss(logits, batch["tgt_pois"])
        l_time = time_nll(lam, batch["tgt_dt"], batch["dt_mask"])
        coords = self.codebook.coords_norm
        l_spatial = spatial_loss_expected(logits, batch["tgt_pois"], batch["dt_mask"], coords)
        with torch.no_grad():
            l_spatial_argmax = spatial_loss_argmax(logits, batch["tgt_pois"], batch["dt_mask"], coords)

        w = self.loss_weights()
        total = w[0] * l_poi + w[1] * l_time + w[2] * l_spatial - torch.log(w).sum()
        components = {
            "poi": float(l_poi.detach()),
            "time": float(l_time.detach()),
            "spatial": float(l_spatial.detach()),
            "spatial_argmax": float(l_spatial_argmax),
            "weights": [float(x) for x in w.detach()],
        }
        return total, components

    # --- generation ---------------------------------------------------------------

    @torch.no_grad()
    def generate(
        self,
        filtered: FilteredSequence,
        max_events: int,
        rng: np.random.Generator,
        greedy: bool = False,
    ) -> list[tuple[int, float]]:
        """Autoregressive sampling of (poi, timestamp) pairs for one latent sequence.

        Stops on EOS, when the next timestamp would leave the window, or at
        ``max_events``. BOS is never sampled; EOS is never emitted.
        """
        self.eval()
        latlon = torch.as_tensor(filtered.latlon(), dtype=torch.float32)[None]
        times = torch.as_tensor(filtered.times(), dtype=torch.float32)[None]
        memory = self.encode(latlon, times)

        pois = [self.codebook.bos]
        stamps = [0.0]
        out: list[tuple[int, float]] = []
        t_prev = 0.0
        for _ in range(max_events):
            logits, lam = self.decode_step(memory, pois, stamps)
            probs = torch.softmax(logits.double(), dim=-1).cpu().numpy()
            probs[self.codebook.bos] = 0.0
            probs /= probs.sum()
            if greedy:
                choice = int(np.argmax(probs))
            else:
                cdf = np.cumsum(probs)
                choice = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            if choice == self.codebook.eos:
                break
            u = rng.random()
            while not (0.0 < u < 1.0):
                u = rng.random()
            # float32 softplus can underflow to 0; a floor just pushes t_next past the window
            t_next = sample_next_time(
                max(lam, 1e-12), u, t_prev, self.config.time_unit_seconds, self.config.min_gap_seconds
            )
            if t_next >= self.config.duration_seconds:
                break
            out.append((choice, t_next))
            pois.append(choice)
            stamps.append(t_next)
            t_prev = t_next
        return out


def collate_pairs(
    pairs: list[tuple[FilteredSequence, "Trajectory"]],
    config: Coarse2FineConfig,
    n_pois: int,
    device: str = "cpu",
) -> dict:
    """Tensorize (filtered sequence, trajectory) pairs for teacher forcing.

    Decoder inputs are BOS-prefixed event sequences; targets are the events
    shifted left with EOS appended. ``tgt_dt`` holds inter-event gaps in the
    configured time unit, floored at one unit to mirror the minimum event
    interval (the first gap is measured from the window start and can be 0);
    ``dt_mask`` marks real events (EOS and padding excluded).
    """
    bos, eos = n_pois, n_pois + 1
    S = max(len(f) for f, _ in pairs)
    T = min(max(len(t.checkins) for _, t in pairs), config.max_events)
    B = len(pairs)

    enc_latlon = torch.zeros(B, S, 2)
    enc_times = torch.zeros(B, S)
    enc_pad = torch.ones(B, S, dtype=torch.bool)
    dec_pois = torch.full((B, T + 1), 0, dtype=torch.long)
    dec_times = torch.zeros(B, T + 1)
    dec_pad = torch.ones(B, T + 1, dtype=torch.bool)
    tgt_pois = torch.full((B, T + 1), IGNORE_INDEX, dtype=torch.long)
    tgt_dt = torch.ones(B, T + 1)
    dt_mask = torch.zeros(B, T + 1, dtype=torch.bool)

    unit = config.time_unit_seconds
    for b, (filt, traj) in enumerate(pairs):
        s = len(filt)
        enc_latlon[b, :s] = torch.as_tensor(filt.latlon(), dtype=torch.float32)
        enc_times[b, :s] = torch.as_tensor(filt.times(), dtype=torch.float32)
        enc_pad[b, :s] = False

        events = traj.checkins[: config.max_events]
        k = len(events)
        dec_pois[b, 0] = bos
        dec_times[b, 0] = 0.0
        dec_pad[b, : k + 1] = False
        prev = 0.0
        for j, c in enumerate(events):
            gap = c.t - prev
            if j > 0 and gap <= 0:
                raise ValueError("trajectory timestamps must be strictly increasing")
            dec_pois[b, j + 1] = c.poi
            dec_times[b, j + 1] = c.t
            tgt_pois[b, j] = c.poi
            tgt_dt[b, j] = max(gap / unit, 1.0)
            dt_mask[b, j] = True
            prev = c.t
        tgt_pois[b, k] = eos

    batch = {
        "enc_latlon": enc_latlon,
        "enc_times": enc_times,
        "enc_pad": enc_pad,
        "dec_pois": dec_pois,
        "dec_times": dec_times,
        "dec_pad": dec_pad,
        "tgt_pois": tgt_pois,
        "tgt_dt": tgt_dt,
        "dt_mask": dt_mask,
    }
    return {k: v.to(device) for k, v in batch.items()}
