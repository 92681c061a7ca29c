"""Training orchestration, checkpointing, end-to-end generation, and reporting."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import threading
import time
from pathlib import Path

import numpy as np
import psutil
import torch

from .coarse2fine import Coarse2FineConfig, Coarse2FineNet, collate_pairs
from .config import PipelineConfig, rng_stream
from .data_model import (
    DatasetError,
    Trajectory,
    CheckIn,
    build_poi_catalog,
    build_trajectories,
    index_pois,
    load_catalog,
    load_trajectories,
    parse_checkins,
    save_catalog,
    save_trajectories,
    split_dataset,
)
from .diffusion import EmaState, forward_sample, make_linear_schedule, sample, training_loss
from .evaluation import (
    density_grid,
    fidelity_report,
    utility_benchmark,
    write_cdf_csvs,
    write_density_csv,
    write_report,
)
from .latent import (
    LatentError,
    LatentMovementSequence,
    NormStats,
    compute_norm_stats,
    denormalize,
    filter_sequence,
    load_latents,
    normalize,
    reconstruct,
    save_latents,
)
from .unet import ClampBounds, DenoiserConfig, SASGUNet


def device_name() -> str:
    return os.environ.get("GEOGEN_DEVICE", "cpu")


class RunPaths:
    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)

    def ensure(self) -> "RunPaths":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    def split(self, name: str) -> Path:
        return self.root / f"{name}.tsv"

    @property
    def catalog(self) -> Path:
        return self.root / "catalog.npz"

    def latents(self, split: str) -> Path:
        return self.root / f"latents_{split}.npz"

    @property
    def stage1(self) -> Path:
        return self.root / "stage1.pt"

    def stage1_epoch(self, epoch: int) -> Path:
        return self.root / f"stage1_ep{epoch:04d}.pt"

    @property
    def stage2(self) -> Path:
        return self.root / "stage2.pt"

    @property
    def synthetic(self) -> Path:
        return self.root / "synthetic.tsv"

    @property
    def report(self) -> Path:
        return self.root / "report.json"

    @property
    def sweep(self) -> Path:
        return self.root / "sweep.json"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found at {path}")
    return path


# --- ingest -------------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig) -> dict:
    paths = RunPaths(cfg.out_dir).ensure()
    records, skipped = parse_checkins(cfg.dataset_path, cfg.dataset_format)
    poi_index = index_pois(records)
    trajs = build_trajectories(records, poi_index, cfg.duration_seconds, cfg.min_traj_len)
    if not trajs:
        raise DatasetError("no trajectories survive the window/minimum-length rules")
    split = split_dataset(trajs, cfg.ratios, cfg.seed)
    catalog = build_poi_catalog(poi_index, trajs)

    save_catalog(paths.catalog, catalog)
    for name, part in (("train", split.train), ("val", split.val), ("test", split.test)):
        save_trajectories(paths.split(name), part, catalog)

    manifest = {
        "schema_version": cfg.schema_version,
        "config_hash": cfg.content_hash(),
        "seed": cfg.seed,
        "ratios": list(cfg.ratios),
        "duration_seconds": cfg.duration_seconds,
        "counts": {"train": len(split.train), "val": len(split.val), "test": len(split.test)},
        "n_pois": catalog.n_pois,
        "skipped_rows": skipped,
        "catalog_hash": catalog.content_hash(),
    }
    paths.manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# --- latent reconstruction ------------------------------------------------------------


def latents_from_trajectories(
    trajs: list[Trajectory], interval: float, coords: np.ndarray
) -> np.ndarray:
    """Stack per-trajectory (L, 3) latent arrays; trajectories outside the grid are skipped."""
    out = []
    for t in trajs:
        try:
            out.append(reconstruct(t, interval, coords).as_array())
        except LatentError:
            continue
    if not out:
        raise LatentError("no trajectory produced a latent sequence")
    return np.stack(out)


def cmd_reconstruct(cfg: PipelineConfig) -> dict:
    paths = RunPaths(cfg.out_dir)
    catalog = load_catalog(_require(paths.catalog, "catalog"))
    summary = {}
    stats = None
    for name in ("train", "val"):
        trajs = load_trajectories(_require(paths.split(name), f"{name} split"), cfg.duration_seconds)
        data = latents_from_trajectories(trajs, cfg.interval_seconds, catalog.coords)
        if name == "train":
            stats = compute_norm_stats(data)
        save_latents(paths.latents(name), data, cfg.interval_seconds, cfg.duration_seconds, stats)
        summary[name] = {"sequences": int(data.shape[0]), "slots": int(data.shape[1])}
    return summary


# --- stage 1 -----------------------------------------------------------------------------


def _denoiser_config(cfg: PipelineConfig) -> DenoiserConfig:
    return DenoiserConfig(
        base_channels=cfg.unet_base_channels,
        channel_multipliers=cfg.unet_channel_multipliers,
        res_blocks_per_level=cfg.unet_res_blocks,
        attention_level=None if cfg.unet_attention_level < 0 else cfg.unet_attention_level,
        pool_kernels=cfg.unet_pool_kernels,
        bias_embed_dim=cfg.unet_bias_embed_dim,
    )


def _stage1_checkpoint(cfg, model, ema, opt, epoch, stats, bounds, seq_len) -> dict:
    return {
        "kind": "stage1",
        "epoch": epoch,
        "model": model.state_dict(),
        "ema": ema.state_dict(),
        "optimizer": opt.state_dict(),
        "schedule": {"n_steps": cfg.stage1_steps, "beta1": cfg.stage1_beta1, "beta_n": cfg.stage1_beta_n},
        "norm_stats": stats.to_dict(),
        "bounds": dataclasses.asdict(bounds),
        "seq_len": seq_len,
        "interval_seconds": cfg.interval_seconds,
        "duration_seconds": cfg.duration_seconds,
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
    }


def load_checkpoint(path: str | Path) -> dict:
    ckpt = torch.load(_require(Path(path), "checkpoint"), map_location="cpu", weights_only=False)
    stored = ckpt.get("config_hash")
    rebuilt = PipelineConfig.from_dict(ckpt["config"]).content_hash()
    if stored != rebuilt:
        raise ValueError(f"checkpoint config hash mismatch: stored {stored}, rebuilt {rebuilt}")
    return ckpt


def _stage1_train_epoch(model, opt, ema, schedule, data_t, batch_size, stream, device) -> float:
    n = data_t.shape[0]
    perm = stream.permutation(n)
    losses = []
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        x0 = data_t[idx].to(device)
        steps = stream.integers(1, schedule.n_steps + 1, size=len(idx))
        eps = torch.from_numpy(stream.standard_normal(x0.shape)).float().to(device)
        x_n = forward_sample(schedule, x0, steps, eps)
        eps_pred = model(x_n, torch.from_numpy(steps).to(device))
        loss = training_loss(eps, eps_pred)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite stage-1 training loss ({value}); aborting")
        opt.zero_grad()
        loss.backward()
        opt.step()
        ema.update(model)
        losses.append(value)
    return float(np.mean(losses))


def _stage1_val_loss(model, schedule, data_t, batch_size, stream, device) -> float:
    model.eval()
    losses = []
    with torch.no_grad():
        for start in range(0, data_t.shape[0], batch_size):
            x0 = data_t[start : start + batch_size].to(device)
            steps = stream.integers(1, schedule.n_steps + 1, size=x0.shape[0])
            eps = torch.from_numpy(stream.standard_normal(x0.shape)).float().to(device)
            x_n = forward_sample(schedule, x0, steps, eps)
            eps_pred = model(x_n, torch.from_numpy(steps).to(device))
            losses.append(float(training_loss(eps, eps_pred)))
    model.train()
    return float(np.mean(losses))


def cmd_train_stage1(cfg: PipelineConfig, resume: str | Path | None = None) -> dict:
    paths = RunPaths(cfg.out_dir)
    data, interval, duration, stats = load_latents(_require(paths.latents("train"), "train latents"))
    val_data, _, _, _ = load_latents(_require(paths.latents("val"), "val latents"))
    device = device_name()

    norm_train, _ = normalize(data, stats)
    norm_val, _ = normalize(val_data, stats)
    data_t = torch.from_numpy(norm_train).float()
    val_t = torch.from_numpy(norm_val).float()
    seq_len = data.shape[1]
    bounds = ClampBounds.from_coords(data[:, :, :2].reshape(-1, 2))

    torch.manual_seed(int(rng_stream(cfg.seed, "stage1/init").integers(2**31)))
    schedule = make_linear_schedule(cfg.stage1_steps, cfg.stage1_beta1, cfg.stage1_beta_n)
    model = SASGUNet(_denoiser_config(cfg), seq_len, stats, bounds).to(device)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.stage1_lr)
    ema = EmaState(model, cfg.stage1_ema_rate)

    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.get("kind") != "stage1":
            raise ValueError("resume checkpoint is not a stage-1 checkpoint")
        model.load_state_dict(ckpt["model"])
        ema.load_state_dict(ckpt["ema"])
        opt.load_state_dict(ckpt["optimizer"])
        start_epoch = int(ckpt["epoch"])

    history: list[dict] = []
    for epoch in range(start_epoch + 1, cfg.stage1_epochs + 1):
        stream = rng_stream(cfg.seed, f"stage1/epoch{epoch:06d}")
        train_loss = _stage1_train_epoch(
            model, opt, ema, schedule, data_t, cfg.stage1_batch, stream, device
        )
        entry = {"epoch": epoch, "train_loss": train_loss}
        if epoch % cfg.stage1_val_every == 0:
            entry["val_loss"] = _stage1_val_loss(
                model, schedule, val_t, cfg.stage1_batch, rng_stream(cfg.seed, "stage1/val"), device
            )
        history.append(entry)
        print(f"[stage1] epoch {epoch}/{cfg.stage1_epochs} loss {train_loss:.5f}", flush=True)
        if epoch % cfg.stage1_ckpt_every == 0:
            torch.save(
                _stage1_checkpoint(cfg, model, ema, opt, epoch, stats, bounds, seq_len),
                paths.stage1_epoch(epoch),
            )
    torch.save(
        _stage1_checkpoint(cfg, model, ema, opt, cfg.stage1_epochs, stats, bounds, seq_len),
        paths.stage1,
    )
    return {"epochs": cfg.stage1_epochs, "history": history, "device": device}


# --- stage 2 ------------------------------------------------------------------------------


class PlateauScheduler:
    """Halve (by ``factor``) every time the metric fails to improve ``patience`` times in a row."""

    def __init__(self, optimizer, factor: float = 0.5, patience: int = 5, eps: float = 1e-8):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.eps = eps
        self.best = math.inf
        self.bad = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self, metric: float) -> bool:
        """Returns True when a reduction was applied."""
        if metric < self.best - self.eps:
            self.best = metric
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.factor
            self.bad = 0
            return True
        return False


def _c2f_config(cfg: PipelineConfig) -> Coarse2FineConfig:
    return Coarse2FineConfig(
        model_dim=cfg.c2f_model_dim,
        heads=cfg.c2f_heads,
        enc_layers=cfg.c2f_enc_layers,
        dec_layers=cfg.c2f_dec_layers,
        ff_dim=cfg.c2f_ff_dim,
        t2v_dim=cfg.c2f_t2v_dim,
        tau_s=cfg.c2f_tau_s,
        dropout=cfg.c2f_dropout,
        max_seq_len=cfg.max_filtered_len,
        max_events=cfg.max_filtered_len,
        duration_seconds=cfg.duration_seconds,
    )


def build_stage2_pairs(trajs, cfg: PipelineConfig, coords) -> list:
    pairs = []
    for t in trajs:
        try:
            seq = reconstruct(t, cfg.interval_seconds, coords)
            pairs.append((filter_sequence(seq, cfg.gamma, cfg.max_filtered_len), t))
        except LatentError:
            continue
    return pairs


def cmd_train_stage2(cfg: PipelineConfig) -> dict:
    paths = RunPaths(cfg.out_dir)
    catalog = load_catalog(_require(paths.catalog, "catalog"))
    _, _, _, stats = load_latents(_require(paths.latents("train"), "train latents"))
    train = load_trajectories(_require(paths.split("train"), "train split"), cfg.duration_seconds)
    val = load_trajectories(_require(paths.split("val"), "val split"), cfg.duration_seconds)
    device = device_name()

    train_pairs = build_stage2_pairs(train, cfg, catalog.coords)
    val_pairs = build_stage2_pairs(val, cfg, catalog.coords)
    if not train_pairs or not val_pairs:
        raise DatasetError("stage-2 training needs non-empty train and val pair sets")

    torch.manual_seed(int(rng_stream(cfg.seed, "stage2/init").integers(2**31)))
    c2f_cfg = _c2f_config(cfg)
    model = Coarse2FineNet(c2f_cfg, catalog, stats).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.stage2_lr)
    sched = PlateauScheduler(opt, cfg.stage2_plateau_factor, cfg.stage2_plateau_patience)

    history = []
    for epoch in range(1, cfg.stage2_epochs + 1):
        stream = rng_stream(cfg.seed, f"stage2/epoch{epoch:06d}")
        perm = stream.permutation(len(train_pairs))
        model.train()
        losses, comp_sums = [], {"poi": 0.0, "time": 0.0, "spatial": 0.0}
        for start in range(0, len(perm), cfg.stage2_batch):
            batch_pairs = [train_pairs[i] for i in perm[start : start + cfg.stage2_batch]]
            batch = collate_pairs(batch_pairs, c2f_cfg, catalog.n_pois, device)
            total, comps = model.loss(batch)
            value = float(total.detach())
            if not math.isfinite(value):
                raise RuntimeError(f"non-finite stage-2 training loss ({value}); aborting")
            opt.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.stage2_grad_clip)
            opt.step()
            losses.append(value)
            for k in comp_sums:
                comp_sums[k] += comps[k]

        model.eval()
        with torch.no_grad():
            val_losses = []
            for start in range(0, len(val_pairs), cfg.stage2_batch):
                batch = collate_pairs(
                    val_pairs[start : start + cfg.stage2_batch], c2f_cfg, catalog.n_pois, device
                )
                total, _ = model.loss(batch)
                val_losses.append(float(total))
            val_loss = float(np.mean(val_losses))
        reduced = sched.step(val_loss)
        n_batches = max(len(losses), 1)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_loss": val_loss,
                "lr": sched.lr,
                "poi": comp_sums["poi"] / n_batches,
                "time": comp_sums["time"] / n_batches,
                "spatial": comp_sums["spatial"] / n_batches,
            }
        )
        note = " (lr reduced)" if reduced else ""
        print(
            f"[stage2] epoch {epoch}/{cfg.stage2_epochs} "
            f"loss {history[-1]['train_loss']:.4f} val {val_loss:.4f}{note}",
            flush=True,
        )

    torch.save(
        {
            "kind": "stage2",
            "epoch": cfg.stage2_epochs,
            "model": model.state_dict(),
            "optimizer": opt.state_dict(),
            "catalog_hash": catalog.content_hash(),
            "norm_stats": stats.to_dict(),
            "config": cfg.to_dict(),
            "config_hash": cfg.content_hash(),
        },
        paths.stage2,
    )
    return {"epochs": cfg.stage2_epochs, "history": history, "device": device}


# --- generation ------------------------------------------------------------------------------


def _load_stage1_sampler(cfg: PipelineConfig, paths: RunPaths):
    ckpt = load_checkpoint(_require(paths.stage1, "stage-1 checkpoint"))
    stats = NormStats.from_dict(ckpt["norm_stats"])
    bounds = ClampBounds(**ckpt["bounds"])
    schedule = make_linear_schedule(**ckpt["schedule"])
    device = device_name()
    model = SASGUNet(_denoiser_config(cfg), ckpt["seq_len"], stats, bounds).to(device)
    ema = EmaState(model, cfg.stage1_ema_rate)
    ema.load_state_dict(ckpt["ema"])
    ema.copy_to(model)
    model.eval()

    def denoiser(x: torch.Tensor, n: int) -> torch.Tensor:
        return model(x.to(device), n).cpu()

    return denoiser, schedule, stats, bounds, int(ckpt["seq_len"])


def _latent_to_filtered(arr: np.ndarray, stats: NormStats, bounds: ClampBounds, cfg: PipelineConfig):
    """Denormalize one sampled (L, 3) latent and filter it; raises LatentError when degenerate."""
    raw = denormalize(arr, stats, round_intensity=True)
    coords = raw[:, :2]
    coords[:, 0] = np.clip(coords[:, 0], bounds.lat_min, bounds.lat_max)
    coords[:, 1] = np.clip(coords[:, 1], bounds.lon_min, bounds.lon_max)
    seq = LatentMovementSequence(
        coords, raw[:, 2].astype(np.int64), cfg.interval_seconds, cfg.duration_seconds
    )
    return filter_sequence(seq, cfg.gamma, cfg.max_filtered_len)


def cmd_generate(cfg: PipelineConfig, count: int, seed: int | None = None) -> dict:
    paths = RunPaths(cfg.out_dir)
    seed = cfg.seed if seed is None else seed
    denoiser, schedule, stats, bounds, seq_len = _load_stage1_sampler(cfg, paths)

    ckpt2 = load_checkpoint(_require(paths.stage2, "stage-2 checkpoint"))
    catalog = load_catalog(_require(paths.catalog, "catalog"))
    if ckpt2.get("catalog_hash") != catalog.content_hash():
        raise ValueError("stage-2 checkpoint was trained against a different catalog")
    c2f_cfg = _c2f_config(cfg)
    c2f = Coarse2FineNet(c2f_cfg, catalog, stats).to(device_name())
    c2f.load_state_dict(ckpt2["model"])
    c2f.eval()

    latents = sample(
        denoiser, (count, seq_len, 3), schedule, rng_stream(seed, "stage1-sample")
    ).numpy()

    written = skipped = empty = resampled = 0
    rows: list[str] = []
    traj_id = 0
    for i in range(count):
        arr = latents[i]
        filtered = None
        for attempt in range(6):  # first try plus 5 resamples
            try:
                filtered = _latent_to_filtered(arr, stats, bounds, cfg)
                break
            except LatentError:
                if attempt == 5:
                    break
                resampled += 1
                arr = sample(
                    denoiser,
                    (1, seq_len, 3),
                    schedule,
                    rng_stream(seed, f"stage1-sample/retry/{i}/{attempt}"),
                ).numpy()[0]
        if filtered is None:
            skipped += 1
            continue
        max_events = min(c2f_cfg.max_events, cfg.c2f_events_per_latent * len(filtered))
        events = c2f.generate(filtered, max_events, rng_stream(seed, f"c2f/{i}"))
        if not events:
            empty += 1
            continue
        for poi, t in events:
            lat, lon = catalog.coords[poi]
            rows.append(f"{traj_id}\t{poi}\t{lat:.6f}\t{lon:.6f}\t{t:.3f}")
        traj_id += 1
        written += 1

    paths.ensure()
    with paths.synthetic.open("w", encoding="utf-8") as fh:
        fh.write("traj_id\tpoi_id\tlat\tlon\ttimestamp_seconds\n")
        for row in rows:
            fh.write(row + "\n")
    summary = {
        "requested": count,
        "written": written,
        "skipped_degenerate": skipped,
        "empty": empty,
        "resampled": resampled,
        "path": str(paths.synthetic),
    }
    print(f"[generate] {json.dumps(summary, sort_keys=True)}", flush=True)
    return summary


def load_synthetic(path: str | Path, duration: float) -> list[Trajectory]:
    groups: dict[int, list[CheckIn]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "traj_id\tpoi_id\tlat\tlon\ttimestamp_seconds":
            raise DatasetError(f"unexpected synthetic file header: {header!r}")
        for line in fh:
            tid_s, poi_s, _lat, _lon, t_s = line.rstrip("\n").split("\t")
            groups.setdefault(int(tid_s), []).append(CheckIn(int(poi_s), float(t_s)))
    return [Trajectory(groups[tid], duration) for tid in sorted(groups)]


# --- evaluation ------------------------------------------------------------------------------


def cmd_evaluate(cfg: PipelineConfig) -> dict:
    paths = RunPaths(cfg.out_dir)
    catalog = load_catalog(_require(paths.catalog, "catalog"))
    real_test = load_trajectories(_require(paths.split("test"), "test split"), cfg.duration_seconds)
    synth = load_synthetic(_require(paths.synthetic, "synthetic trajectories"), cfg.duration_seconds)

    report = fidelity_report(real_test, synth, catalog.coords, cfg.eval_bins)
    rmse, ed = utility_benchmark(synth, real_test, catalog.coords, cfg.seed)

    write_report(report, rmse, ed, paths.report)
    write_cdf_csvs(report, paths.root)
    for side, trajs in (("real", real_test), ("synthetic", synth)):
        counts = density_grid(trajs, catalog.coords, cfg.eval_density_cell_deg)
        write_density_csv(counts, cfg.eval_density_cell_deg, paths.root / f"density_{side}.csv")

    result = {**report.scores(), "distance_total": report.jsd_distance_total,
              "utility_rmse": rmse, "utility_ed_km": ed}
    print(f"[evaluate] {json.dumps(result, sort_keys=True)}", flush=True)
    return result


# --- granularity sweep -------------------------------------------------------------------------


class _RssSampler(threading.Thread):
    """Samples process RSS on a short period; peak observed value in .peak_bytes."""

    def __init__(self, period: float = 0.05):
        super().__init__(daemon=True)
        self.period = period
        self.peak_bytes = 0
        self._halt = threading.Event()
        self._proc = psutil.Process()

    def run(self):
        while not self._halt.is_set():
            self.peak_bytes = max(self.peak_bytes, self._proc.memory_info().rss)
            self._halt.wait(self.period)

    def stop(self) -> int:
        self._halt.set()
        self.join()
        return self.peak_bytes


def cmd_sweep(
    cfg: PipelineConfig,
    intervals: list[float],
    warm_epochs: int = 1,
    measured_epochs: int = 2,
) -> list[dict]:
    """Reconstruct + short stage-1 training per interval; reports throughput and memory.

    The four JSD columns mirror the full-pipeline report schema but are only
    populated by a full run per interval, which this short sweep does not do;
    they are emitted as None.
    """
    paths = RunPaths(cfg.out_dir).ensure()
    catalog = load_catalog(_require(paths.catalog, "catalog"))
    train = load_trajectories(_require(paths.split("train"), "train split"), cfg.duration_seconds)
    device = device_name()

    rows = []
    for interval in intervals:
        if int(cfg.duration_seconds // interval) < 2:
            raise ValueError(f"interval {interval} leaves fewer than 2 slots")
        data = latents_from_trajectories(train, interval, catalog.coords)
        stats = compute_norm_stats(data)
        norm, _ = normalize(data, stats)
        data_t = torch.from_numpy(norm).float()
        bounds = ClampBounds.from_coords(data[:, :, :2].reshape(-1, 2))

        torch.manual_seed(int(rng_stream(cfg.seed, f"sweep/{interval}").integers(2**31)))
        schedule = make_linear_schedule(cfg.stage1_steps, cfg.stage1_beta1, cfg.stage1_beta_n)
        model = SASGUNet(_denoiser_config(cfg), data.shape[1], stats, bounds).to(device)
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.stage1_lr)
        ema = EmaState(model, cfg.stage1_ema_rate)

        for w in range(warm_epochs):
            _stage1_train_epoch(
                model, opt, ema, schedule, data_t, cfg.stage1_batch,
                rng_stream(cfg.seed, f"sweep/{interval}/warm{w}"), device,
            )
        sampler = _RssSampler()
        sampler.start()
        t0 = time.perf_counter()
        for e in range(measured_epochs):
            _stage1_train_epoch(
                model, opt, ema, schedule, data_t, cfg.stage1_batch,
                rng_stream(cfg.seed, f"sweep/{interval}/measure{e}"), device,
            )
        elapsed = time.perf_counter() - t0
        peak = sampler.stop()
        rows.append(
            {
                "interval_seconds": float(interval),
                "slots": int(data.shape[1]),
                "jsd_distance": None,
                "jsd_radius": None,
                "jsd_interval": None,
                "jsd_length": None,
                "stage1_throughput_seq_per_s": data.shape[0] * measured_epochs / elapsed,
                "peak_rss_mb": peak / 1e6,
            }
        )
        print(
            f"[sweep] I={interval:.0f}s L={data.shape[1]} "
            f"throughput={rows[-1]['stage1_throughput_seq_per_s']:.1f}/s",
            flush=True,
        )

    ordered = sorted(rows, key=lambda r: r["interval_seconds"])
    for a, b in zip(ordered[:-1], ordered[1:]):
        if b["stage1_throughput_seq_per_s"] < a["stage1_throughput_seq_per_s"]:
            print(
                "[sweep] warning: throughput not monotone between "
                f"I={a['interval_seconds']} and I={b['interval_seconds']}",
                flush=True,
            )
    paths.sweep.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return rows
