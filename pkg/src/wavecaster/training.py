"""Masked loss, Adam, checkpointing and the (reproducible) training loop.

Checkpoint format "WCKP", little-endian:

    magic "WCKP" | u32 version=1
    | u32 n_tensors | per tensor: u16 name_len, name, u8 ndim, u32 dims..., f64 data
    | u32 n_blocks  | per block:  u16 name_len, name, u64 payload_len, payload

Tensor names carry a role prefix: "param.", "adam.m.", "adam.v.". Blocks
hold JSON metadata ("meta", "norm_stats", "rng") and the flat config echo
("run_config"). Save/load is bit-exact, so resumed training reproduces an
uninterrupted run byte for byte.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .convlstm import ConvLSTMConfig, ConvLSTMModel
from .dataset import WaveDataset
from .errors import ConfigError, ContractError, DomainError, FormatError
from .gridio import LandMask, NormStats, VarId, normalize_wave, normalize_wind
from .vit import ViTConfig, ViTModel, terrain_features

_CKPT_MAGIC = b"WCKP"
_CKPT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 3
    batch_size: int = 8
    clip_norm: float = 1.0
    seed: int = 0
    model: str = "vit"
    weights: tuple = (1.0, 1.0, 1.0, 1.0)  # swh, mwp, sin, cos

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.model not in ("vit", "convlstm"):
            raise ConfigError(f"unknown model {self.model!r}")
        if len(self.weights) != 4:
            raise ConfigError("channel weights must have 4 entries")


@dataclass
class LossReport:
    epoch: int
    step: int
    total: float
    per_channel: tuple
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# loss


_CHANNEL_NAMES = ("swh", "mwp", "sin", "cos")


def masked_loss(pred, truth: np.ndarray, mask: LandMask, weights=(1.0, 1.0, 1.0, 1.0)):
    """Weighted per-channel MSE over ocean cells; land contributes exactly zero.

    Returns (scalar loss Tensor, per-channel float values).
    """
    if mask.ocean_count == 0:
        raise DomainError("masked_loss needs at least one ocean cell")
    truth_clean = np.where(mask.ocean[None, :, :], truth, 0.0)
    cell_w = np.asarray(weights, dtype=np.float64)[:, None, None] \
        * mask.ocean[None, :, :].astype(np.float64) / mask.ocean_count
    diff = ad.sub(pred, truth_clean)
    sq = ad.mul(diff, diff)
    loss = ad.tsum(ad.mul(sq, cell_w))
    per_channel = tuple(
        float((sq.data[c] * cell_w[c]).sum()) for c in range(truth.shape[0]))
    return loss, per_channel


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam with global gradient-norm clipping."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=1.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        for name, p in self.params.items():
            if not np.isfinite(p.grad).all():
                raise ContractError(f"non-finite gradient for parameter {name}; step rejected")
        self.t += 1
        if self.clip_norm > 0:
            total = math_sqrt(sum(float((p.grad ** 2).sum()) for p in self.params.values()))
            scale = self.clip_norm / total if total > self.clip_norm else 1.0
        else:
            scale = 1.0
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad * scale
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def math_sqrt(x):
    return float(np.sqrt(x))


# ---------------------------------------------------------------------------
# checkpoint serialization


def _pack_name(name: str) -> bytes:
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(path, tensors: dict, blocks: dict) -> None:
    """tensors: name -> float64 ndarray; blocks: name -> bytes."""
    out = [_CKPT_MAGIC, struct.pack("<I", _CKPT_VERSION)]
    out.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        out.append(_pack_name(name))
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{max(arr.ndim, 1)}I", *(arr.shape or (1,))))
        out.append(arr.tobytes())
    out.append(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        payload = blocks[name]
        out.append(_pack_name(name))
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    off = 0

    def need(n, what):
        nonlocal off
        if off + n > len(raw):
            raise FormatError(f"{path}: truncated while reading {what}", offset=off)
        chunk = raw[off:off + n]
        off += n
        return chunk

    if need(4, "magic") != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic", offset=0)
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)

    def read_name(what):
        (ln,) = struct.unpack("<H", need(2, what))
        return need(ln, what).decode()

    tensors = {}
    (n_tensors,) = struct.unpack("<I", need(4, "tensor count"))
    for _ in range(n_tensors):
        name = read_name("tensor name")
        (ndim,) = struct.unpack("<B", need(1, "tensor rank"))
        dims = struct.unpack(f"<{max(ndim, 1)}I", need(4 * max(ndim, 1), "tensor dims"))
        shape = dims[:ndim] if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(need(8 * count, f"tensor {name}"), dtype="<f8")
        tensors[name] = data.reshape(shape).copy()
    blocks = {}
    (n_blocks,) = struct.unpack("<I", need(4, "block count"))
    for _ in range(n_blocks):
        name = read_name("block name")
        (ln,) = struct.unpack("<Q", need(8, "block length"))
        blocks[name] = need(ln, f"block {name}")
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes", offset=off)
    return tensors, blocks


# ---------------------------------------------------------------------------
# model plumbing


def build_model(kind: str, lat_count: int, lon_count: int, rng: np.random.Generator,
                model_cfg: dict | None = None):
    model_cfg = dict(model_cfg or {})
    if kind == "vit":
        cfg = ViTConfig(**model_cfg)
        return ViTModel(cfg, lat_count, lon_count, rng)
    if kind == "convlstm":
        cfg = ConvLSTMConfig(**model_cfg)
        return ConvLSTMModel(cfg, lat_count, lon_count, rng)
    raise ConfigError(f"unknown model kind {kind!r}")


@dataclass
class ModelContext:
    """Everything a forward pass needs besides the per-sample arrays."""

    model: object
    dataset: WaveDataset
    terrain_feats: np.ndarray
    ocean_float: np.ndarray

    @classmethod
    def create(cls, model, dataset: WaveDataset):
        if isinstance(model, ViTModel):
            feats = terrain_features(dataset.depth.values, dataset.mask.ocean,
                                     model.config.patch)
        else:
            feats = np.zeros((1, 3))
        return cls(model=model, dataset=dataset, terrain_feats=feats,
                   ocean_float=dataset.mask.ocean.astype(np.float64))

    def norm_wave_at(self, t: int) -> np.ndarray:
        ds = self.dataset
        return normalize_wave(ds.wave_state(t), ds.stats, ds.mask)

    def norm_wind_at(self, t: int) -> np.ndarray:
        ds = self.dataset
        u, v = ds.wind(t)
        return normalize_wind(u, v, ds.stats, ds.mask)

    def sample_arrays(self, init_t: int, cache: dict | None = None):
        """(wave_hist, wind, target) normalized arrays for one sample."""
        ds = self.dataset
        dt = ds.dt
        t_in = getattr(self.model.config, "t_in", 2)
        t_force = getattr(self.model.config, "t_force", 1)

        def wave(t):
            if cache is not None:
                key = ("wave", t)
                if key not in cache:
                    cache[key] = self.norm_wave_at(t)
                return cache[key]
            return self.norm_wave_at(t)

        def wind(t):
            if cache is not None:
                key = ("wind", t)
                if key not in cache:
                    cache[key] = self.norm_wind_at(t)
                return cache[key]
            return self.norm_wind_at(t)

        hist = np.stack([wave(init_t - dt * k) for k in range(t_in - 1, -1, -1)])
        force = np.stack([wind(init_t + dt * k) for k in range(1, t_force + 1)])
        target = wave(init_t + dt)
        return hist, force, target

    def predict(self, wave_hist, wind):
        return self.model.forward(wave_hist, wind, self.terrain_feats, self.ocean_float)


# ---------------------------------------------------------------------------
# training loop


def _rng_state_json(rng: np.random.Generator) -> bytes:
    state = rng.bit_generator.state

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
        if isinstance(obj, (np.integer,)):
            return int(obj)
        return obj

    return json.dumps(clean(state), sort_keys=True).encode()


def _rng_from_json(payload: bytes) -> np.random.Generator:
    def revive(obj):
        if isinstance(obj, dict):
            if "__ndarray__" in obj:
                return np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return {k: revive(v) for k, v in obj.items()}
        return obj

    state = revive(json.loads(payload.decode()))
    bg = np.random.Philox()
    bg.state = state
    return np.random.Generator(bg)


def _checkpoint_payload(model, optimizer, dataset, cfg: TrainConfig, epoch, step,
                        best_val, rng, run_config_text=""):
    tensors = {}
    for name, p in model.params.items():
        tensors[f"param.{name}"] = p.data
        tensors[f"adam.m.{name}"] = optimizer.m[name]
        tensors[f"adam.v.{name}"] = optimizer.v[name]
    meta = {
        "model_kind": model.kind,
        "model_config": asdict(model.config),
        "lat_count": model.lat_count,
        "lon_count": model.lon_count,
        "train_config": asdict(cfg),
        "epoch": epoch,
        "step": step,
        "best_val": best_val,
        "adam_t": optimizer.t,
    }
    blocks = {
        "meta": json.dumps(meta, sort_keys=True).encode(),
        "norm_stats": dataset.stats.to_json().encode(),
        "rng": _rng_state_json(rng),
        "run_config": run_config_text.encode(),
    }
    return tensors, blocks


def load_model_from_checkpoint(path, expect_kind: str | None = None):
    """Rebuild a model (and metadata) from a checkpoint file."""
    tensors, blocks = load_checkpoint(path)
    meta = json.loads(blocks["meta"].decode())
    if expect_kind is not None and meta["model_kind"] != expect_kind:
        raise ContractError(
            f"checkpoint {path} holds a {meta['model_kind']} model, "
            f"but {expect_kind} was requested")
    rng = np.random.default_rng(0)  # weights are overwritten below
    model = build_model(meta["model_kind"], meta["lat_count"], meta["lon_count"], rng,
                        meta["model_config"])
    for name, p in model.params.items():
        key = f"param.{name}"
        if key not in tensors:
            raise FormatError(f"{path}: missing tensor {key}")
        if tensors[key].shape != p.data.shape:
            raise ContractError(
                f"checkpoint tensor {key} has shape {tensors[key].shape}, "
                f"model expects {p.data.shape}")
        p.data[...] = tensors[key]
    stats = NormStats.from_json(blocks["norm_stats"].decode())
    return model, meta, stats, tensors, blocks


def validation_swh_rmse(ctx: ModelContext, times, cache=None) -> float:
    """Denormalized lead-1 SWH RMSE over ocean cells, averaged over samples."""
    ds = ctx.dataset
    sq_sum = 0.0
    count = 0
    ocean = ds.mask.ocean
    std = ds.stats.std("SWH")
    for t in times:
        hist, force, target = ctx.sample_arrays(t, cache)
        pred = ctx.predict(hist, force)
        diff = (pred.data[0] - target[0])[ocean] * std
        sq_sum += float((diff ** 2).sum())
        count += diff.size
    return math_sqrt(sq_sum / max(count, 1))


def train(dataset: WaveDataset, cfg: TrainConfig, out_dir,
          model_cfg: dict | None = None, resume: str | None = None,
          run_config_text: str = "", log=print):
    """Train the selected model; writes last.wckp / best.wckp and loss_log.csv.

    Returns the path of the best-on-validation checkpoint.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_times = dataset.sample_times("train")
    val_times = dataset.sample_times("val")
    if not train_times:
        raise ConfigError("training split is empty")
    h, w = dataset.depth.values.shape

    if resume is not None:
        model, meta, _, tensors, blocks = load_model_from_checkpoint(resume,
                                                                     expect_kind=cfg.model)
        optimizer = Adam(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                         eps=cfg.eps, clip_norm=cfg.clip_norm)
        for name in model.params:
            optimizer.m[name][...] = tensors[f"adam.m.{name}"]
            optimizer.v[name][...] = tensors[f"adam.v.{name}"]
        optimizer.t = meta["adam_t"]
        rng = _rng_from_json(blocks["rng"])
        start_epoch = meta["epoch"] + 1
        best_val = meta["best_val"]
        global_step = meta["step"]
        log_mode = "a"
    else:
        init_rng = np.random.Generator(np.random.Philox(key=cfg.seed))
        model = build_model(cfg.model, h, w, init_rng, model_cfg)
        optimizer = Adam(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                         eps=cfg.eps, clip_norm=cfg.clip_norm)
        rng = np.random.Generator(np.random.Philox(key=(cfg.seed, 1)))
        start_epoch = 0
        best_val = float("inf")
        global_step = 0
        log_mode = "w"

    ctx = ModelContext.create(model, dataset)
    cache: dict = {}
    log(f"model={model.kind} parameters={model.parameter_count}")

    loss_log = out / "loss_log.csv"
    with loss_log.open(log_mode) as fh:
        if log_mode == "w":
            fh.write("epoch,step,total," + ",".join(_CHANNEL_NAMES) + "\n")
        for epoch in range(start_epoch, cfg.epochs):
            t_start = time.time()
            order = rng.permutation(len(train_times))
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo:lo + cfg.batch_size]
                optimizer.zero_grad()
                tot = 0.0
                per_ch = np.zeros(4)
                for idx in batch:
                    hist, force, target = ctx.sample_arrays(train_times[idx], cache)
                    with Tape() as tape:
                        pred = ctx.predict(hist, force)
                        loss, channels = masked_loss(pred, target, dataset.mask,
                                                     cfg.weights)
                    ad.backward(tape, loss)
                    tot += loss.item()
                    per_ch += np.array(channels)
                inv = 1.0 / len(batch)
                for p in model.params.values():
                    p.grad *= inv
                optimizer.step()
                global_step += 1
                tot *= inv
                per_ch *= inv
                fh.write(f"{epoch},{global_step},{tot:.10e},"
                         + ",".join(f"{c:.10e}" for c in per_ch) + "\n")
            val_rmse = validation_swh_rmse(ctx, val_times, cache)
            elapsed = time.time() - t_start
            log(f"epoch {epoch}: val SWH RMSE {val_rmse:.4f} m ({elapsed:.1f}s)")
            improved = val_rmse < best_val
            if improved:
                best_val = val_rmse
            tensors, blocks = _checkpoint_payload(model, optimizer, dataset, cfg,
                                                  epoch, global_step, best_val, rng,
                                                  run_config_text)
            if improved:
                save_checkpoint(out / "best.wckp", tensors, blocks)
            save_checkpoint(out / "last.wckp", tensors, blocks)
    best_path = out / "best.wckp"
    return best_path if best_path.exists() else out / "last.wckp"
