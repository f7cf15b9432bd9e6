"""Patch-token transformer wave forecaster.

Encoder: wave history patch-embedded per time step, terrain embedding added
in place of positional encoding, then blocks of temporal attention (over
time, per patch), spatial attention (over patches, per time) and an MLP,
each sublayer wrapped residual + post layer norm. Decoder: future-wind
patch tokens self-attend, then cross-attend into the flattened encoder
memory. A linear un-patch projection reassembles the field and a small
convolutional head smooths patch-boundary fragmentation. Output is the
normalized next wave state (4 channels: swh, mwp, sin, cos).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ShapeError


@dataclass
class ViTConfig:
    patch: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_enc_blocks: int = 2
    n_dec_blocks: int = 2
    t_in: int = 2
    t_force: int = 1
    conv_layers: int = 2
    mlp_ratio: int = 4
    residual: bool = False

    def validate(self, lat_count: int, lon_count: int):
        if lat_count % self.patch or lon_count % self.patch:
            raise ShapeError(
                f"patch size {self.patch} must divide grid {lat_count}x{lon_count}")
        if self.d_model % self.n_heads:
            raise ShapeError(
                f"n_heads={self.n_heads} must divide d_model={self.d_model}")

    def n_patches(self, lat_count: int, lon_count: int) -> int:
        return (lat_count // self.patch) * (lon_count // self.patch)


# ---------------------------------------------------------------------------
# patch bookkeeping


def patchify(x, p: int):
    """(C, H, W) -> (N, C*p*p) with patches row-major over the patch grid."""
    c, h, w = (x.shape if isinstance(x, Tensor) else np.asarray(x).shape)
    if h % p or w % p:
        raise ShapeError(f"patch size {p} does not divide field shape {(h, w)}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    x = ad.reshape(x, (c, h // p, p, w // p, p))
    x = ad.transpose(x, (1, 3, 0, 2, 4))
    return ad.reshape(x, ((h // p) * (w // p), c * p * p))


def unpatchify(tokens, p: int, c: int, h: int, w: int):
    """Exact inverse of patchify."""
    if not isinstance(tokens, Tensor):
        tokens = Tensor(tokens)
    n, width = tokens.shape
    if n != (h // p) * (w // p) or width != c * p * p:
        raise ShapeError(
            f"token block {tokens.shape} does not reassemble into ({c},{h},{w}) with p={p}")
    x = ad.reshape(tokens, (h // p, w // p, c, p, p))
    x = ad.transpose(x, (2, 0, 3, 1, 4))
    return ad.reshape(x, (c, h, w))


def terrain_features(depth_values: np.ndarray, ocean: np.ndarray, p: int) -> np.ndarray:
    """Per-patch (mean elevation, min elevation, ocean fraction), standardized.

    Pure function of the terrain; gives patches location identity through
    land geometry without any positional encoding.
    """
    h, w = depth_values.shape
    if h % p or w % p:
        raise ShapeError(f"patch size {p} does not divide grid {depth_values.shape}")
    blocks = depth_values.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p * p)
    oblocks = ocean.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p * p)
    feats = np.stack([
        blocks.mean(axis=1),
        blocks.min(axis=1),
        oblocks.mean(axis=1),
    ], axis=1)
    mu = feats.mean(axis=0, keepdims=True)
    sd = feats.std(axis=0, keepdims=True)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (feats - mu) / sd


# ---------------------------------------------------------------------------
# parameters


def _uniform_init(rng, fan_in, fan_out, shape):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ViTModel:
    """Parameter container plus forward pass; pure function of (input, params)."""

    kind = "vit"

    def __init__(self, config: ViTConfig, lat_count: int, lon_count: int,
                 rng: np.random.Generator):
        config.validate(lat_count, lon_count)
        self.config = config
        self.lat_count = lat_count
        self.lon_count = lon_count
        self.params: dict[str, Parameter] = {}
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _add(self, name, value):
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def _add_linear(self, name, fan_in, fan_out, rng, bias=False):
        self._add(name + ".W", _uniform_init(rng, fan_in, fan_out, (fan_in, fan_out)))
        if bias:
            self._add(name + ".b", np.zeros(fan_out))

    def _add_attention(self, name, rng):
        d = self.config.d_model
        for w in ("Wq", "Wk", "Wv", "Wo"):
            self._add(f"{name}.{w}", _uniform_init(rng, d, d, (d, d)))

    def _add_ln(self, name):
        d = self.config.d_model
        self._add(name + ".gain", np.ones(d))
        self._add(name + ".bias", np.zeros(d))

    def _add_mlp(self, name, rng):
        d = self.config.d_model
        hidden = d * self.config.mlp_ratio
        self._add_linear(name + ".fc1", d, hidden, rng, bias=True)
        self._add_linear(name + ".fc2", hidden, d, rng, bias=True)

    def _build(self, rng):
        cfg = self.config
        p2 = cfg.patch * cfg.patch
        d = cfg.d_model
        self._add("embed.wave.W", _uniform_init(rng, 4 * p2, d, (4 * p2, d)))
        self._add("embed.wind.W", _uniform_init(rng, 2 * p2, d, (2 * p2, d)))
        self._add("embed.terrain.W", _uniform_init(rng, 3, d, (3, d)))
        for b in range(cfg.n_enc_blocks):
            pre = f"enc.block{b}"
            self._add_attention(f"{pre}.temporal", rng)
            self._add_ln(f"{pre}.ln_temporal")
            self._add_attention(f"{pre}.spatial", rng)
            self._add_ln(f"{pre}.ln_spatial")
            self._add_mlp(f"{pre}.mlp", rng)
            self._add_ln(f"{pre}.ln_mlp")
        for b in range(cfg.n_dec_blocks):
            pre = f"dec.block{b}"
            self._add_attention(f"{pre}.self", rng)
            self._add_ln(f"{pre}.ln_self")
            self._add_attention(f"{pre}.cross", rng)
            self._add_ln(f"{pre}.ln_cross")
            self._add_mlp(f"{pre}.mlp", rng)
            self._add_ln(f"{pre}.ln_mlp")
        self._add("head.unpatch.W", _uniform_init(rng, d, 4 * p2, (d, 4 * p2)))
        for i in range(cfg.conv_layers):
            self._add(f"head.conv{i}", _uniform_init(rng, 4 * 9, 4 * 9, (4, 4, 3, 3)))

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- sublayers ----------------------------------------------------------

    def _heads_split(self, x):
        # (B, L, d) -> (B, h, L, dh)
        b, l, d = x.shape
        nh = self.config.n_heads
        x = ad.reshape(x, (b, l, nh, d // nh))
        return ad.transpose(x, (0, 2, 1, 3))

    def _heads_merge(self, x):
        b, nh, l, dh = x.shape
        x = ad.transpose(x, (0, 2, 1, 3))
        return ad.reshape(x, (b, l, nh * dh))

    def _attention(self, q_in, kv_in, prefix):
        """Multi-head attention; q_in (B,Lq,d), kv_in (B,Lk,d)."""
        p = self.params
        q = self._heads_split(ad.matmul(q_in, p[f"{prefix}.Wq"]))
        k = self._heads_split(ad.matmul(kv_in, p[f"{prefix}.Wk"]))
        v = self._heads_split(ad.matmul(kv_in, p[f"{prefix}.Wv"]))
        scale = 1.0 / math.sqrt(self.config.d_model // self.config.n_heads)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale)
        attn = ad.softmax_lastdim(scores)
        out = self._heads_merge(ad.matmul(attn, v))
        return ad.matmul(out, p[f"{prefix}.Wo"])

    def _residual_ln(self, x, sub_out, ln_name):
        p = self.params
        return ad.layer_norm(ad.add(x, sub_out), p[f"{ln_name}.gain"], p[f"{ln_name}.bias"])

    def _mlp(self, x, prefix):
        p = self.params
        h = ad.add(ad.matmul(x, p[f"{prefix}.fc1.W"]), p[f"{prefix}.fc1.b"])
        h = ad.gelu(h)
        return ad.add(ad.matmul(h, p[f"{prefix}.fc2.W"]), p[f"{prefix}.fc2.b"])

    def temporal_attention(self, tokens, block):
        """Self-attention over the time axis independently per patch."""
        x = ad.transpose(tokens, (1, 0, 2))  # (n, t, d)
        y = self._attention(x, x, f"{block}.temporal")
        y = self._residual_ln(x, y, f"{block}.ln_temporal")
        return ad.transpose(y, (1, 0, 2))

    def spatial_attention(self, tokens, block):
        """Self-attention over the patch axis independently per time step."""
        y = self._attention(tokens, tokens, f"{block}.spatial")
        return self._residual_ln(tokens, y, f"{block}.ln_spatial")

    # -- forward ------------------------------------------------------------

    def _embed_stack(self, stack, embed_w, terrain):
        """(T, C, H, W) array -> (T, N, d) tokens with terrain added per step."""
        cfg = self.config
        rows = []
        for t in range(stack.shape[0]):
            tok = ad.matmul(patchify(stack[t], cfg.patch), embed_w)
            tok = ad.add(tok, terrain)
            rows.append(ad.reshape(tok, (1,) + tok.shape))
        return rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)

    def _terrain_tokens(self, terrain_feats):
        return ad.matmul(Tensor(terrain_feats), self.params["embed.terrain.W"])

    def encoder_forward(self, wave_hist: np.ndarray, terrain_feats: np.ndarray):
        """wave_hist (t_in, 4, H, W) normalized -> memory (t_in, N, d)."""
        terrain = self._terrain_tokens(terrain_feats)
        x = self._embed_stack(wave_hist, self.params["embed.wave.W"], terrain)
        for b in range(self.config.n_enc_blocks):
            block = f"enc.block{b}"
            x = self.temporal_attention(x, block)
            x = self.spatial_attention(x, block)
            x = self._residual_ln(x, self._mlp(x, f"{block}.mlp"), f"{block}.ln_mlp")
        return x

    def decoder_forward(self, wind: np.ndarray, memory, terrain_feats: np.ndarray):
        """wind (t_force, 2, H, W) normalized -> decoded tokens (t_force, N, d)."""
        cfg = self.config
        terrain = self._terrain_tokens(terrain_feats)
        x = self._embed_stack(wind, self.params["embed.wind.W"], terrain)
        t_force, n, d = x.shape
        x = ad.reshape(x, (1, t_force * n, d))
        mem_t, mem_n, _ = memory.shape
        mem = ad.reshape(memory, (1, mem_t * mem_n, d))
        for b in range(self.config.n_dec_blocks):
            block = f"dec.block{b}"
            x = self._residual_ln(x, self._attention(x, x, f"{block}.self"), f"{block}.ln_self")
            x = self._residual_ln(x, self._attention(x, mem, f"{block}.cross"), f"{block}.ln_cross")
            x = self._residual_ln(x, self._mlp(x, f"{block}.mlp"), f"{block}.ln_mlp")
        return ad.reshape(x, (t_force, n, d))

    def conv_head(self, decoded, ocean_float: np.ndarray):
        """Decoded tokens -> normalized (4, H, W) next state, land re-masked."""
        cfg = self.config
        t_force = decoded.shape[0]
        tokens = decoded if t_force == 1 else ad.slice_axis0(decoded, t_force - 1, t_force)
        tokens = ad.reshape(tokens, decoded.shape[1:])
        field_tokens = ad.matmul(tokens, self.params["head.unpatch.W"])
        x = unpatchify(field_tokens, cfg.patch, 4, self.lat_count, self.lon_count)
        for i in range(cfg.conv_layers):
            x = ad.conv2d(x, self.params[f"head.conv{i}"])
            if i < cfg.conv_layers - 1:
                x = ad.gelu(x)
        return ad.mul(x, ocean_float)

    def forward(self, wave_hist: np.ndarray, wind: np.ndarray,
                terrain_feats: np.ndarray, ocean_float: np.ndarray):
        memory = self.encoder_forward(wave_hist, terrain_feats)
        decoded = self.decoder_forward(wind, memory, terrain_feats)
        out = self.conv_head(decoded, ocean_float)
        if self.config.residual:
            # predict the increment over the most recent wave state
            out = ad.add(out, np.asarray(wave_hist[-1]) * ocean_float)
        return out
