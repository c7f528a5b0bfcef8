"""Video transformer core: spatial, temporal, and cross-scale attention.

Token sequences are single tensors of shape (T, N, D): T frames, N blocks
per frame, token length D = J*C_b. ISA attends over the N tokens of each
frame; ITA attends, per block slot, over the T frames after flow
alignment; CISA attends over the union of tokens from all block scales
after projecting them to a common width; MITA runs ITA per scale and
merges every scale onto the finest grid.

A layer composes them with the outer residual
    out = temporal(aligned(spatial(tokens))) + tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import (AttentionConfig, block_params, init_linear,
                     transformer_block_cross, transformer_block_self)
from .tensor import ConfigError, ContractError, ShapeError, Tensor, macs


@dataclass(frozen=True)
class GridGeometry:
    block_size: int
    n_h: int
    n_w: int

    @property
    def n(self) -> int:
        return self.n_h * self.n_w


@dataclass(frozen=True)
class ScaleSet:
    """Ordered block sizes (finest first) and the shared projection width."""
    scales: tuple[int, ...]
    d_common: int
    token_dims: tuple[int, ...]  # native token length per scale

    @staticmethod
    def build(scales, joints: int, channels: int) -> "ScaleSet":
        scales = tuple(sorted(int(s) for s in scales))
        dims = tuple(joints * channels * s * s for s in scales)
        # Common width balances projection distortion: the middle scale's dim.
        d_common = dims[len(dims) // 2]
        return ScaleSet(scales, d_common, dims)


# -- spatial attention ---------------------------------------------------------


def isa_params(rng: np.random.Generator, n: int, cfg: AttentionConfig) -> dict[str, Tensor]:
    p = block_params(rng, cfg)
    p["pos"] = Tensor(np.zeros((n, cfg.d_model)), requires_grad=True)
    return p


def isa(tokens: Tensor, params: dict[str, Tensor], cfg: AttentionConfig) -> Tensor:
    """Per-frame self-attention with learned per-block positional embeddings."""
    if tokens.shape[-1] != cfg.d_model:
        raise ConfigError(f"isa: token dim {tokens.shape[-1]} != d_model {cfg.d_model}")
    with macs.scope("isa"):
        x = T.add_bcast(tokens, params["pos"])
        return transformer_block_self(x, params, cfg)


# -- flow alignment -------------------------------------------------------------


def block_mean_flow(flow: np.ndarray, geom: GridGeometry) -> np.ndarray:
    """Mean (dx, dy) of each block's pixels, shape (N, 2)."""
    k = geom.block_size
    f = flow.reshape(2, geom.n_h, k, geom.n_w, k)
    return f.mean(axis=(2, 4)).reshape(2, geom.n).T


def alignment_maps(flows: list[np.ndarray], geom: GridGeometry, frames: int) -> np.ndarray:
    """Source-row assignment per frame for relocation into the last frame's grid.

    Returns (T, N) int array A with aligned[t, n] = tokens[t, A[t, n]].
    Block flow is the block-mean of the pixel flow, chained across the
    intermediate frames (re-reading the flow at the displaced block each
    step), rounded to block units and clamped. Collisions overwrite in
    row-major grid order; vacated cells keep their original token.
    """
    if len(flows) != frames - 1:
        raise ContractError(f"alignment_maps: need {frames - 1} flow pairs, got {len(flows)}")
    k = geom.block_size
    h, w = geom.n_h * k, geom.n_w * k
    means = [block_mean_flow(f, geom) for f in flows]
    rows, cols = np.divmod(np.arange(geom.n), geom.n_w)
    cy = rows * k + k // 2.0
    cx = cols * k + k // 2.0
    out = np.empty((frames, geom.n), dtype=np.int64)
    for t in range(frames):
        px, py = cx.copy(), cy.copy()
        for s in range(t, frames - 1):
            bx = np.clip(np.rint(px).astype(np.int64), 0, w - 1) // k
            by = np.clip(np.rint(py).astype(np.int64), 0, h - 1) // k
            bidx = by * geom.n_w + bx
            px = px + means[s][bidx, 0]
            py = py + means[s][bidx, 1]
        dc = np.clip(np.rint(px).astype(np.int64), 0, w - 1) // k
        dr = np.clip(np.rint(py).astype(np.int64), 0, h - 1) // k
        dest = dr * geom.n_w + dc
        assign = np.arange(geom.n, dtype=np.int64)
        for i in range(geom.n):
            assign[dest[i]] = i
        out[t] = assign
    return out


def align_tokens(tokens: Tensor, flows: list[np.ndarray], geom: GridGeometry) -> Tensor:
    """Relocate every frame's tokens onto the last frame's grid."""
    frames, n, d = tokens.shape
    assigns = alignment_maps(flows, geom, frames)
    flat = T.reshape(tokens, (frames * n, d))
    idx = (assigns + (np.arange(frames) * n)[:, None]).reshape(-1)
    return T.reshape(T.take_rows(flat, idx), (frames, n, d))


# -- temporal attention ----------------------------------------------------------


def ita(aligned: Tensor, params: dict[str, Tensor], cfg: AttentionConfig,
        causal: bool = False) -> Tensor:
    """Cross-attention of every (frame, block) token over its block slot.

    With the full window (default) every query at block i attends to the
    tokens of block i from all T frames, so the temporal stage is one
    cross block over the T rows of each slot. The causal flag restricts
    keys to frames up to the query's frame.
    """
    frames, n, d = aligned.shape
    if d != cfg.d_model:
        raise ConfigError(f"ita: token dim {d} != d_model {cfg.d_model}")
    with macs.scope("ita"):
        slots = T.transpose(aligned, (1, 0, 2))  # (N, T, D)
        if not causal:
            out = transformer_block_cross(slots, slots, slots, params, cfg)
        else:
            per_frame = []
            for t in range(frames):
                q = T.narrow(slots, 1, t, 1)
                kv = T.narrow(slots, 1, 0, t + 1)
                per_frame.append(transformer_block_cross(q, kv, kv, params, cfg))
            out = T.concat(per_frame, axis=1)
        return T.transpose(out, (1, 0, 2))


def ivt_layer(tokens: Tensor, flows: list[np.ndarray], params: dict[str, dict[str, Tensor]],
              cfg: AttentionConfig, geom: GridGeometry, causal: bool = False) -> Tensor:
    """One single-scale layer: spatial, align, temporal, outer residual."""
    spatial = isa(tokens, params["isa"], cfg)
    temporal = ita(align_tokens(spatial, flows, geom), params["ita"], cfg, causal)
    return temporal + tokens


def layer_params(rng: np.random.Generator, n: int, cfg: AttentionConfig) -> dict[str, dict[str, Tensor]]:
    return {"isa": isa_params(rng, n, cfg), "ita": block_params(rng, cfg)}


# -- cross-scale attention ---------------------------------------------------------


def cisa_params(rng: np.random.Generator, scale_set: ScaleSet,
                grids: list[GridGeometry], heads: int) -> dict[str, Tensor | dict[str, Tensor]]:
    p: dict = {"block": block_params(rng, AttentionConfig(scale_set.d_common, heads))}
    for s, d_s, geom in zip(scale_set.scales, scale_set.token_dims, grids):
        p[f"pos{s}"] = Tensor(np.zeros((geom.n, d_s)), requires_grad=True)
        p[f"proj{s}_w"], p[f"proj{s}_b"] = init_linear(rng, d_s, scale_set.d_common)
        p[f"back{s}_w"], p[f"back{s}_b"] = init_linear(rng, scale_set.d_common, d_s)
    return p


def cisa(per_scale: list[Tensor], scale_set: ScaleSet, params: dict,
         heads: int) -> list[Tensor]:
    """Project all scales to a common width, attend over the union, back-project."""
    from .blocks import linear

    if len(per_scale) != len(scale_set.scales):
        raise ConfigError(
            f"cisa: {len(per_scale)} token maps for {len(scale_set.scales)} scales")
    cfg = AttentionConfig(scale_set.d_common, heads)
    with macs.scope("cisa"):
        projected = []
        counts = []
        for tokens, s, d_s in zip(per_scale, scale_set.scales, scale_set.token_dims):
            if tokens.shape[-1] != d_s:
                raise ShapeError(f"cisa: scale {s} token dim {tokens.shape[-1]} != {d_s}")
            x = T.add_bcast(tokens, params[f"pos{s}"])
            projected.append(linear(x, params[f"proj{s}_w"], params[f"proj{s}_b"]))
            counts.append(tokens.shape[1])
        union = T.concat(projected, axis=1)  # (T, sum N_s, D_common)
        fused = transformer_block_self(union, params["block"], cfg)
        outs = []
        start = 0
        for count, s in zip(counts, scale_set.scales):
            part = T.narrow(fused, 1, start, count)
            outs.append(linear(part, params[f"back{s}_w"], params[f"back{s}_b"]))
            start += count
        return outs


def split_to_finest(tokens: Tensor, geom: GridGeometry, fine: GridGeometry,
                    joints: int, channels: int) -> Tensor:
    """Redistribute a coarse token map onto the finest grid, losslessly.

    A coarse token is the concatenation of J gathered (C, K, K) blocks;
    each (C, K, K) block re-tiles into r*r fine (C, K_f, K_f) cells with
    r = K / K_f, so one coarse token yields r*r fine tokens exactly.
    """
    k, kf = geom.block_size, fine.block_size
    if k % kf != 0:
        raise ConfigError(f"split_to_finest: {k} not divisible by finest block {kf}")
    r = k // kf
    frames = tokens.shape[0]
    x = T.reshape(tokens, (frames, geom.n_h, geom.n_w, joints, channels, r, kf, r, kf))
    x = T.transpose(x, (0, 1, 5, 2, 7, 3, 4, 6, 8))
    return T.reshape(x, (frames, fine.n, joints * channels * kf * kf))


def mita(per_scale: list[Tensor], params: dict[str, dict[str, Tensor]],
         scale_set: ScaleSet, grids: list[GridGeometry], heads: int,
         joints: int, channels: int, causal: bool = False) -> tuple[Tensor, list[Tensor]]:
    """Per-scale temporal attention, then frame-wise merge onto the finest grid.

    Returns (merged finest-grid token map, per-scale ITA outputs).
    """
    outs = []
    for tokens, s, d_s in zip(per_scale, scale_set.scales, scale_set.token_dims):
        cfg = AttentionConfig(d_s, heads)
        outs.append(ita(tokens, params[f"ita{s}"], cfg, causal))
    fine = grids[0]
    merged = None
    for out, geom in zip(outs, grids):
        contrib = out if geom.block_size == fine.block_size else split_to_finest(
            out, geom, fine, joints, channels)
        merged = contrib if merged is None else merged + contrib
    return merged, outs


# -- full stack ---------------------------------------------------------------------


@dataclass(frozen=True)
class VideoConfig:
    """Architecture knobs for the stacked video transformer."""
    joints: int
    channels: int
    scales: tuple[int, ...] = (2, 4, 8)
    layers: int = 3
    heads: int = 2
    fuse_heads: int = 2
    causal: bool = False

    def scale_set(self) -> ScaleSet:
        return ScaleSet.build(self.scales, self.joints, self.channels)

    def grids(self, h: int, w: int) -> list[GridGeometry]:
        out = []
        for s in self.scale_set().scales:
            if h % s != 0 or w % s != 0:
                raise ConfigError(f"feature map {h}x{w} not divisible by block size {s}")
            out.append(GridGeometry(s, h // s, w // s))
        return out


def video_params(rng: np.random.Generator, cfg: VideoConfig, h: int, w: int) -> dict:
    """All learned parameters of the tokenizer fusion and the layer stack."""
    sset = cfg.scale_set()
    grids = cfg.grids(h, w)
    p: dict = {}
    for s in sset.scales:
        c_b = cfg.channels * s * s
        p[f"fuse{s}"] = block_params(rng, AttentionConfig(c_b, cfg.fuse_heads))
    single = len(sset.scales) == 1
    for layer in range(cfg.layers):
        if single:
            d = sset.token_dims[0]
            p[f"layer{layer}"] = layer_params(rng, grids[0].n, AttentionConfig(d, cfg.heads))
        else:
            mp = {f"ita{s}": block_params(rng, AttentionConfig(d_s, cfg.heads))
                  for s, d_s in zip(sset.scales, sset.token_dims)}
            p[f"layer{layer}"] = {"cisa": cisa_params(rng, sset, grids, cfg.heads),
                                  "mita": mp}
    return p


def tokenize_clip(features: list[Tensor], offsets: list[np.ndarray],
                  cfg: VideoConfig, params: dict) -> list[Tensor]:
    """Instance-guided tokens per scale, each of shape (T, N_s, D_s)."""
    from .igt import igt_frame

    sset = cfg.scale_set()
    streams = []
    for s in sset.scales:
        c_b = cfg.channels * s * s
        fuse_cfg = AttentionConfig(c_b, cfg.fuse_heads)
        maps = [igt_frame(f, off, s, params[f"fuse{s}"], fuse_cfg, cfg.joints)
                for f, off in zip(features, offsets)]
        streams.append(T.concat([T.reshape(m, (1,) + m.shape) for m in maps], axis=0))
    return streams


def ivt_forward(features: list[Tensor], offsets: list[np.ndarray],
                flows: list[np.ndarray], cfg: VideoConfig, params: dict) -> Tensor:
    """IGT per scale per frame, then the stacked attention layers.

    Returns the finest-scale token sequence (T, N_finest, D_finest).
    """
    _, h, w = features[0].shape
    sset = cfg.scale_set()
    grids = cfg.grids(h, w)
    streams = tokenize_clip(features, offsets, cfg, params)
    if len(sset.scales) == 1:
        acfg = AttentionConfig(sset.token_dims[0], cfg.heads)
        tokens = streams[0]
        for layer in range(cfg.layers):
            tokens = ivt_layer(tokens, flows, params[f"layer{layer}"], acfg,
                               grids[0], cfg.causal)
        return tokens
    for layer in range(cfg.layers):
        lp = params[f"layer{layer}"]
        fine_input = streams[0]
        spatial = cisa(streams, sset, lp["cisa"], cfg.heads)
        aligned = [align_tokens(x, flows, geom) for x, geom in zip(spatial, grids)]
        merged, outs = mita(aligned, lp["mita"], sset, grids, cfg.heads,
                            cfg.joints, cfg.channels, cfg.causal)
        streams = list(outs)
        streams[0] = merged + fine_input
    return streams[0]
