"""Deterministic forward pass of the feature-fusion stack.

A fusion unit aligns two per-frame feature sequences (a geometry-bearing
primary branch and an appearance/motion secondary branch) with a two-layer
cross-attention structure:

    e_p = encoder(primary);  e_s = encoder(secondary)
    layer 1: queries = e_p, keys = values = e_s
    layer 2: queries = e_p, keys = layer-1 output, values = e_s
    output  = primary + layer-2 output

The trimodal composition fuses lidar features with RGB features and with
event features in two independent units, then fuses the two results with a
third unit of the same structure.

Implementation choices kept minimal and fixed: one attention head,
pre-normalization residual blocks, a 4x GELU feed-forward, no positional
encoding (so row permutations of the inputs permute the output identically).
Everything is float64 and seeded; no training happens here.
"""

from __future__ import annotations

import csv
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ValidationError

WEIGHTS_MAGIC = b"MKFW"
WEIGHTS_VERSION = 1

_LN_EPS = 1e-8

# Observers receive every attention probability matrix as it is produced.
_attention_observers: list[Callable[[np.ndarray], None]] = []


def as_features(x, name: str = "features") -> np.ndarray:
    """Validate and return an (N, d) float64 feature matrix."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be (N, d) with N, d >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@contextmanager
def record_attention():
    """Collect each attention call's softmax matrix (rows sum to 1)."""
    store: list[np.ndarray] = []
    _attention_observers.append(store.append)
    try:
        yield store
    finally:
        _attention_observers.remove(store.append)


# ---------------------------------------------------------------------------
# Weight containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass(frozen=True)
class EncoderWeights:
    attn: AttentionWeights
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    norm1_gain: np.ndarray
    norm1_bias: np.ndarray
    norm2_gain: np.ndarray
    norm2_bias: np.ndarray


@dataclass(frozen=True)
class FusionUnitWeights:
    """Parameters of one two-branch cross-attention unit."""

    enc_primary: EncoderWeights
    enc_secondary: EncoderWeights
    cross1: AttentionWeights
    cross2: AttentionWeights

    @property
    def dim(self) -> int:
        return self.enc_primary.attn.wq.shape[0]


@dataclass(frozen=True)
class TrimodalWeights:
    """Three fusion units: lidar+rgb, lidar+event, and the merge stage."""

    lidar_rgb: FusionUnitWeights
    lidar_event: FusionUnitWeights
    merge: FusionUnitWeights

    def units(self) -> tuple[FusionUnitWeights, ...]:
        return (self.lidar_rgb, self.lidar_event, self.merge)


def _unit_tensors(unit: FusionUnitWeights) -> list[np.ndarray]:
    """Tensors of a unit in the documented serialization order."""
    out: list[np.ndarray] = []
    for enc in (unit.enc_primary, unit.enc_secondary):
        out += [enc.attn.wq, enc.attn.wk, enc.attn.wv, enc.attn.wo]
        out += [enc.w1, enc.b1, enc.w2, enc.b2]
        out += [enc.norm1_gain, enc.norm1_bias, enc.norm2_gain, enc.norm2_bias]
    for cross in (unit.cross1, unit.cross2):
        out += [cross.wq, cross.wk, cross.wv, cross.wo]
    return out


def _unit_shapes(d: int) -> list[tuple[int, ...]]:
    enc = [(d, d)] * 4 + [(d, 4 * d), (4 * d,), (4 * d, d), (d,)] + [(d,)] * 4
    return enc + enc + [(d, d)] * 8


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _init_attention(rng: np.random.Generator, d: int) -> AttentionWeights:
    scale = d**-0.5
    return AttentionWeights(*(rng.normal(0.0, scale, (d, d)) for _ in range(4)))


def _init_encoder(rng: np.random.Generator, d: int) -> EncoderWeights:
    scale = d**-0.5
    return EncoderWeights(
        attn=_init_attention(rng, d),
        w1=rng.normal(0.0, scale, (d, 4 * d)),
        b1=np.zeros(4 * d),
        w2=rng.normal(0.0, scale, (4 * d, d)),
        b2=np.zeros(d),
        norm1_gain=np.ones(d),
        norm1_bias=np.zeros(d),
        norm2_gain=np.ones(d),
        norm2_bias=np.zeros(d),
    )


def init_unit_weights(d: int, seed: int) -> FusionUnitWeights:
    """Seeded unit weights: matrix entries ~ N(0, 1/d), norms at identity."""
    if d < 1:
        raise ValidationError("feature dimension must be >= 1")
    rng = np.random.default_rng(seed)
    return FusionUnitWeights(
        enc_primary=_init_encoder(rng, d),
        enc_secondary=_init_encoder(rng, d),
        cross1=_init_attention(rng, d),
        cross2=_init_attention(rng, d),
    )


def init_trimodal_weights(d: int, seed: int) -> TrimodalWeights:
    """Three independently seeded units derived from one base seed."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=3)
    return TrimodalWeights(
        lidar_rgb=init_unit_weights(d, int(seeds[0])),
        lidar_event=init_unit_weights(d, int(seeds[1])),
        merge=init_unit_weights(d, int(seeds[2])),
    )


def zero_output_weights(unit: FusionUnitWeights) -> FusionUnitWeights:
    """Copy with every residual-path output projection zeroed.

    Zeroes the attention output projections (encoders and both cross layers),
    the feed-forward output matrices, and the feed-forward output biases, so
    each forward op becomes the identity on its primary input.
    """

    def zero_enc(enc: EncoderWeights) -> EncoderWeights:
        return EncoderWeights(
            attn=AttentionWeights(enc.attn.wq, enc.attn.wk, enc.attn.wv, np.zeros_like(enc.attn.wo)),
            w1=enc.w1,
            b1=enc.b1,
            w2=np.zeros_like(enc.w2),
            b2=np.zeros_like(enc.b2),
            norm1_gain=enc.norm1_gain,
            norm1_bias=enc.norm1_bias,
            norm2_gain=enc.norm2_gain,
            norm2_bias=enc.norm2_bias,
        )

    def zero_cross(att: AttentionWeights) -> AttentionWeights:
        return AttentionWeights(att.wq, att.wk, att.wv, np.zeros_like(att.wo))

    return FusionUnitWeights(
        enc_primary=zero_enc(unit.enc_primary),
        enc_secondary=zero_enc(unit.enc_secondary),
        cross1=zero_cross(unit.cross1),
        cross2=zero_cross(unit.cross2),
    )


def zero_output_trimodal(weights: TrimodalWeights) -> TrimodalWeights:
    return TrimodalWeights(*(zero_output_weights(u) for u in weights.units()))


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------


def scaled_dot_attention(q, k, v) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) v with row-wise softmax; returns (M, d)."""
    q = as_features(q, "queries")
    k = as_features(k, "keys")
    v = as_features(v, "values")
    if q.shape[1] != k.shape[1]:
        raise ValidationError("query/key dimensions differ")
    if k.shape[0] != v.shape[0]:
        raise ValidationError("key/value row counts differ")
    scores = q @ k.T / np.sqrt(q.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    for observer in _attention_observers:
        observer(weights.copy())
    return weights @ v


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def encoder_block(x, w: EncoderWeights) -> np.ndarray:
    """Pre-normalization transformer encoder block (self-attention + FFN)."""
    x = as_features(x)
    h = _layer_norm(x, w.norm1_gain, w.norm1_bias)
    x = x + scaled_dot_attention(h @ w.attn.wq, h @ w.attn.wk, h @ w.attn.wv) @ w.attn.wo
    h = _layer_norm(x, w.norm2_gain, w.norm2_bias)
    return x + (_gelu(h @ w.w1 + w.b1) @ w.w2 + w.b2)


def cross_attention_fuse(primary, secondary, w: FusionUnitWeights) -> np.ndarray:
    """Two-layer cross-attention fusion of two (N, d) sequences.

    The primary branch supplies queries in both layers; layer 1 keys/values
    come from the secondary branch, layer 2 keys come from the layer-1 output
    while values stay on the secondary branch. The unit output adds the raw
    primary input back in.
    """
    p = as_features(primary, "primary features")
    s = as_features(secondary, "secondary features")
    if p.shape != s.shape:
        raise ValidationError(f"branch shapes differ: {p.shape} vs {s.shape}")
    if p.shape[1] != w.dim:
        raise ValidationError(f"weights built for d={w.dim}, inputs have d={p.shape[1]}")
    ep = encoder_block(p, w.enc_primary)
    es = encoder_block(s, w.enc_secondary)
    l1 = scaled_dot_attention(ep @ w.cross1.wq, es @ w.cross1.wk, es @ w.cross1.wv) @ w.cross1.wo
    l2 = scaled_dot_attention(ep @ w.cross2.wq, l1 @ w.cross2.wk, es @ w.cross2.wv) @ w.cross2.wo
    return p + l2


def trimodal_fuse(f_lidar, f_rgb, f_event, weights: TrimodalWeights) -> np.ndarray:
    """Fuse three modalities: two first-stage units, then a merge unit."""
    a = cross_attention_fuse(f_lidar, f_rgb, weights.lidar_rgb)
    b = cross_attention_fuse(f_lidar, f_event, weights.lidar_event)
    return cross_attention_fuse(a, b, weights.merge)


# ---------------------------------------------------------------------------
# Finite-difference gradient utility
# ---------------------------------------------------------------------------


def fd_input_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array input."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        fp = fn(x)
        xf[i] = orig - step
        fm = fn(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_weights(units: Sequence[FusionUnitWeights] | TrimodalWeights, path: str | Path) -> None:
    """Write units to the flat binary container.

    Layout: magic ``MKFW``, uint32 version, uint32 d, uint32 unit count, then
    per unit the raw little-endian float64 tensors in a fixed order (primary
    encoder, secondary encoder, cross layer 1, cross layer 2; see
    :func:`_unit_tensors`).
    """
    if isinstance(units, TrimodalWeights):
        units = units.units()
    units = list(units)
    if not units:
        raise ValidationError("no weight units to save")
    d = units[0].dim
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", WEIGHTS_VERSION, d, len(units)))
        for unit in units:
            if unit.dim != d:
                raise ValidationError("all units must share one feature dimension")
            for tensor in _unit_tensors(unit):
                fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_weights(path: str | Path) -> list[FusionUnitWeights]:
    data = Path(path).read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise ValidationError("not a fusion weights file")
    version, d, n_units = struct.unpack("<III", data[4:16])
    if version != WEIGHTS_VERSION:
        raise ValidationError(f"unsupported weights version {version}")
    shapes = _unit_shapes(d)
    per_unit = sum(int(np.prod(s)) for s in shapes)
    expected = 16 + 8 * per_unit * n_units
    if len(data) != expected:
        raise ValidationError(f"weights file truncated: {len(data)} bytes, expected {expected}")
    offset = 16
    units = []
    for _ in range(n_units):
        tensors = []
        for shape in shapes:
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
            tensors.append(np.array(arr))
            offset += 8 * count
        it = iter(tensors)

        def take_encoder() -> EncoderWeights:
            wq, wk, wv, wo = (next(it) for _ in range(4))
            w1, b1, w2, b2 = (next(it) for _ in range(4))
            n1g, n1b, n2g, n2b = (next(it) for _ in range(4))
            return EncoderWeights(AttentionWeights(wq, wk, wv, wo), w1, b1, w2, b2, n1g, n1b, n2g, n2b)

        enc_p = take_encoder()
        enc_s = take_encoder()
        cross1 = AttentionWeights(*(next(it) for _ in range(4)))
        cross2 = AttentionWeights(*(next(it) for _ in range(4)))
        units.append(FusionUnitWeights(enc_p, enc_s, cross1, cross2))
    return units


# ---------------------------------------------------------------------------
# Feature CSV I/O
# ---------------------------------------------------------------------------


def write_features_csv(features: np.ndarray, path: str | Path) -> None:
    arr = as_features(features)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(arr.shape[1])])
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])


def read_features_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not all(h.strip().startswith("f") for h in header):
            raise ValidationError(f"{path}: expected feature header f0..f{{d-1}}")
        rows = [[float(v) for v in r] for r in reader if r]
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    return as_features(np.asarray(rows), str(path))
