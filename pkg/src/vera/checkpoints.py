"""Seed-based adapter checkpoints.

A VeRA checkpoint stores the generator seed, the configuration needed to
regenerate the shared matrices, and the trained ``d``/``b`` vectors; no
matrix data.  Layout (all little-endian)::

    "VERA" | version u32 | method u8 | master_seed u64 | r u32 | r_max u32
    | init_scheme u8 [| range_low f32 | range_high f32]   (uniform-range only)
    | d_init f32 [| lora_alpha f32]                        (LoRA only)
    | layer_count u32
    | per layer: name (u16 len + UTF-8) | m u32 | n u32
                 | d (r x f32, if present) | b (m x f32, if present)
                 | A (r*n x f32) | B (m*r x f32)           (LoRA only)

LoRA checkpoints carry their matrices explicitly, so the file size claim
applies to the VeRA family only.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping, Sequence

import numpy as np

from . import adapters as ad
from .adapters import AdapterConfig, Method
from .matcore import CorruptionError, FormatError, ShapeError, _Reader, pack_name, read_tensors, write_tensors
from .prng import InitKind, InitScheme

MAGIC = b"VERA"
VERSION = 1


class InvalidConfigError(ValueError):
    """Checkpoint fields are individually readable but jointly invalid."""


class MissingTensorError(KeyError):
    pass


def _has_d(method: Method) -> bool:
    return method in (Method.VERA, Method.ONLY_D)


def _has_b(method: Method) -> bool:
    return method in (Method.VERA, Method.ONLY_B)


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _check_layers(layers: Sequence[ad.Layer], config: AdapterConfig) -> None:
    names = set()
    for layer in layers:
        if layer.method is not config.method:
            raise InvalidConfigError(f"layer {layer.name!r} is {layer.method.label}, "
                                     f"config says {config.method.label}")
        if layer.name in names:
            raise InvalidConfigError(f"duplicate layer name {layer.name!r}")
        names.add(layer.name)
        if isinstance(layer, ad.VeraLayer):
            s = layer.shared
            if (layer.r != config.rank or s.r_max != config.r_max or s.scheme != config.init_scheme
                    or s.master_seed != config.master_seed):
                raise InvalidConfigError(f"layer {layer.name!r} was not built from this config")
        elif isinstance(layer, ad.LoraLayer):
            if layer.r != config.rank or np.float32(layer.alpha) != np.float32(config.lora_alpha):
                raise InvalidConfigError(f"layer {layer.name!r} rank/alpha differ from config")


def encode(layers: Sequence[ad.Layer], config: AdapterConfig) -> bytes:
    _check_layers(layers, config)
    scheme = config.init_scheme
    parts = [MAGIC, struct.pack("<IBQII", VERSION, int(config.method), config.master_seed,
                                config.rank, config.r_max),
             struct.pack("<B", int(scheme.kind))]
    if scheme.kind is InitKind.UNIFORM_RANGE:
        parts.append(struct.pack("<ff", scheme.range_low, scheme.range_high))
    parts.append(struct.pack("<f", config.d_init))
    if config.method is Method.LORA:
        parts.append(struct.pack("<f", config.lora_alpha))
    parts.append(struct.pack("<I", len(layers)))
    for layer in layers:
        m, n = layer.shape
        parts.append(pack_name(layer.name))
        parts.append(struct.pack("<II", m, n))
        if isinstance(layer, ad.VeraLayer):
            if layer.d is not None:
                parts.append(_f32(layer.d))
            if layer.b is not None:
                parts.append(_f32(layer.b))
        elif isinstance(layer, ad.LoraLayer):
            parts.append(_f32(layer.A))
            parts.append(_f32(layer.B))
    return b"".join(parts)


def save(layers: Sequence[ad.Layer], config: AdapterConfig, path: str | os.PathLike) -> int:
    """Write a checkpoint; returns the number of bytes written."""
    blob = encode(layers, config)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def payload_bytes(layers: Sequence[ad.Layer]) -> int:
    """Bytes spent on trained values alone (4 per value)."""
    return 4 * sum(ad.trainable_params(layer) for layer in layers)


def decode(blob: bytes, base_weights: Mapping[str, np.ndarray] | None = None):
    """Parse checkpoint bytes into ``(layers, config)``.

    Shared matrices are regenerated from the stored seed.  ``W0`` comes from
    ``base_weights[name]`` when given, otherwise it is a zero matrix (so
    :func:`vera.adapters.merge` then yields the update alone).
    """
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic: not a VERA checkpoint")
    version, method_raw, seed, rank, r_max = r.unpack("<IBQII")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        method = Method(method_raw)
    except ValueError:
        raise FormatError(f"unknown method code {method_raw}") from None
    (kind_raw,) = r.unpack("<B")
    try:
        kind = InitKind(kind_raw)
    except ValueError:
        raise FormatError(f"unknown init scheme code {kind_raw}") from None
    if kind is InitKind.UNIFORM_RANGE:
        low, high = r.unpack("<ff")
        if not low < high:
            raise InvalidConfigError(f"uniform range [{low}, {high}) is empty")
        scheme = InitScheme(kind, low, high)
    else:
        scheme = InitScheme(kind)
    (d_init,) = r.unpack("<f")
    alpha = r.unpack("<f")[0] if method is Method.LORA else None
    if rank < 1 or r_max < 1:
        raise InvalidConfigError(f"rank {rank} and r_max {r_max} must be >= 1")
    if rank > r_max:
        raise InvalidConfigError(f"rank {rank} exceeds r_max {r_max}")
    config = AdapterConfig(method=method, rank=rank, init_scheme=scheme, d_init=d_init,
                           lora_alpha=alpha, master_seed=seed, r_max=r_max)
    (count,) = r.unpack("<I")
    pool = ad.SharedPool.for_config(config)
    layers: list[ad.Layer] = []
    for _ in range(count):
        name = r.name()
        m, n = r.unpack("<II")
        if m < 1 or n < 1:
            raise InvalidConfigError(f"layer {name!r} has empty shape ({m}, {n})")
        W0 = _base_for(base_weights, name, m, n)
        if method is Method.LORA:
            A = r.f32(rank * n).reshape(rank, n)
            B = r.f32(m * rank).reshape(m, rank)
            layers.append(ad.LoraLayer(W0, A, B, float(alpha), name=name))
        elif method is Method.HEAD_ONLY:
            layers.append(ad.FrozenLinear(W0, name=name))
        else:
            d = r.f32(rank) if _has_d(method) else None
            b = r.f32(m) if _has_b(method) else None
            layers.append(ad.VeraLayer(W0, pool.get(m, n), rank, d, b, name=name, method=method))
    if not r.done():
        raise CorruptionError(f"{len(blob) - r.pos} trailing bytes after last layer")
    return layers, config


def _base_for(base_weights, name: str, m: int, n: int) -> np.ndarray:
    if base_weights is None:
        return np.zeros((m, n), dtype=np.float32)
    if name not in base_weights:
        raise MissingTensorError(f"base weights have no tensor named {name!r}")
    W0 = np.asarray(base_weights[name])
    if W0.shape != (m, n):
        raise ShapeError(f"tensor {name!r} has shape {W0.shape}, checkpoint expects {(m, n)}")
    return W0


def load(path: str | os.PathLike, base_weights: Mapping[str, np.ndarray] | None = None):
    with open(path, "rb") as fh:
        return decode(fh.read(), base_weights)


def inspect(path: str | os.PathLike) -> dict:
    """JSON-ready description: config, sizes, per-layer shapes and vector norms."""
    size = os.path.getsize(path)
    layers, config = load(path)
    described = []
    for layer in layers:
        m, n = layer.shape
        entry = {"name": layer.name, "m": m, "n": n, "trainable_params": ad.trainable_params(layer)}
        for key, arr in ad.trainable_arrays(layer).items():
            entry[f"{key}_norm"] = float(np.linalg.norm(arr.astype(np.float64)))
        described.append(entry)
    return {
        "format": MAGIC.decode(),
        "version": VERSION,
        "config": config.to_dict(),
        "file_bytes": size,
        "payload_bytes": payload_bytes(layers),
        "layer_count": len(layers),
        "layers": described,
    }


def export_merged(ckpt_path: str | os.PathLike, base_weights_file: str | os.PathLike,
                  out_file: str | os.PathLike) -> int:
    """Write a VKWT file with every adapted tensor replaced by ``W0 + dW``.

    Other tensors are copied unchanged.  Returns the number of tensors written.
    """
    base = read_tensors(base_weights_file)
    layers, _ = load(ckpt_path, base_weights=base)
    merged = dict(base)
    for layer in layers:
        merged[layer.name] = ad.merge(layer)
    write_tensors(out_file, merged)
    return len(merged)
