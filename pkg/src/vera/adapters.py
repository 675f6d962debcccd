"""Adapted linear layers: VeRA, its single-vector ablations, and LoRA.

A VeRA layer computes ``h = W0 x + b * (B_r (d * (A_r x)))`` where ``A`` and
``B`` are frozen random matrices shared by every adapted layer of the same
``(m, n)`` shape and only the vectors ``d`` (length r) and ``b`` (length m)
are trained.  ``A_r`` / ``B_r`` are the first ``r`` rows / columns of the
pair generated at ``r_max``.

All forward and backward functions accept inputs with leading batch axes
(``x`` of shape ``(..., n)``); parameter gradients are summed over them.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import matcore as mc
from .prng import FillOrder, InitScheme, init_matrix, make_stream, splitmix64


class Method(enum.IntEnum):
    VERA = 0
    LORA = 1
    ONLY_D = 2
    ONLY_B = 3
    HEAD_ONLY = 4

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> Method:
        key = text.strip().lower().replace("-", "_")
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown method {text!r}") from None


VERA_FAMILY = (Method.VERA, Method.ONLY_D, Method.ONLY_B)


@dataclass(frozen=True)
class AdapterConfig:
    """Everything needed to rebuild a model's adapters from scratch.

    ``r_max`` is the rank the shared matrices are generated at (defaults to
    ``rank``); ``lora_alpha`` defaults to ``rank`` so the LoRA scale is 1.
    ``d_init`` is rounded to float32, the precision it is stored at.
    """

    method: Method = Method.VERA
    rank: int = 8
    init_scheme: InitScheme = field(default_factory=InitScheme.kaiming_uniform)
    d_init: float = 0.1
    lora_alpha: float | None = None
    master_seed: int = 0
    r_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.r_max is None:
            object.__setattr__(self, "r_max", self.rank)
        if self.rank > self.r_max:
            raise ValueError(f"rank {self.rank} exceeds r_max {self.r_max}")
        if self.lora_alpha is None:
            object.__setattr__(self, "lora_alpha", float(self.rank))
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        object.__setattr__(self, "d_init", float(np.float32(self.d_init)))

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.rank

    def to_dict(self) -> dict:
        return {
            "method": self.method.label,
            "rank": self.rank,
            "r_max": self.r_max,
            "init_scheme": self.init_scheme.label(),
            "d_init": self.d_init,
            "lora_alpha": self.lora_alpha,
            "master_seed": self.master_seed,
        }


# --- shared frozen matrices -----------------------------------------------------

def shape_stream_key(m: int, n: int) -> int:
    return splitmix64(m * 2**32 + n)


@dataclass(frozen=True, eq=False)
class SharedMatrices:
    m: int
    n: int
    r_max: int
    A: np.ndarray  # r_max x n
    B: np.ndarray  # m x r_max
    scheme: InitScheme
    master_seed: int
    stream_key: int

    @property
    def shape_key(self) -> tuple[int, int]:
        return (self.m, self.n)

    def A_r(self, r: int) -> np.ndarray:
        return self.A[:r]

    def B_r(self, r: int) -> np.ndarray:
        return self.B[:, :r]


def build_shared(shape_key: tuple[int, int], r_max: int, scheme: InitScheme,
                 master_seed: int) -> SharedMatrices:
    """Generate the frozen pair for one layer shape: A row-major, then B column-major
    from the same continued stream."""
    m, n = (int(v) for v in shape_key)
    r_max = int(r_max)
    if m < 1 or n < 1 or r_max < 1:
        raise ValueError(f"m, n, r_max must be >= 1, got {m}, {n}, {r_max}")
    key = shape_stream_key(m, n)
    stream = make_stream(master_seed, key)
    A = init_matrix(stream, r_max, n, scheme, fan_in=n, fill_order=FillOrder.ROW_MAJOR)
    B = init_matrix(stream, m, r_max, scheme, fan_in=r_max, fill_order=FillOrder.COL_MAJOR)
    A.flags.writeable = False
    B.flags.writeable = False
    return SharedMatrices(m, n, r_max, A, B, scheme, master_seed, key)


class SharedPool:
    """One SharedMatrices per distinct (m, n), built lazily."""

    def __init__(self, r_max: int, scheme: InitScheme, master_seed: int):
        self.r_max = r_max
        self.scheme = scheme
        self.master_seed = master_seed
        self._by_shape: dict[tuple[int, int], SharedMatrices] = {}

    @classmethod
    def for_config(cls, config: AdapterConfig) -> SharedPool:
        return cls(config.r_max, config.init_scheme, config.master_seed)

    def get(self, m: int, n: int) -> SharedMatrices:
        key = (m, n)
        if key not in self._by_shape:
            self._by_shape[key] = build_shared(key, self.r_max, self.scheme, self.master_seed)
        return self._by_shape[key]

    def clear(self) -> None:
        self._by_shape.clear()

    def __len__(self) -> int:
        return len(self._by_shape)


# --- layers ---------------------------------------------------------------------

@dataclass(eq=False)
class FrozenLinear:
    """Unadapted projection (the head-only baseline's q/v)."""

    W0: np.ndarray
    name: str = ""
    method: Method = Method.HEAD_ONLY

    @property
    def shape(self) -> tuple[int, int]:
        return self.W0.shape


@dataclass(eq=False)
class VeraLayer:
    """Frozen ``W0`` plus trainable scaling vectors over a shared random pair.

    ``method`` selects full VeRA (``d`` and ``b``), ``ONLY_D`` (``b`` is None)
    or ``ONLY_B`` (``d`` is None).
    """

    W0: np.ndarray
    shared: SharedMatrices
    r: int
    d: np.ndarray | None
    b: np.ndarray | None
    name: str = ""
    method: Method = Method.VERA

    def __post_init__(self):
        m, n = self.W0.shape
        if (m, n) != self.shared.shape_key:
            raise mc.ShapeError(f"W0 {self.W0.shape} does not match shared pair {self.shared.shape_key}")
        if not 1 <= self.r <= self.shared.r_max:
            raise ValueError(f"rank {self.r} outside [1, r_max={self.shared.r_max}]")
        if self.method not in VERA_FAMILY:
            raise ValueError(f"VeraLayer cannot carry method {self.method.label}")
        if (self.d is None) != (self.method is Method.ONLY_B):
            raise ValueError(f"{self.method.label} layer has inconsistent d")
        if (self.b is None) != (self.method is Method.ONLY_D):
            raise ValueError(f"{self.method.label} layer has inconsistent b")
        if self.d is not None and self.d.shape != (self.r,):
            raise mc.ShapeError(f"d has shape {self.d.shape}, expected ({self.r},)")
        if self.b is not None and self.b.shape != (m,):
            raise mc.ShapeError(f"b has shape {self.b.shape}, expected ({m},)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.W0.shape

    @property
    def A_r(self) -> np.ndarray:
        return self.shared.A_r(self.r)

    @property
    def B_r(self) -> np.ndarray:
        return self.shared.B_r(self.r)


@dataclass(eq=False)
class LoraLayer:
    W0: np.ndarray
    A: np.ndarray  # r x n
    B: np.ndarray  # m x r
    alpha: float
    name: str = ""
    method: Method = Method.LORA

    def __post_init__(self):
        m, n = self.W0.shape
        r = self.A.shape[0]
        if self.A.shape != (r, n) or self.B.shape != (m, r) or r < 1:
            raise mc.ShapeError(f"LoRA shapes W0 {self.W0.shape}, A {self.A.shape}, B {self.B.shape}")

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    @property
    def shape(self) -> tuple[int, int]:
        return self.W0.shape


Layer = Union[VeraLayer, LoraLayer, FrozenLinear]


def name_key(name: str) -> int:
    """Stable 64-bit stream key for a tensor name."""
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


def make_vera_layer(W0: np.ndarray, shared: SharedMatrices, r: int, d_init: float = 0.1,
                    name: str = "", method: Method = Method.VERA) -> VeraLayer:
    """Fresh VeRA-family layer: ``b = 0``; ``d = d_init`` (VeRA) or ``d = 0`` (ONLY_D)."""
    dtype = W0.dtype
    m = W0.shape[0]
    d = b = None
    if method is Method.VERA:
        d = np.full(r, d_init, dtype=dtype)
        b = np.zeros(m, dtype=dtype)
    elif method is Method.ONLY_D:
        d = np.zeros(r, dtype=dtype)
    elif method is Method.ONLY_B:
        b = np.zeros(m, dtype=dtype)
    else:
        raise ValueError(f"not a VeRA-family method: {method!r}")
    return VeraLayer(W0, shared, r, d, b, name=name, method=method)


def make_lora_layer(W0: np.ndarray, r: int, scheme: InitScheme, master_seed: int,
                    name: str = "", alpha: float | None = None) -> LoraLayer:
    """Fresh LoRA layer: ``A`` drawn from a stream keyed by the layer name, ``B = 0``."""
    m, n = W0.shape
    stream = make_stream(master_seed, name_key(name))
    A = init_matrix(stream, r, n, scheme, fan_in=n).astype(W0.dtype)
    B = np.zeros((m, r), dtype=W0.dtype)
    return LoraLayer(W0, A, B, float(r) if alpha is None else float(alpha), name=name)


def build_layer(config: AdapterConfig, W0: np.ndarray, name: str, pool: SharedPool | None = None) -> Layer:
    """Wrap ``W0`` according to ``config`` (sharing matrices through ``pool``)."""
    if config.method is Method.HEAD_ONLY:
        return FrozenLinear(W0, name=name)
    if config.method is Method.LORA:
        return make_lora_layer(W0, config.rank, config.init_scheme, config.master_seed,
                               name=name, alpha=config.lora_alpha)
    if pool is None:
        pool = SharedPool.for_config(config)
    shared = pool.get(*W0.shape)
    return make_vera_layer(W0, shared, config.rank, config.d_init, name=name, method=config.method)


# --- forward / backward ---------------------------------------------------------

@dataclass
class VeraCache:
    u: np.ndarray  # A_r x
    w: np.ndarray  # B_r (d * u)
    layer_id: int


@dataclass
class VeraGrads:
    d: np.ndarray | None
    b: np.ndarray | None
    x: np.ndarray


@dataclass
class LoraCache:
    Ax: np.ndarray
    layer_id: int


@dataclass
class LoraGrads:
    A: np.ndarray
    B: np.ndarray
    x: np.ndarray


def _sum_batch(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def _check_cache(layer, cache) -> None:
    if cache.layer_id != id(layer):
        raise ValueError("cache was produced by a different layer")


def vera_forward(layer: VeraLayer, x: np.ndarray) -> tuple[np.ndarray, VeraCache]:
    """Forward pass for any VeRA-family layer; missing ``d``/``b`` act as identity scalings."""
    if x.shape[-1] != layer.W0.shape[1]:
        raise mc.ShapeError(f"input length {x.shape[-1]} != n={layer.W0.shape[1]}")
    u = mc.matvec(layer.A_r, x)
    v = u if layer.d is None else mc.hadamard(layer.d, u)
    w = mc.matvec(layer.B_r, v)
    update = w if layer.b is None else mc.hadamard(layer.b, w)
    h = mc.matvec(layer.W0, x) + update
    return h, VeraCache(u, w, id(layer))


def vera_backward(layer: VeraLayer, x: np.ndarray, g: np.ndarray, cache: VeraCache) -> VeraGrads:
    if g.shape[-1] != layer.W0.shape[0] or g.shape[:-1] != x.shape[:-1]:
        raise mc.ShapeError(f"upstream gradient {g.shape} does not match output for input {x.shape}")
    _check_cache(layer, cache)
    gb = g if layer.b is None else mc.hadamard(layer.b, g)
    t = mc.matvec_t(layer.B_r, gb)  # (..., r)
    grad_b = None if layer.b is None else _sum_batch(mc.hadamard(g, cache.w))
    grad_d = None if layer.d is None else _sum_batch(mc.hadamard(t, cache.u))
    dt = t if layer.d is None else mc.hadamard(layer.d, t)
    grad_x = mc.matvec_t(layer.W0, g) + mc.matvec_t(layer.A_r, dt)
    return VeraGrads(grad_d, grad_b, grad_x)


def ablation_forward(layer: VeraLayer, x: np.ndarray, variant: Method) -> tuple[np.ndarray, VeraCache]:
    if variant not in (Method.ONLY_D, Method.ONLY_B):
        raise ValueError(f"not an ablation variant: {variant!r}")
    if layer.method is not variant:
        raise ValueError(f"layer is {layer.method.label}, asked for {variant.label}")
    return vera_forward(layer, x)


def lora_forward(layer: LoraLayer, x: np.ndarray) -> tuple[np.ndarray, LoraCache]:
    if x.shape[-1] != layer.W0.shape[1]:
        raise mc.ShapeError(f"input length {x.shape[-1]} != n={layer.W0.shape[1]}")
    Ax = mc.matvec(layer.A, x)
    h = mc.matvec(layer.W0, x) + layer.scale * mc.matvec(layer.B, Ax)
    return h, LoraCache(Ax, id(layer))


def lora_backward(layer: LoraLayer, x: np.ndarray, g: np.ndarray, cache: LoraCache) -> LoraGrads:
    if g.shape[-1] != layer.W0.shape[0] or g.shape[:-1] != x.shape[:-1]:
        raise mc.ShapeError(f"upstream gradient {g.shape} does not match output for input {x.shape}")
    _check_cache(layer, cache)
    s = layer.scale
    m, n = layer.W0.shape
    r = layer.r
    Btg = mc.matvec_t(layer.B, g)
    grad_B = mc.outer_accumulate(np.zeros((m, r)), g, cache.Ax, s)
    grad_A = mc.outer_accumulate(np.zeros((r, n)), Btg, x, s)
    grad_x = mc.matvec_t(layer.W0, g) + s * mc.matvec_t(layer.A, Btg)
    return LoraGrads(grad_A, grad_B, grad_x)


def forward(layer: Layer, x: np.ndarray):
    if isinstance(layer, VeraLayer):
        return vera_forward(layer, x)
    if isinstance(layer, LoraLayer):
        return lora_forward(layer, x)
    return mc.matvec(layer.W0, x), None


def backward(layer: Layer, x: np.ndarray, g: np.ndarray, cache):
    """Dispatching backward; returns ``(param_grads, grad_x)`` with grads keyed like
    :func:`trainable_arrays`."""
    if isinstance(layer, VeraLayer):
        gr = vera_backward(layer, x, g, cache)
        grads = {}
        if gr.d is not None:
            grads["d"] = gr.d
        if gr.b is not None:
            grads["b"] = gr.b
        return grads, gr.x
    if isinstance(layer, LoraLayer):
        gr = lora_backward(layer, x, g, cache)
        return {"A": gr.A, "B": gr.B}, gr.x
    return {}, mc.matvec_t(layer.W0, g)


# --- merging and accounting -----------------------------------------------------

def delta_weight(layer: Layer) -> np.ndarray:
    """``W - W0`` in float64."""
    m, n = layer.shape
    if isinstance(layer, VeraLayer):
        A = np.asarray(layer.A_r, dtype=np.float64)
        if layer.d is not None:
            A = layer.d.astype(np.float64)[:, None] * A
        dW = np.asarray(layer.B_r, dtype=np.float64) @ A
        if layer.b is not None:
            dW = layer.b.astype(np.float64)[:, None] * dW
        return dW
    if isinstance(layer, LoraLayer):
        return layer.scale * (layer.B.astype(np.float64) @ layer.A.astype(np.float64))
    return np.zeros((m, n))


def merge(layer: Layer) -> np.ndarray:
    """Fold the adapter into a plain weight matrix with ``W0``'s dtype; the layer is untouched."""
    W = layer.W0.astype(np.float64) + delta_weight(layer)
    return W.astype(layer.W0.dtype)


def trainable_arrays(layer: Layer) -> dict[str, np.ndarray]:
    """The layer's trainable arrays by name (the live objects, not copies)."""
    if isinstance(layer, VeraLayer):
        out = {}
        if layer.d is not None:
            out["d"] = layer.d
        if layer.b is not None:
            out["b"] = layer.b
        return out
    if isinstance(layer, LoraLayer):
        return {"A": layer.A, "B": layer.B}
    return {}


def trainable_params(layer: Layer) -> int:
    m, n = layer.shape
    if isinstance(layer, VeraLayer):
        return {Method.VERA: m + layer.r, Method.ONLY_D: layer.r, Method.ONLY_B: m}[layer.method]
    if isinstance(layer, LoraLayer):
        return layer.r * (m + n)
    return 0
