"""A tiny attention encoder whose query/value projections carry adapters.

embed (+ optional frozen positional table) -> [multi-head self-attention with
adapted q and v, residual] x blocks -> mean over tokens -> linear head.

Only the adapters and the head are trainable.  Forward and backward are
batched over ``(batch, tokens)``; gradients are written out by hand.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .. import adapters as ad
from .. import matcore as mc
from ..adapters import AdapterConfig, Method
from ..prng import InitScheme, draw_normal, init_matrix, make_stream

ADAPTED_ROLES = ("q", "v")


@dataclass
class Block:
    q: ad.Layer
    k: np.ndarray
    v: ad.Layer
    o: np.ndarray


@dataclass
class ToyModel:
    embed: np.ndarray
    blocks: list[Block]
    head: np.ndarray
    heads: int
    config: AdapterConfig
    pos: np.ndarray | None = None
    base_seed: int = 0
    pool: ad.SharedPool | None = field(default=None, repr=False)

    @property
    def d_model(self) -> int:
        return self.embed.shape[1]

    @property
    def vocab(self) -> int:
        return self.embed.shape[0]

    @property
    def classes(self) -> int:
        return self.head.shape[0]

    @property
    def dtype(self):
        return self.embed.dtype

    def adapted_layers(self) -> list[ad.Layer]:
        return [layer for blk in self.blocks for layer in (blk.q, blk.v)]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live trainable arrays keyed ``head`` or ``<layer>.<array>``."""
        params = {"head": self.head}
        for layer in self.adapted_layers():
            for key, arr in ad.trainable_arrays(layer).items():
                params[f"{layer.name}.{key}"] = arr
        return params

    def param_groups(self) -> dict[str, list[str]]:
        names = list(self.parameters())
        return {"head": ["head"], "adapter": [n for n in names if n != "head"]}

    def frozen_tensors(self) -> dict[str, np.ndarray]:
        """Every non-trainable tensor by name (the base weights of the model)."""
        out = {"embed": self.embed}
        if self.pos is not None:
            out["pos"] = self.pos
        for i, blk in enumerate(self.blocks):
            out[f"block{i}.q"] = blk.q.W0
            out[f"block{i}.k"] = blk.k
            out[f"block{i}.v"] = blk.v.W0
            out[f"block{i}.o"] = blk.o
        return out

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.frozen_tensors().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        for layer in self.adapted_layers():
            if isinstance(layer, ad.VeraLayer):
                h.update(layer.shared.A.tobytes())
                h.update(layer.shared.B.tobytes())
        return h.hexdigest()

    def adapter_trainable_count(self) -> int:
        return sum(ad.trainable_params(layer) for layer in self.adapted_layers())


def _stream_for(seed: int, name: str):
    return make_stream(seed, ad.name_key(name))


def _normal_matrix(seed: int, name: str, rows: int, cols: int, std: float) -> np.ndarray:
    stream = _stream_for(seed, name)
    return np.array([draw_normal(stream, 0.0, std) for _ in range(rows * cols)]).reshape(rows, cols)


def _uniform_matrix(seed: int, name: str, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(cols)
    return init_matrix(_stream_for(seed, name), rows, cols, InitScheme.uniform(-bound, bound), fan_in=cols)


def build_model(config: AdapterConfig, *, d_model: int = 32, heads: int = 2, vocab: int = 2,
                classes: int = 2, blocks: int = 1, max_len: int | None = None,
                base_seed: int = 0, dtype=np.float32) -> ToyModel:
    """Generate frozen weights from ``base_seed`` and wrap q/v per ``config``.

    ``max_len`` adds a frozen positional table; without it the model is
    invariant to token order.
    """
    if d_model % heads:
        raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
    embed = _normal_matrix(base_seed, "embed", vocab, d_model, 1.0).astype(dtype)
    pos = None
    if max_len:
        pos = _normal_matrix(base_seed, "pos", max_len, d_model, 1.0).astype(dtype)
    pool = ad.SharedPool.for_config(config)
    blks = []
    for i in range(blocks):
        w = {role: _uniform_matrix(base_seed, f"block{i}.{role}", d_model, d_model).astype(dtype)
             for role in ("q", "k", "v", "o")}
        blks.append(Block(
            q=ad.build_layer(config, w["q"], f"block{i}.q", pool),
            k=w["k"],
            v=ad.build_layer(config, w["v"], f"block{i}.v", pool),
            o=w["o"],
        ))
    head = _uniform_matrix(base_seed, "head", classes, d_model).astype(dtype)
    return ToyModel(embed, blks, head, heads, config, pos=pos, base_seed=base_seed, pool=pool)


# --- forward / backward ---------------------------------------------------------------

@dataclass
class BlockCache:
    x: np.ndarray
    q_cache: object
    v_cache: object
    Q: np.ndarray  # (B, H, T, dh)
    K: np.ndarray
    V: np.ndarray
    P: np.ndarray  # (B, H, T, T)


@dataclass
class ModelCache:
    tokens: np.ndarray
    blocks: list[BlockCache]
    pooled: np.ndarray
    logits: np.ndarray
    model_id: int


def _split(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def model_forward(model: ToyModel, tokens) -> tuple[np.ndarray, ModelCache]:
    """Logits ``(batch, classes)`` for integer tokens ``(batch, seq_len)`` (or one sequence)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.vocab):
        raise ValueError(f"token id outside vocabulary [0, {model.vocab})")
    T = tokens.shape[1]
    x = model.embed[tokens].astype(np.float64)
    if model.pos is not None:
        if T > model.pos.shape[0]:
            raise ValueError(f"sequence length {T} exceeds positional table {model.pos.shape[0]}")
        x = x + model.pos[:T]
    H = model.heads
    scale = 1.0 / math.sqrt(model.d_model // H)
    caches = []
    for blk in model.blocks:
        q_out, q_cache = ad.forward(blk.q, x)
        v_out, v_cache = ad.forward(blk.v, x)
        k_out = mc.matvec(blk.k, x)
        Q, K, V = _split(q_out, H), _split(k_out, H), _split(v_out, H)
        P = softmax(scale * (Q @ K.transpose(0, 1, 3, 2)))
        attn = _merge(P @ V)
        caches.append(BlockCache(x, q_cache, v_cache, Q, K, V, P))
        x = x + mc.matvec(blk.o, attn)
    pooled = x.mean(axis=1)
    logits = mc.matvec(model.head, pooled)
    return logits, ModelCache(tokens, caches, pooled, logits, id(model))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def model_backward(model: ToyModel, cache: ModelCache, labels=None,
                   dlogits: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy (or of ``sum(dlogits * logits)``) for every
    trainable array, keyed as in :meth:`ToyModel.parameters`."""
    if cache.model_id != id(model):
        raise ValueError("cache was produced by a different model")
    if dlogits is None:
        if labels is None:
            raise ValueError("need labels or dlogits")
        _, dlogits = cross_entropy(cache.logits, labels)
    grads = {"head": mc.outer_accumulate(np.zeros(model.head.shape), dlogits, cache.pooled)}
    dpooled = mc.matvec_t(model.head, dlogits)
    T = cache.tokens.shape[1]
    dx = np.repeat(dpooled[:, None, :] / T, T, axis=1)
    H = model.heads
    scale = 1.0 / math.sqrt(model.d_model // H)
    for blk, bc in zip(reversed(model.blocks), reversed(cache.blocks)):
        dattn = mc.matvec_t(blk.o, dx)
        dOh = _split(dattn, H)
        dP = dOh @ bc.V.transpose(0, 1, 3, 2)
        dV = bc.P.transpose(0, 1, 3, 2) @ dOh
        dS = bc.P * (dP - np.sum(dP * bc.P, axis=-1, keepdims=True)) * scale
        dQ = dS @ bc.K
        dK = dS.transpose(0, 1, 3, 2) @ bc.Q
        q_grads, dx_q = ad.backward(blk.q, bc.x, _merge(dQ), bc.q_cache)
        v_grads, dx_v = ad.backward(blk.v, bc.x, _merge(dV), bc.v_cache)
        dx = dx + dx_q + dx_v + mc.matvec_t(blk.k, _merge(dK))
        for layer, lg in ((blk.q, q_grads), (blk.v, v_grads)):
            for key, g in lg.items():
                grads[f"{layer.name}.{key}"] = g
    return grads


def loss_and_grads(model: ToyModel, tokens, labels) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    logits, cache = model_forward(model, tokens)
    loss, dlogits = cross_entropy(logits, labels)
    return loss, model_backward(model, cache, dlogits=dlogits), logits


def accuracy(model: ToyModel, tokens, labels) -> float:
    logits, _ = model_forward(model, tokens)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
