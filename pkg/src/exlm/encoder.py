"""A small pre-norm transformer encoder with 2D rotary attention, in NumPy.

Forward passes return a cache that :func:`backward` consumes; there is no
autograd. Everything runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from ._io import atomic_write

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    vocab_size: int = 200
    rope_base: float = 10000.0
    attn_dropout: float = 0.0
    ffn_dropout: float = 0.0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.head_dim % 4:
            raise ValueError("head_dim must be divisible by 4 for the axial 2D rotary split")
        if self.rope_base <= 0:
            raise ValueError("rope_base must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- rotary


def rope_angles(pos2d: np.ndarray, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Rotation angle of every coordinate pair, shape (T, head_dim // 2).

    Pairs ``(2j, 2j+1)`` in the first half of the head are turned by the
    sequence position, pairs in the second half by the clone index, each
    axis with the usual ``base ** (-2t / half)`` frequency ladder.
    """
    if head_dim % 4:
        raise ValueError("head_dim must be divisible by 4")
    pos2d = np.atleast_2d(np.asarray(pos2d, dtype=np.float64))
    half = head_dim // 2
    freqs = base ** (-2.0 * np.arange(half // 2) / half)
    return np.concatenate(
        [pos2d[:, :1] * freqs[None, :], pos2d[:, 1:2] * freqs[None, :]], axis=1
    )


def apply_rotary(x: np.ndarray, angles: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Rotate consecutive pairs of the last axis of ``x`` (..., T, head_dim)."""
    cos, sin = np.cos(angles), np.sin(angles)
    if inverse:
        sin = -sin
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope2d(vector: np.ndarray, pos: tuple[int, int], base: float = 10000.0) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    return apply_rotary(vector[None, :], rope_angles([pos], vector.size, base))[0]


# ---------------------------------------------------------------- weights


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f, V = cfg.model_dim, cfg.ffn_dim, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, d)}
    for l in range(cfg.layers):
        p = f"layers.{l}."
        shapes.update(
            {
                p + "ln1_g": (d,),
                p + "ln1_b": (d,),
                p + "wq": (d, d),
                p + "bq": (d,),
                p + "wk": (d, d),
                p + "bk": (d,),
                p + "wv": (d, d),
                p + "bv": (d,),
                p + "wo": (d, d),
                p + "bo": (d,),
                p + "ln2_g": (d,),
                p + "ln2_b": (d,),
                p + "w1": (d, f),
                p + "b1": (f,),
                p + "w2": (f, d),
                p + "b2": (d,),
            }
        )
    shapes.update(
        {
            "lnf_g": (d,),
            "lnf_b": (d,),
            "W_Q": (d, d),
            "W_K": (d, d),
            "W_P": (V, d),
            "bos_state": (d,),
            "eos_state": (d,),
        }
    )
    return shapes


_BIASES = {"bq", "bk", "bv", "bo", "b1", "b2"}


def init_weights(cfg: EncoderConfig, seed: int = 0, std: float = 0.02) -> dict[str, np.ndarray]:
    """Normal(0, std) matrices and BOS/EOS vectors, zero biases, unit LN scales."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            weights[name] = np.ones(shape)
        elif leaf.endswith("_b") or leaf in _BIASES:
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.normal(0.0, std, size=shape)
    return weights


def zeros_like_weights(weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in weights.items()}


# ---------------------------------------------------------------- checkpoints


def save_tensors(prefix, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``<prefix>.json`` (manifest) and ``<prefix>.bin`` (little-endian f64)."""
    prefix = Path(prefix)
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    bin_path = prefix.with_name(prefix.name + ".bin")
    manifest = {"data": bin_path.name, "tensors": entries, "meta": meta or {}}
    atomic_write(bin_path, b"".join(chunks))
    atomic_write(
        prefix.with_name(prefix.name + ".json"),
        (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode(),
    )


def load_tensors(prefix) -> tuple[dict[str, np.ndarray], dict]:
    prefix = Path(prefix)
    manifest_path = prefix.with_name(prefix.name + ".json")
    manifest = json.loads(manifest_path.read_text())
    blob = (manifest_path.parent / manifest["data"]).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return tensors, manifest["meta"]


# ---------------------------------------------------------------- layers


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _SQRT1_2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax(x, axis=-1):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _dropout_mask(rng, rate, shape):
    if rng is None or rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(
    ids: np.ndarray,
    pos2d: np.ndarray,
    weights: dict[str, np.ndarray],
    cfg: EncoderConfig,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Encode one sequence; returns hidden states (T, d) and the backward cache.

    Dropout is applied only when ``rng`` is given and the configured rate is
    positive.
    """
    ids = np.asarray(ids, dtype=np.int64)
    T = ids.size
    h, hd = cfg.heads, cfg.head_dim
    angles = rope_angles(pos2d, hd, cfg.rope_base)
    x = weights["tok_emb"][ids]
    layer_caches = []
    for l in range(cfg.layers):
        p = f"layers.{l}."
        a, ln1 = _layer_norm(x, weights[p + "ln1_g"], weights[p + "ln1_b"])
        q = (a @ weights[p + "wq"] + weights[p + "bq"]).reshape(T, h, hd).transpose(1, 0, 2)
        k = (a @ weights[p + "wk"] + weights[p + "bk"]).reshape(T, h, hd).transpose(1, 0, 2)
        v = (a @ weights[p + "wv"] + weights[p + "bv"]).reshape(T, h, hd).transpose(1, 0, 2)
        qr = apply_rotary(q, angles)
        kr = apply_rotary(k, angles)
        A = softmax(qr @ kr.transpose(0, 2, 1) / np.sqrt(hd))
        attn_mask = _dropout_mask(rng, cfg.attn_dropout, A.shape)
        Ad = A if attn_mask is None else A * attn_mask
        o = (Ad @ v).transpose(1, 0, 2).reshape(T, -1)
        x1 = x + o @ weights[p + "wo"] + weights[p + "bo"]
        c, ln2 = _layer_norm(x1, weights[p + "ln2_g"], weights[p + "ln2_b"])
        pre = c @ weights[p + "w1"] + weights[p + "b1"]
        act = gelu(pre)
        ffn = act @ weights[p + "w2"] + weights[p + "b2"]
        ffn_mask = _dropout_mask(rng, cfg.ffn_dropout, ffn.shape)
        x2 = x1 + (ffn if ffn_mask is None else ffn * ffn_mask)
        if not np.all(np.isfinite(x2)):
            raise FloatingPointError(f"numeric overflow at layer {l}")
        layer_caches.append(
            dict(a=a, ln1=ln1, qr=qr, kr=kr, v=v, A=A, Ad=Ad, attn_mask=attn_mask, o=o,
                 c=c, ln2=ln2, pre=pre, act=act, ffn_mask=ffn_mask)
        )
        x = x2
    H, lnf = _layer_norm(x, weights["lnf_g"], weights["lnf_b"])
    return H, dict(ids=ids, angles=angles, layers=layer_caches, lnf=lnf, T=T)


def backward(
    dH: np.ndarray,
    cache: dict,
    weights: dict[str, np.ndarray],
    cfg: EncoderConfig,
    grads: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Accumulate encoder weight gradients for upstream ``dH`` into ``grads``."""
    if grads is None:
        grads = zeros_like_weights(weights)
    T = cache["T"]
    h, hd = cfg.heads, cfg.head_dim
    angles = cache["angles"]
    dx, dg, db = _layer_norm_back(dH, weights["lnf_g"], cache["lnf"])
    grads["lnf_g"] += dg
    grads["lnf_b"] += db
    for l in range(cfg.layers - 1, -1, -1):
        p = f"layers.{l}."
        lc = cache["layers"][l]
        # FFN branch
        dffn = dx if lc["ffn_mask"] is None else dx * lc["ffn_mask"]
        grads[p + "w2"] += lc["act"].T @ dffn
        grads[p + "b2"] += dffn.sum(axis=0)
        dpre = (dffn @ weights[p + "w2"].T) * gelu_grad(lc["pre"])
        grads[p + "w1"] += lc["c"].T @ dpre
        grads[p + "b1"] += dpre.sum(axis=0)
        dc = dpre @ weights[p + "w1"].T
        dc, dg, db = _layer_norm_back(dc, weights[p + "ln2_g"], lc["ln2"])
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        dx1 = dx + dc
        # attention branch
        grads[p + "wo"] += lc["o"].T @ dx1
        grads[p + "bo"] += dx1.sum(axis=0)
        do = (dx1 @ weights[p + "wo"].T).reshape(T, h, hd).transpose(1, 0, 2)
        dAd = do @ lc["v"].transpose(0, 2, 1)
        dv = lc["Ad"].transpose(0, 2, 1) @ do
        dA = dAd if lc["attn_mask"] is None else dAd * lc["attn_mask"]
        A = lc["A"]
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / np.sqrt(hd)
        dqr = dS @ lc["kr"]
        dkr = dS.transpose(0, 2, 1) @ lc["qr"]
        dq = apply_rotary(dqr, angles, inverse=True).transpose(1, 0, 2).reshape(T, -1)
        dk = apply_rotary(dkr, angles, inverse=True).transpose(1, 0, 2).reshape(T, -1)
        dv = dv.transpose(1, 0, 2).reshape(T, -1)
        a = lc["a"]
        da = np.zeros_like(a)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            grads[p + "w" + name] += a.T @ dproj
            grads[p + "b" + name] += dproj.sum(axis=0)
            da += dproj @ weights[p + "w" + name].T
        da, dg, db = _layer_norm_back(da, weights[p + "ln1_g"], lc["ln1"])
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        dx = dx1 + da
    np.add.at(grads["tok_emb"], cache["ids"], dx)
    return grads
