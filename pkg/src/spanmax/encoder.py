"""Small sequence encoders with hand-written reverse-mode gradients.

Maps token id sequences to contextual hidden states H of shape (n, d).  Two
architectures share one contract: a pre-norm transformer with learned
positional embeddings (default) and a bidirectional tanh recurrent network.
All arithmetic is float64 so gradients can be checked sharply against central
finite differences.

Parameters live in a flat name -> ndarray dict (see ``init_params`` for the
naming scheme); gradients come back in a dict with identical keys and shapes.
Batched forward pads with PAD and masks attention so padded positions carry
exactly zero weight and contribute exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
MASK_BIAS = -1e30

ARCH_TRANSFORMER = "transformer"
ARCH_RECURRENT = "bi-recurrent"


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 2
    ffn_width: int = 128
    max_len: int = 256
    arch: str = ARCH_TRANSFORMER

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d", "layers", "heads", "ffn_width", "max_len"):
            if getattr(self, name) < 1:
                raise EncoderError(f"{name} must be >= 1")
        if self.arch not in (ARCH_TRANSFORMER, ARCH_RECURRENT):
            raise EncoderError(f"unknown arch {self.arch!r}")
        if self.arch == ARCH_TRANSFORMER and self.d % self.heads != 0:
            raise EncoderError(f"d={self.d} not divisible by heads={self.heads}")
        if self.arch == ARCH_RECURRENT and self.d % 2 != 0:
            raise EncoderError(f"bi-recurrent arch needs even d, got {self.d}")


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]


@dataclass
class BatchEncoderOutput:
    """Hidden states for a padded batch plus everything the backward pass needs."""

    H: np.ndarray                # (B, T, d)
    ids: np.ndarray              # (B, T) int64, PAD-filled past each length
    mask: np.ndarray             # (B, T) bool, True at valid positions
    lengths: tuple[int, ...]
    cache: dict

    def hidden(self, index: int) -> np.ndarray:
        """Hidden states of sequence ``index`` without padding rows, shape (n, d)."""
        return self.H[index, : self.lengths[index]]


@dataclass
class EncoderOutput:
    """Hidden states for a single sequence, shape (n, d)."""

    H: np.ndarray
    batch: BatchEncoderOutput


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Deterministic parameter initialization.

    Embeddings are scaled-uniform in [-1/sqrt(d), 1/sqrt(d)); linear maps are
    Glorot-uniform; biases start at zero and layer norms at identity.  Draw
    order is fixed, so identical (config, seed) pairs give bitwise-identical
    tensors.
    """
    rng = np.random.default_rng(seed)
    d, ffn = config.d, config.ffn_width
    scale = 1.0 / np.sqrt(d)
    t: dict[str, np.ndarray] = {}
    t["tok_emb"] = rng.uniform(-scale, scale, size=(config.vocab_size, d))
    t["pos_emb"] = rng.uniform(-scale, scale, size=(config.max_len, d))
    for i in range(config.layers):
        p = f"l{i}."
        t[p + "ln1.g"] = np.ones(d)
        t[p + "ln1.b"] = np.zeros(d)
        if config.arch == ARCH_TRANSFORMER:
            for name in ("wq", "wk", "wv", "wo"):
                t[p + f"attn.{name}"] = _glorot(rng, d, d)
            for name in ("bq", "bk", "bv", "bo"):
                t[p + f"attn.{name}"] = np.zeros(d)
        else:
            half = d // 2
            t[p + "rnn.wxf"] = _glorot(rng, d, half)
            t[p + "rnn.whf"] = _glorot(rng, half, half)
            t[p + "rnn.bf"] = np.zeros(half)
            t[p + "rnn.wxb"] = _glorot(rng, d, half)
            t[p + "rnn.whb"] = _glorot(rng, half, half)
            t[p + "rnn.bb"] = np.zeros(half)
            t[p + "rnn.wp"] = _glorot(rng, d, d)
            t[p + "rnn.bp"] = np.zeros(d)
        t[p + "ln2.g"] = np.ones(d)
        t[p + "ln2.b"] = np.zeros(d)
        t[p + "ffn.w1"] = _glorot(rng, d, ffn)
        t[p + "ffn.b1"] = np.zeros(ffn)
        t[p + "ffn.w2"] = _glorot(rng, ffn, d)
        t[p + "ffn.b2"] = np.zeros(d)
    t["ln_f.g"] = np.ones(d)
    t["ln_f.b"] = np.zeros(d)
    return EncoderParams(config=config, tensors=t)


# ---------------------------------------------------------------------------
# Primitive layers
# ---------------------------------------------------------------------------

def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, inv = cache
    dxhat = dy * g
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u * _INV_SQRT2))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u * _INV_SQRT2)) + u * np.exp(-0.5 * u * u) * _INV_SQRT2PI


def _softmax_last(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    B, T, d = x.shape
    return x.reshape(B, T, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _embed(ids: np.ndarray, tensors: dict[str, np.ndarray]) -> np.ndarray:
    T = ids.shape[1]
    return tensors["tok_emb"][ids] + tensors["pos_emb"][:T][None, :, :]


def _ffn_forward(x, tensors, prefix, cache):
    f, ln2 = _layernorm(x, tensors[prefix + "ln2.g"], tensors[prefix + "ln2.b"])
    u = f @ tensors[prefix + "ffn.w1"] + tensors[prefix + "ffn.b1"]
    z = _gelu(u)
    out = x + z @ tensors[prefix + "ffn.w2"] + tensors[prefix + "ffn.b2"]
    cache.update(ln2=ln2, f=f, u=u, z=z)
    return out


def _forward_transformer(ids, mask, params: EncoderParams):
    t = params.tensors
    cfg = params.config
    heads = cfg.heads
    scale = 1.0 / np.sqrt(cfg.d // heads)
    x = _embed(ids, t)
    key_bias = np.where(mask[:, None, None, :], 0.0, MASK_BIAS)
    layer_caches = []
    for i in range(cfg.layers):
        p = f"l{i}."
        cache: dict = {}
        a, ln1 = _layernorm(x, t[p + "ln1.g"], t[p + "ln1.b"])
        q = a @ t[p + "attn.wq"] + t[p + "attn.bq"]
        k = a @ t[p + "attn.wk"] + t[p + "attn.bk"]
        v = a @ t[p + "attn.wv"] + t[p + "attn.bv"]
        qh, kh, vh = (_split_heads(m, heads) for m in (q, k, v))
        att = _softmax_last(qh @ kh.transpose(0, 1, 3, 2) * scale + key_bias)
        ctxm = _merge_heads(att @ vh)
        x = x + ctxm @ t[p + "attn.wo"] + t[p + "attn.bo"]
        cache.update(a=a, ln1=ln1, qh=qh, kh=kh, vh=vh, att=att, ctxm=ctxm)
        x = _ffn_forward(x, t, p, cache)
        layer_caches.append(cache)
    H, lnf = _layernorm(x, t["ln_f.g"], t["ln_f.b"])
    return H, {"layers": layer_caches, "lnf": lnf, "scale": scale}


def _forward_recurrent(ids, mask, params: EncoderParams):
    t = params.tensors
    cfg = params.config
    half = cfg.d // 2
    B, T = ids.shape
    m = mask.astype(np.float64)[:, :, None]
    x = _embed(ids, t)
    layer_caches = []
    for i in range(cfg.layers):
        p = f"l{i}."
        cache: dict = {}
        a, ln1 = _layernorm(x, t[p + "ln1.g"], t[p + "ln1.b"])
        pre_f = a @ t[p + "rnn.wxf"] + t[p + "rnn.bf"]
        pre_b = a @ t[p + "rnn.wxb"] + t[p + "rnn.bb"]
        # Mask gating carries the previous state through padded steps, so the
        # valid prefix matches an unpadded run exactly.
        h = np.zeros((B, T + 1, half))
        th_f = np.zeros((B, T, half))
        for s in range(T):
            th = np.tanh(pre_f[:, s] + h[:, s] @ t[p + "rnn.whf"])
            th_f[:, s] = th
            h[:, s + 1] = m[:, s] * th + (1.0 - m[:, s]) * h[:, s]
        g = np.zeros((B, T + 1, half))
        th_b = np.zeros((B, T, half))
        for s in range(T - 1, -1, -1):
            th = np.tanh(pre_b[:, s] + g[:, s + 1] @ t[p + "rnn.whb"])
            th_b[:, s] = th
            g[:, s] = m[:, s] * th + (1.0 - m[:, s]) * g[:, s + 1]
        cat = np.concatenate([h[:, 1:], g[:, :T]], axis=-1)
        x = x + cat @ t[p + "rnn.wp"] + t[p + "rnn.bp"]
        cache.update(a=a, ln1=ln1, th_f=th_f, th_b=th_b, h=h, g=g, cat=cat, m=m)
        x = _ffn_forward(x, t, p, cache)
        layer_caches.append(cache)
    H, lnf = _layernorm(x, t["ln_f.g"], t["ln_f.b"])
    return H, {"layers": layer_caches, "lnf": lnf}


def forward_batch(seqs: Sequence[Sequence[int]], params: EncoderParams) -> BatchEncoderOutput:
    """Encode a batch of id sequences, padding with PAD and masking attention."""
    cfg = params.config
    if not seqs:
        raise EncoderError("empty batch")
    lengths = []
    for idx, seq in enumerate(seqs):
        n = len(seq)
        if n == 0:
            raise EncoderError(f"sequence {idx} is empty")
        if n > cfg.max_len:
            raise EncoderError(f"sequence {idx} has {n} tokens, max_len is {cfg.max_len}")
        lengths.append(n)
    T = max(lengths)
    from .tokenizer import PAD_ID  # local import: avoids a module cycle

    ids = np.full((len(seqs), T), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(seqs):
        arr = np.asarray(seq, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= cfg.vocab_size):
            raise EncoderError(f"sequence {row} has ids outside [0, {cfg.vocab_size})")
        ids[row, : len(seq)] = arr
    mask = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
    if cfg.arch == ARCH_TRANSFORMER:
        H, cache = _forward_transformer(ids, mask, params)
    else:
        H, cache = _forward_recurrent(ids, mask, params)
    return BatchEncoderOutput(H=H, ids=ids, mask=mask, lengths=tuple(lengths), cache=cache)


def forward(ids: Sequence[int], params: EncoderParams) -> EncoderOutput:
    """Encode one sequence; H has shape (n, d) with no padding rows."""
    batch = forward_batch([ids], params)
    return EncoderOutput(H=batch.H[0], batch=batch)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def _ffn_backward(dx, tensors, prefix, cache, grads):
    dz = dx @ tensors[prefix + "ffn.w2"].T
    grads[prefix + "ffn.w2"] = np.einsum("btf,btd->fd", cache["z"], dx)
    grads[prefix + "ffn.b2"] = dx.sum(axis=(0, 1))
    du = dz * _gelu_grad(cache["u"])
    df = du @ tensors[prefix + "ffn.w1"].T
    grads[prefix + "ffn.w1"] = np.einsum("btd,btf->df", cache["f"], du)
    grads[prefix + "ffn.b1"] = du.sum(axis=(0, 1))
    dres, dg2, db2 = _layernorm_backward(df, cache["ln2"], tensors[prefix + "ln2.g"])
    grads[prefix + "ln2.g"] = dg2
    grads[prefix + "ln2.b"] = db2
    return dx + dres


def _backward_transformer(out: BatchEncoderOutput, dH, params: EncoderParams):
    t = params.tensors
    cfg = params.config
    cache = out.cache
    grads: dict[str, np.ndarray] = {}
    dx, dgf, dbf = _layernorm_backward(dH, cache["lnf"], t["ln_f.g"])
    grads["ln_f.g"], grads["ln_f.b"] = dgf, dbf
    scale = cache["scale"]
    for i in range(cfg.layers - 1, -1, -1):
        p = f"l{i}."
        c = cache["layers"][i]
        dx = _ffn_backward(dx, t, p, c, grads)
        dctxm = dx @ t[p + "attn.wo"].T
        grads[p + "attn.wo"] = np.einsum("btd,bte->de", c["ctxm"], dx)
        grads[p + "attn.bo"] = dx.sum(axis=(0, 1))
        dctx = _split_heads(dctxm, cfg.heads)
        datt = dctx @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["att"].transpose(0, 1, 3, 2) @ dctx
        dscores = c["att"] * (datt - (datt * c["att"]).sum(axis=-1, keepdims=True))
        dqh = dscores @ c["kh"] * scale
        dkh = dscores.transpose(0, 1, 3, 2) @ c["qh"] * scale
        dq, dk, dv = (_merge_heads(m) for m in (dqh, dkh, dvh))
        da = dq @ t[p + "attn.wq"].T + dk @ t[p + "attn.wk"].T + dv @ t[p + "attn.wv"].T
        for name, dm in (("wq", dq), ("wk", dk), ("wv", dv)):
            grads[p + f"attn.{name}"] = np.einsum("btd,bte->de", c["a"], dm)
            grads[p + f"attn.b{name[1]}"] = dm.sum(axis=(0, 1))
        dres, dg1, db1 = _layernorm_backward(da, c["ln1"], t[p + "ln1.g"])
        grads[p + "ln1.g"], grads[p + "ln1.b"] = dg1, db1
        dx = dx + dres
    return grads, dx


def _backward_recurrent(out: BatchEncoderOutput, dH, params: EncoderParams):
    t = params.tensors
    cfg = params.config
    half = cfg.d // 2
    B, T = out.ids.shape
    cache = out.cache
    grads: dict[str, np.ndarray] = {}
    dx, dgf, dbf = _layernorm_backward(dH, cache["lnf"], t["ln_f.g"])
    grads["ln_f.g"], grads["ln_f.b"] = dgf, dbf
    for i in range(cfg.layers - 1, -1, -1):
        p = f"l{i}."
        c = cache["layers"][i]
        m = c["m"]
        dx = _ffn_backward(dx, t, p, c, grads)
        dcat = dx @ t[p + "rnn.wp"].T
        grads[p + "rnn.wp"] = np.einsum("btd,bte->de", c["cat"], dx)
        grads[p + "rnn.bp"] = dx.sum(axis=(0, 1))
        dh_seq, dg_seq = dcat[..., :half], dcat[..., half:]
        da = np.zeros_like(c["a"])
        dwxf = np.zeros_like(t[p + "rnn.wxf"])
        dwhf = np.zeros_like(t[p + "rnn.whf"])
        dbfwd = np.zeros(half)
        carry = np.zeros((B, half))
        for s in range(T - 1, -1, -1):
            dht = dh_seq[:, s] + carry
            du = dht * m[:, s] * (1.0 - c["th_f"][:, s] ** 2)
            da[:, s] += du @ t[p + "rnn.wxf"].T
            dwxf += c["a"][:, s].T @ du
            dwhf += c["h"][:, s].T @ du
            dbfwd += du.sum(axis=0)
            carry = du @ t[p + "rnn.whf"].T + dht * (1.0 - m[:, s])
        dwxb = np.zeros_like(t[p + "rnn.wxb"])
        dwhb = np.zeros_like(t[p + "rnn.whb"])
        dbbwd = np.zeros(half)
        carry = np.zeros((B, half))
        for s in range(T):
            dgt = dg_seq[:, s] + carry
            du = dgt * m[:, s] * (1.0 - c["th_b"][:, s] ** 2)
            da[:, s] += du @ t[p + "rnn.wxb"].T
            dwxb += c["a"][:, s].T @ du
            dwhb += c["g"][:, s + 1].T @ du
            dbbwd += du.sum(axis=0)
            carry = du @ t[p + "rnn.whb"].T + dgt * (1.0 - m[:, s])
        grads[p + "rnn.wxf"], grads[p + "rnn.whf"], grads[p + "rnn.bf"] = dwxf, dwhf, dbfwd
        grads[p + "rnn.wxb"], grads[p + "rnn.whb"], grads[p + "rnn.bb"] = dwxb, dwhb, dbbwd
        dres, dg1, db1 = _layernorm_backward(da, c["ln1"], t[p + "ln1.g"])
        grads[p + "ln1.g"], grads[p + "ln1.b"] = dg1, db1
        dx = dx + dres
    return grads, dx


def backward_batch(
    out: BatchEncoderOutput, dH: np.ndarray, params: EncoderParams
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a scalar loss with respect to every parameter tensor.

    ``dH`` is the loss gradient at the encoder output, shape (B, T, d).  Also
    returns the gradient with respect to the summed input embeddings.  The
    result is linear in ``dH``; rows at padded positions are forced to zero.
    """
    dH = np.asarray(dH, dtype=np.float64)
    if dH.shape != out.H.shape:
        raise EncoderError(f"dH shape {dH.shape} does not match H shape {out.H.shape}")
    if not np.all(np.isfinite(dH)):
        raise EncoderError("dH contains non-finite values")
    dH = dH * out.mask[:, :, None]
    if params.config.arch == ARCH_TRANSFORMER:
        grads, dx = _backward_transformer(out, dH, params)
    else:
        grads, dx = _backward_recurrent(out, dH, params)
    dtok = np.zeros_like(params.tensors["tok_emb"])
    np.add.at(dtok, out.ids.reshape(-1), dx.reshape(-1, params.config.d))
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(params.tensors["pos_emb"])
    dpos[: out.ids.shape[1]] = dx.sum(axis=0)
    grads["pos_emb"] = dpos
    return grads, dx


def backward(
    out: EncoderOutput, dH: np.ndarray, params: EncoderParams
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Single-sequence wrapper around ``backward_batch``; dH has shape (n, d)."""
    dH = np.asarray(dH, dtype=np.float64)
    if dH.shape != out.H.shape:
        raise EncoderError(f"dH shape {dH.shape} does not match H shape {out.H.shape}")
    grads, dx = backward_batch(out.batch, dH[None, :, :], params)
    return grads, dx[0]


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    tensors: dict[str, np.ndarray],
    h: float = 1e-3,
    sample: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn(tensors)`` must return (loss, grads) deterministically.  A
    seeded sample of coordinates across all tensors is perturbed by +-h; the
    relative error denominator is max(|analytic|, |numeric|, 1e-8).  The input
    tensors are never mutated.
    """
    _, grads = loss_fn(tensors)
    keys = sorted(tensors)
    sizes = [tensors[k].size for k in keys]
    bounds = np.cumsum([0] + sizes)
    total = int(bounds[-1])
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(sample, total), replace=False)
    work = {k: tensors[k].copy() for k in keys}
    max_err = 0.0
    for c in sorted(int(c) for c in coords):
        ki = int(np.searchsorted(bounds, c, side="right")) - 1
        key, off = keys[ki], c - int(bounds[ki])
        orig = work[key].flat[off]
        work[key].flat[off] = orig + h
        loss_plus = loss_fn(work)[0]
        work[key].flat[off] = orig - h
        loss_minus = loss_fn(work)[0]
        work[key].flat[off] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        analytic = float(grads[key].flat[off])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_err = max(max_err, err)
    return max_err
