"""Modality-fusion transformer encoder with hand-written gradients.

A learned CLS row is prepended to the m cell embeddings; L encoder blocks
(multi-head attention, residual + layer norm, ReLU FFN, residual + layer
norm) run without positional encoding, so the CLS output is invariant to
permutations of the cell rows. Forward keeps every intermediate needed for
exact reverse-mode gradients; all math is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError


@dataclass(frozen=True)
class FusionConfig:
    dim: int
    blocks: int
    heads: int
    ffn_dim: int = 0       # 0 -> 4 * dim
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.dim <= 0 or self.blocks <= 0 or self.heads <= 0:
            raise ConfigError("fusion dims/blocks/heads must be positive")
        if self.dim % self.heads != 0:
            raise ConfigError(
                f"heads ({self.heads}) must divide dim ({self.dim})"
            )
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.dim)
        if self.ffn_dim <= 0:
            raise ConfigError("ffn_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class BlockParams:
    wq: np.ndarray   # (H, d, d_k)
    wk: np.ndarray   # (H, d, d_k)
    wv: np.ndarray   # (H, d, d_k)
    wo: np.ndarray   # (H*d_k, d)
    gamma1: np.ndarray
    beta1: np.ndarray
    w1: np.ndarray   # (d, d_ff)
    b1: np.ndarray
    w2: np.ndarray   # (d_ff, d)
    b2: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray


@dataclass
class FusionParams:
    config: FusionConfig
    e_cls: np.ndarray          # (d,)
    blocks: list[BlockParams]


def _glorot(rng, shape):
    fan_in, fan_out = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: FusionConfig, seed: int) -> FusionParams:
    """Glorot-uniform weights, zero biases/beta, unit gamma, small CLS."""
    rng = np.random.default_rng(seed)
    d, dk, dff = config.dim, config.head_dim, config.ffn_dim
    e_cls = rng.normal(0.0, 0.02, size=d)
    blocks = []
    for _ in range(config.blocks):
        blocks.append(BlockParams(
            wq=_glorot(rng, (config.heads, d, dk)),
            wk=_glorot(rng, (config.heads, d, dk)),
            wv=_glorot(rng, (config.heads, d, dk)),
            wo=_glorot(rng, (config.heads * dk, d)),
            gamma1=np.ones(d),
            beta1=np.zeros(d),
            w1=_glorot(rng, (d, dff)),
            b1=np.zeros(dff),
            w2=_glorot(rng, (dff, d)),
            b2=np.zeros(d),
            gamma2=np.ones(d),
            beta2=np.zeros(d),
        ))
    return FusionParams(config=config, e_cls=e_cls, blocks=blocks)


def param_items(params: FusionParams):
    """Flat (name, array) view in a fixed order; arrays are live references."""
    yield "e_cls", params.e_cls
    for l, blk in enumerate(params.blocks):
        for fname in ("wq", "wk", "wv", "wo", "gamma1", "beta1",
                      "w1", "b1", "w2", "b2", "gamma2", "beta2"):
            yield f"block{l}.{fname}", getattr(blk, fname)


def zero_grads_like(params: FusionParams) -> dict:
    return {name: np.zeros_like(arr) for name, arr in param_items(params)}


def _layer_norm_forward(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, xhat, inv_std


def _layer_norm_backward(dy, gamma, xhat, inv_std):
    dgamma = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbeta = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gamma
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


@dataclass
class BlockTrace:
    g: np.ndarray          # block input (B, S, d)
    q: np.ndarray          # (B, H, S, d_k)
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray      # attention probabilities (B, H, S, S)
    concat: np.ndarray     # (B, S, H*d_k)
    xhat1: np.ndarray
    inv_std1: np.ndarray
    r: np.ndarray          # post first layer norm (B, S, d)
    relu_mask: np.ndarray  # (B, S, d_ff)
    act: np.ndarray        # ReLU output (B, S, d_ff)
    xhat2: np.ndarray
    inv_std2: np.ndarray


@dataclass
class ForwardTrace:
    blocks: list[BlockTrace] = field(default_factory=list)
    output: np.ndarray | None = None   # final block output (B, S, d)


def multi_head_attention(g, blk: BlockParams, head_dim: int):
    """Returns (u, q, k, v, probs, concat) for a batch of sequences."""
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite input to attention")
    q = np.einsum("bsd,hde->bhse", g, blk.wq)
    k = np.einsum("bsd,hde->bhse", g, blk.wk)
    v = np.einsum("bsd,hde->bhse", g, blk.wv)
    scores = np.einsum("bhse,bhte->bhst", q, k) / np.sqrt(head_dim)
    probs = _softmax_rows(scores)
    heads = np.einsum("bhst,bhte->bhse", probs, v)
    b, h, s, dk = heads.shape
    concat = np.moveaxis(heads, 1, 2).reshape(b, s, h * dk)
    u = concat @ blk.wo
    return u, q, k, v, probs, concat


def forward(params: FusionParams, z: np.ndarray):
    """Run the encoder on a batch of cell-embedding sequences.

    z: (B, m, d) or (m, d). Returns (cls_out (B, d) or (d,), ForwardTrace).
    """
    single = z.ndim == 2
    if single:
        z = z[None]
    if z.shape[1] < 1:
        raise DataError("need at least one cell embedding (m >= 1)")
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite cell embeddings")
    cfg = params.config
    b = z.shape[0]
    cls_rows = np.broadcast_to(params.e_cls, (b, 1, cfg.dim))
    g = np.concatenate([cls_rows, z.astype(float)], axis=1)

    trace = ForwardTrace()
    for l, blk in enumerate(params.blocks):
        u, q, k, v, probs, concat = multi_head_attention(g, blk, cfg.head_dim)
        a1 = u + g
        r, xhat1, inv_std1 = _layer_norm_forward(a1, blk.gamma1, blk.beta1,
                                                 cfg.ln_eps)
        pre = r @ blk.w1 + blk.b1
        mask = pre > 0
        act = pre * mask
        f2 = act @ blk.w2 + blk.b2
        a2 = f2 + r
        o, xhat2, inv_std2 = _layer_norm_forward(a2, blk.gamma2, blk.beta2,
                                                 cfg.ln_eps)
        if not np.all(np.isfinite(o)):
            raise NumericalError(f"non-finite activations in block {l}")
        trace.blocks.append(BlockTrace(
            g=g, q=q, k=k, v=v, probs=probs, concat=concat,
            xhat1=xhat1, inv_std1=inv_std1, r=r,
            relu_mask=mask, act=act, xhat2=xhat2, inv_std2=inv_std2,
        ))
        g = o
    trace.output = g
    cls_out = g[:, 0, :]
    return (cls_out[0] if single else cls_out), trace


def backward(params: FusionParams, trace: ForwardTrace, grad_cls: np.ndarray):
    """Gradients of sum_b <cls_out_b, grad_cls_b> w.r.t. parameters and input.

    grad_cls: (B, d) or (d,). Returns (grads dict keyed like param_items,
    dz (B, m, d)).
    """
    cfg = params.config
    if grad_cls.ndim == 1:
        grad_cls = grad_cls[None]
    b, s, d = trace.output.shape
    if grad_cls.shape != (b, d):
        raise DataError(
            f"grad shape {grad_cls.shape} does not match batch ({b}, {d})"
        )
    grads = zero_grads_like(params)
    dg = np.zeros((b, s, d))
    dg[:, 0, :] = grad_cls

    for l in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[l]
        tr = trace.blocks[l]

        # second layer norm
        da2, dgamma2, dbeta2 = _layer_norm_backward(
            dg, blk.gamma2, tr.xhat2, tr.inv_std2)
        grads[f"block{l}.gamma2"] += dgamma2
        grads[f"block{l}.beta2"] += dbeta2

        # FFN (residual branch feeds r as well)
        df2 = da2
        dr = da2.copy()
        grads[f"block{l}.w2"] += np.einsum("bsf,bsd->fd", tr.act, df2)
        grads[f"block{l}.b2"] += df2.sum(axis=(0, 1))
        dact = df2 @ blk.w2.T
        dpre = dact * tr.relu_mask
        grads[f"block{l}.w1"] += np.einsum("bsd,bsf->df", tr.r, dpre)
        grads[f"block{l}.b1"] += dpre.sum(axis=(0, 1))
        dr += dpre @ blk.w1.T

        # first layer norm
        da1, dgamma1, dbeta1 = _layer_norm_backward(
            dr, blk.gamma1, tr.xhat1, tr.inv_std1)
        grads[f"block{l}.gamma1"] += dgamma1
        grads[f"block{l}.beta1"] += dbeta1
        du = da1
        dg_in = da1.copy()   # residual path into the block input

        # output projection
        grads[f"block{l}.wo"] += np.einsum(
            "bsc,bsd->cd", tr.concat, du)
        dconcat = du @ blk.wo.T
        dk_heads = dconcat.reshape(b, s, cfg.heads, cfg.head_dim)
        dheads = np.moveaxis(dk_heads, 2, 1)   # (B, H, S, d_k)

        # attention core
        dprobs = np.einsum("bhse,bhte->bhst", dheads, tr.v)
        dv = np.einsum("bhst,bhse->bhte", tr.probs, dheads)
        inner = (dprobs * tr.probs).sum(axis=-1, keepdims=True)
        dscores = tr.probs * (dprobs - inner)
        scale = 1.0 / np.sqrt(cfg.head_dim)
        dq = np.einsum("bhst,bhte->bhse", dscores, tr.k) * scale
        dkk = np.einsum("bhst,bhse->bhte", dscores, tr.q) * scale

        grads[f"block{l}.wq"] += np.einsum("bsd,bhse->hde", tr.g, dq)
        grads[f"block{l}.wk"] += np.einsum("bsd,bhse->hde", tr.g, dkk)
        grads[f"block{l}.wv"] += np.einsum("bsd,bhse->hde", tr.g, dv)

        dg_in += np.einsum("bhse,hde->bsd", dq, blk.wq)
        dg_in += np.einsum("bhse,hde->bsd", dkk, blk.wk)
        dg_in += np.einsum("bhse,hde->bsd", dv, blk.wv)

        dg = dg_in

    grads["e_cls"] += dg[:, 0, :].sum(axis=0)
    dz = dg[:, 1:, :]
    return grads, dz


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, items) -> "AdamState":
        items = list(items)
        m = {name: np.zeros_like(arr) for name, arr in items}
        v = {name: np.zeros_like(arr) for name, arr in items}
        return cls(m=m, v=v, t=0)


def adam_step(items, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update over (name, array) parameter items."""
    state.t += 1
    t = state.t
    for name, arr in items:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)


# --- checkpoint -------------------------------------------------------------
# "FMDL" header, then config fields, then every parameter (fusion followed by
# head) as little-endian f64 in param_items order.

CKPT_MAGIC = b"FMDL"
CKPT_VERSION = 1


def save_checkpoint(path, params: FusionParams, head_items) -> None:
    cfg = params.config
    head_items = list(head_items)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IIIIId", CKPT_VERSION, cfg.dim, cfg.blocks,
                             cfg.heads, cfg.ffn_dim, cfg.ln_eps))
        fh.write(struct.pack("<I", len(head_items)))
        for name, arr in head_items:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for _, arr in param_items(params):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for _, arr in head_items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (FusionParams, list of (name, array) head items)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise DataError(f"not a model checkpoint: {path}")
    off = 4
    version, dim, blocks, heads, ffn_dim = struct.unpack_from("<IIIII", blob, off)
    off += 20
    (ln_eps,) = struct.unpack_from("<d", blob, off)
    off += 8
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (n_head,) = struct.unpack_from("<I", blob, off)
    off += 4
    head_meta = []
    for _ in range(n_head):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        head_meta.append((name, shape))

    cfg = FusionConfig(dim=dim, blocks=blocks, heads=heads,
                       ffn_dim=ffn_dim, ln_eps=ln_eps)
    params = init_params(cfg, seed=0)
    for name, arr in param_items(params):
        count = arr.size
        vals = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += count * 8
        arr[...] = vals.reshape(arr.shape)
    head_items = []
    for name, shape in head_meta:
        count = int(np.prod(shape)) if shape else 1
        vals = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += count * 8
        head_items.append((name, vals.reshape(shape).copy()))
    if off != len(blob):
        raise DataError(f"checkpoint has trailing bytes: {path}")
    return params, head_items
