"""Pointer-generator network with optional multi-head attention and pointer dropout.

All computations run on padded mini-batches; padding is masked out exactly,
so a batch of one example is the per-example model.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import EncodedExample, UNK_ID

MAGIC = b"PGLAB1\n"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    emb_dim: int = 32
    hidden_dim: int = 32
    heads: int = 1

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if (2 * self.hidden_dim) % self.heads:
            raise ValueError("context size 2*hidden_dim must be divisible by heads")

    @property
    def context_dim(self) -> int:
        return 2 * self.hidden_dim

    @property
    def head_dim(self) -> int:
        """Per-head attention feature size and projected context size."""
        return self.context_dim // self.heads


class ModelParams:
    """Named learnable tensors plus the shape configuration they imply."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator, scale: float = 0.05) -> "ModelParams":
        E, H, V = config.emb_dim, config.hidden_dim, config.vocab_size
        C, D = config.context_dim, config.hidden_dim
        shapes: dict[str, tuple[int, ...]] = {"embedding": (V, E)}
        for d in ("fw", "bw"):
            shapes[f"enc_{d}_Wx"] = (E, 4 * H)
            shapes[f"enc_{d}_Wh"] = (H, 4 * H)
            shapes[f"enc_{d}_b"] = (4 * H,)
        shapes.update(
            bridge_h_W=(2 * H, D), bridge_h_b=(D,), bridge_c_W=(2 * H, D), bridge_c_b=(D,),
            dec_Wx=(E, 4 * D), dec_Wh=(D, 4 * D), dec_b=(4 * D,),
        )
        A = config.head_dim
        for k in range(config.heads):
            shapes[f"att{k}_Wh"] = (C, A)
            shapes[f"att{k}_Ws"] = (D, A)
            shapes[f"att{k}_b"] = (A,)
            shapes[f"att{k}_v"] = (A,)
            if k == 0:
                shapes["att0_wc"] = (A,)
            if config.heads > 1:
                shapes[f"att{k}_proj"] = (C, config.head_dim)
        shapes.update(
            out_V=(D + C, D), out_b=(D,), out_V2=(D, V), out_b2=(V,),
            ptr_wh=(C,), ptr_ws=(D,), ptr_wx=(E,), ptr_b=(1,),
        )
        tensors = {}
        for name, shape in shapes.items():
            if len(shape) == 2 or name.endswith(("_v", "_wc")) or name.startswith("ptr_w"):
                data = rng.uniform(-scale, scale, size=shape)
            else:
                data = np.zeros(shape)
            if name in ("enc_fw_b", "enc_bw_b"):
                data[H : 2 * H] = 1.0
            if name == "dec_b":
                data[D : 2 * D] = 1.0
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {n: Tensor(t.data.copy(), requires_grad=True, name=n) for n, t in self.tensors.items()},
        )

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            for name, t in self.tensors.items():
                dims = ",".join(str(d) for d in t.shape)
                fh.write(f"{name}\t{dims}\n".encode("utf-8"))
            fh.write(b"\n")
            for t in self.tensors.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ModelParams":
        raw = Path(path).read_bytes()
        if not raw.startswith(MAGIC):
            raise ValueError(f"{path}: not a PGLAB1 checkpoint")
        head_end = raw.index(b"\n\n", len(MAGIC) - 1)
        manifest = raw[len(MAGIC) : head_end].decode("utf-8").split("\n") if head_end >= len(MAGIC) else []
        offset = head_end + 2
        tensors = {}
        for line in manifest:
            name, dims = line.split("\t")
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
            offset += 8 * n
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        V, E = tensors["embedding"].shape
        H = tensors["enc_fw_Wh"].shape[0]
        heads = sum(1 for n in tensors if n.endswith("_v") and n.startswith("att"))
        return cls(ModelConfig(vocab_size=V, emb_dim=E, hidden_dim=H, heads=heads), tensors)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray        # (B, L) vocab ids, PAD beyond length
    src_ext: np.ndarray    # (B, L) extended ids
    src_mask: np.ndarray   # (B, L) bool
    src_len: np.ndarray    # (B,)
    dec_in: np.ndarray     # (B, T)
    tgt_ext: np.ndarray    # (B, T)
    tgt_mask: np.ndarray   # (B, T) bool
    ext_size: int
    examples: list[EncodedExample] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @classmethod
    def from_examples(cls, examples: Sequence[EncodedExample]) -> "Batch":
        B = len(examples)
        L = max(e.source_len for e in examples)
        T = max(e.target_len for e in examples)
        src = np.zeros((B, L), dtype=np.int64)
        src_ext = np.zeros((B, L), dtype=np.int64)
        dec_in = np.zeros((B, T), dtype=np.int64)
        tgt_ext = np.zeros((B, T), dtype=np.int64)
        src_mask = np.zeros((B, L), dtype=bool)
        tgt_mask = np.zeros((B, T), dtype=bool)
        for b, e in enumerate(examples):
            n, t = e.source_len, e.target_len
            src[b, :n] = e.source_ids
            src_ext[b, :n] = e.source_ext_ids
            src_mask[b, :n] = True
            dec_in[b, :t] = e.target_ids[:t]
            tgt_ext[b, :t] = e.target_ext_ids
            tgt_mask[b, :t] = True
        ext_size = max(e.ext_vocab_size for e in examples)
        return cls(src, src_ext, src_mask, src_mask.sum(axis=1), dec_in, tgt_ext, tgt_mask, ext_size, list(examples))


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


@dataclass
class EncoderOutput:
    states: Tensor          # (B, L, 2H)
    mask: np.ndarray        # (B, L)
    s0: Tensor              # (B, D)
    cell0: Tensor           # (B, D)
    src_ext: np.ndarray
    ext_size: int
    features: Tensor | None = None                 # (B, K, L, C): W_h h_i + b_att per head
    weights: dict[str, Tensor] = field(default_factory=dict)

    @property
    def head_mask(self) -> np.ndarray:
        B, L = self.mask.shape
        return np.broadcast_to(self.mask[:, None, :], (B, self.features.shape[1], L))

    def repeat(self, k: int) -> "EncoderOutput":
        """Tile a single-example encoding ``k`` times (beam search)."""
        idx = np.zeros(k, dtype=np.int64)
        return EncoderOutput(
            states=ad.getitem(self.states, idx),
            mask=self.mask[idx],
            s0=ad.getitem(self.s0, idx),
            cell0=ad.getitem(self.cell0, idx),
            src_ext=self.src_ext[idx],
            ext_size=self.ext_size,
            features=ad.getitem(self.features, idx),
            weights=self.weights,
        )


def stacked_head_weights(params: ModelParams) -> dict[str, Tensor]:
    """Per-head attention parameters stacked on a leading head axis."""
    K = params.config.heads
    A = params.config.head_dim
    w = {
        "Wh": ad.stack([params[f"att{k}_Wh"] for k in range(K)]),                              # (K, C, A)
        "b": ad.reshape(ad.stack([params[f"att{k}_b"] for k in range(K)]), (K, 1, A)),
        "Ws": ad.concat([params[f"att{k}_Ws"] for k in range(K)], axis=-1),                   # (D, K*A)
        "v": ad.reshape(ad.stack([params[f"att{k}_v"] for k in range(K)]), (K, A, 1)),
    }
    wc = ad.reshape(params["att0_wc"], (1, 1, A))
    if K > 1:
        wc = ad.concat([wc, Tensor(np.zeros((K - 1, 1, A)))], axis=0)
        w["proj"] = ad.stack([params[f"att{k}_proj"] for k in range(K)])                     # (K, C, C/K)
    w["wc"] = wc
    return w


def lstm_step(x_proj: Tensor, h: Tensor, c: Tensor, Wh: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    """One LSTM step given the precomputed input projection ``x W_x + b``.

    Gate layout along the last axis is input, forget, output, candidate.
    """
    gates = ad.add(x_proj, ad.matmul(h, Wh))
    ifo = ad.sigmoid(ad.slice_last(gates, 0, 3 * hidden))
    g = ad.tanh(ad.slice_last(gates, 3 * hidden, 4 * hidden))
    i = ad.slice_last(ifo, 0, hidden)
    f = ad.slice_last(ifo, hidden, 2 * hidden)
    o = ad.slice_last(ifo, 2 * hidden, 3 * hidden)
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c_new)), c_new


def encode(batch: Batch, params: ModelParams) -> EncoderOutput:
    """Bidirectional LSTM over the source plus the bridge to the decoder state."""
    cfg = params.config
    H = cfg.hidden_dim
    B, L = batch.src.shape
    rows = np.arange(B)[:, None]
    pos = np.arange(L)[None, :]
    lens = batch.src_len[:, None]
    # per-example reversal of the unpadded prefix; padding stays in place
    rev = np.where(pos < lens, lens - 1 - pos, pos)

    emb = ad.getitem(params["embedding"], batch.src)
    emb_rev = ad.getitem(emb, (rows, rev))
    # both directions run as one stacked recurrence: axis 0 is (forward, backward)
    Wx = ad.stack([params["enc_fw_Wx"], params["enc_bw_Wx"]])
    Wh = ad.stack([params["enc_fw_Wh"], params["enc_bw_Wh"]])
    b = ad.reshape(ad.stack([params["enc_fw_b"], params["enc_bw_b"]]), (2, 1, 1, 4 * H))
    x_proj = ad.add(ad.matmul(ad.stack([emb, emb_rev]), ad.reshape(Wx, (2, 1, -1, 4 * H))), b)
    seq = ad.lstm_sequence(x_proj, Wh)
    hf, hb_rev = ad.getitem(seq, (0, Ellipsis, slice(0, H))), ad.getitem(seq, (1, Ellipsis, slice(0, H)))
    cf, cb_rev = ad.getitem(seq, (0, Ellipsis, slice(H, 2 * H))), ad.getitem(seq, (1, Ellipsis, slice(H, 2 * H)))
    hb = ad.getitem(hb_rev, (rows, rev))
    states = ad.concat([hf, hb], axis=-1)

    last = (np.arange(B), batch.src_len - 1)
    h_fin = ad.concat([ad.getitem(hf, last), ad.getitem(hb_rev, last)], axis=-1)
    c_fin = ad.concat([ad.getitem(cf, last), ad.getitem(cb_rev, last)], axis=-1)
    s0 = ad.tanh(ad.add(ad.matmul(h_fin, params["bridge_h_W"]), params["bridge_h_b"]))
    cell0 = ad.tanh(ad.add(ad.matmul(c_fin, params["bridge_c_W"]), params["bridge_c_b"]))

    w = stacked_head_weights(params)
    features = ad.add(ad.matmul(ad.reshape(states, (B, 1, L, 2 * H)), w["Wh"]), w["b"])
    return EncoderOutput(states, batch.src_mask, s0, cell0, batch.src_ext, batch.ext_size, features, w)


# ---------------------------------------------------------------------------
# decoder pieces
# ---------------------------------------------------------------------------


def attention_step(
    s: Tensor,
    enc: EncoderOutput,
    coverage: Tensor | None,
    params: ModelParams,
    coverage_on: bool = False,
) -> Tensor:
    """Attention of every head over the source, shape (B, K, L).

    e_i = v^T tanh(W_h h_i + W_s s + w_c c_i + b_att), masked softmax over i.
    Only head 0 (the pointer head) receives the coverage term. ``coverage_on``
    may be a bool or a per-example bool array.
    """
    B, K, L, A = enc.features.shape
    w = enc.weights
    pre = ad.add(enc.features, ad.reshape(ad.matmul(s, w["Ws"]), (B, K, 1, A)))
    if coverage is not None and np.any(coverage_on):
        cov = ad.reshape(coverage, (B, 1, L, 1))
        if np.ndim(coverage_on):
            # per-example switch: rows with coverage off see a zero coverage vector
            cov = ad.mul(cov, np.asarray(coverage_on, dtype=np.float64).reshape(B, 1, 1, 1))
        pre = ad.add(pre, ad.mul(cov, w["wc"]))
    e = ad.reshape(ad.matmul(ad.tanh(pre), w["v"]), (B, K, L))
    return ad.masked_softmax(e, enc.head_mask)


def make_context(attn: Tensor, enc: EncoderOutput, params: ModelParams) -> Tensor:
    """Per-head weighted sums of encoder states, each projected to C/K, concatenated."""
    B, K, L = attn.shape
    C = enc.states.shape[-1]
    ctx = ad.matmul(attn, enc.states)  # (B, K, C)
    if K > 1:
        ctx = ad.matmul(ad.reshape(ctx, (B, K, 1, C)), enc.weights["proj"])
    return ad.reshape(ctx, (B, C))


def generator_distribution(s: Tensor, context: Tensor, params: ModelParams, state_context: Tensor | None = None) -> Tensor:
    """softmax(V'(V[s, h*] + b) + b'); ``state_context`` may pass a precomputed [s, h*]."""
    if state_context is None:
        state_context = ad.concat([s, context], axis=-1)
    hidden = ad.add(ad.matmul(state_context, params["out_V"]), params["out_b"])
    logits = ad.add(ad.matmul(hidden, params["out_V2"]), params["out_b2"])
    return ad.masked_softmax(logits)


def switch(context: Tensor, s: Tensor, x: Tensor, params: ModelParams) -> Tensor:
    """Soft switch p_gen = sigmoid(w_h.h* + w_s.s + w_x.x + b_ptr), shape (B, 1)."""
    x_term = ad.add(ad.matmul(x, params["ptr_wx"]), params["ptr_b"])
    return _switch_from(ad.concat([s, context], axis=-1), _switch_weight(params), x_term)


def _switch_weight(params: ModelParams) -> Tensor:
    return ad.concat([params["ptr_ws"], params["ptr_wh"]])


def _switch_from(state_context: Tensor, w: Tensor, x_term: Tensor) -> Tensor:
    z = ad.add(ad.matmul(state_context, w), x_term)
    return ad.sigmoid(ad.reshape(z, (-1, 1)))


def final_distribution(p_vocab: Tensor, p_gen: Tensor, pointer_attn: Tensor, src_ext: np.ndarray, ext_size: int) -> Tensor:
    """p_gen * p_vocab (zero-extended) plus (1 - p_gen) * attention scattered by extended id."""
    B, V = p_vocab.shape
    gen = ad.mul(p_gen, p_vocab)
    if ext_size > V:
        gen = ad.concat([gen, Tensor(np.zeros((B, ext_size - V)))], axis=-1)
    copy = ad.scatter_add(ad.mul(ad.sub(1.0, p_gen), pointer_attn), src_ext, ext_size)
    return ad.add(gen, copy)


def pointer_dropout_decision(rate: float, rng: np.random.Generator, n: int | None = None):
    """True means the pointer is dropped for that example's whole decode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"pointer dropout rate must lie in [0, 1), got {rate}")
    if n is None:
        return bool(rng.random() < rate)
    return rng.random(n) < rate


@dataclass
class StepOutput:
    final: Tensor | None = None
    attention: Tensor | None = None  # (B, K, L)
    pointer_attention: Tensor | None = None
    context: Tensor | None = None
    p_vocab: Tensor | None = None
    p_gen: Tensor | None = None
    coverage: Tensor | None = None
    state: tuple[Tensor, Tensor] | None = None


@dataclass
class DecoderInputs:
    """Per-step decoder inputs: embedding, LSTM input projection, switch input term."""

    emb: Tensor | None
    proj: Tensor
    x_term: Tensor

    def at(self, t: int) -> "DecoderInputs":
        col = (slice(None), t)
        return DecoderInputs(None, ad.getitem(self.proj, col), ad.getitem(self.x_term, col))


def embed_inputs(ids: np.ndarray, params: ModelParams) -> DecoderInputs:
    """Embed decoder input ids (B, T); extended-vocabulary ids read as UNK."""
    ids = np.where(ids >= params.config.vocab_size, UNK_ID, ids)
    emb = ad.getitem(params["embedding"], ids)
    proj = ad.add(ad.matmul(emb, params["dec_Wx"]), params["dec_b"])
    x_term = ad.add(ad.matmul(emb, params["ptr_wx"]), params["ptr_b"])
    return DecoderInputs(emb, proj, x_term)


def decoder_step(
    inputs: DecoderInputs,
    state: tuple[Tensor, Tensor],
    coverage: Tensor,
    enc: EncoderOutput,
    params: ModelParams,
    coverage_on: bool = False,
    dropped: np.ndarray | None = None,
    switch_weight: Tensor | None = None,
) -> StepOutput:
    """One decoder step for inputs of shape (B, ...) at a single time index."""
    H = params.config.hidden_dim
    packed = ad.lstm_cell(inputs.proj, state[0], state[1], params["dec_Wh"])
    s, cell = ad.slice_last(packed, 0, H), ad.slice_last(packed, H, 2 * H)
    attn = attention_step(s, enc, coverage, params, coverage_on)
    context = make_context(attn, enc, params)
    state_context = ad.concat([s, context], axis=-1)
    p_vocab = generator_distribution(s, context, params, state_context)
    if dropped is not None and dropped.all():
        p_gen = Tensor(np.ones((s.shape[0], 1)))
    else:
        w = switch_weight if switch_weight is not None else _switch_weight(params)
        p_gen = _switch_from(state_context, w, inputs.x_term)
        if dropped is not None and dropped.any():
            keep = (~dropped).astype(np.float64)[:, None]
            p_gen = ad.add(ad.mul(p_gen, keep), 1.0 - keep)
    pointer = ad.getitem(attn, (slice(None), 0)) if attn.shape[1] > 1 else ad.reshape(attn, attn.shape[::2])
    final = final_distribution(p_vocab, p_gen, pointer, enc.src_ext, enc.ext_size)
    return StepOutput(final, attn, pointer, context, p_vocab, p_gen, coverage, (s, cell))


@dataclass
class ForwardResult:
    steps: list[StepOutput]
    coverage: list[Tensor]
    batch: Batch
    dropped: np.ndarray


def forward_teacher_forced(
    batch: Batch,
    params: ModelParams,
    coverage_on: bool = False,
    dropped: np.ndarray | None = None,
) -> ForwardResult:
    """Run the decoder on ground-truth inputs; coverage tracks the pointer head."""
    B, T = batch.dec_in.shape
    enc = encode(batch, params)
    inputs = embed_inputs(batch.dec_in, params)
    w = _switch_weight(params)
    if dropped is None:
        dropped = np.zeros(B, dtype=bool)
    drop_arg = dropped if dropped.any() else None
    coverage = Tensor(np.zeros(batch.src.shape))
    state = (enc.s0, enc.cell0)
    steps, covs = [], []
    for t in range(T):
        out = decoder_step(inputs.at(t), state, coverage, enc, params, coverage_on, drop_arg, w)
        steps.append(out)
        covs.append(coverage)
        coverage = ad.add(coverage, out.pointer_attention)
        state = out.state
    return ForwardResult(steps, covs, batch, dropped)


def attention_traces(params: ModelParams, examples: Sequence[EncodedExample], coverage_on: bool = False,
                     batch_size: int = 16) -> list[np.ndarray]:
    """Teacher-forced attention per example, shape (target steps, heads, source length)."""
    out = []
    with ad.no_grad():
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo : lo + batch_size]
            res = forward_teacher_forced(Batch.from_examples(chunk), params, coverage_on=coverage_on)
            attn = np.stack([s.attention.data for s in res.steps], axis=1)  # (B, T, K, L)
            for b, ex in enumerate(chunk):
                out.append(attn[b, : ex.target_len, :, : ex.source_len].copy())
    return out
