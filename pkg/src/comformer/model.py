"""Transformer encoder-decoder with three ways of fusing the code-token and
AST streams.

``jointly``
    Separate code and AST encoders; outputs concatenated along the sequence
    axis, then a per-position Linear + Tanh.
``shared``
    One encoder applied to each stream, then the same concatenation and
    Linear + Tanh.
``single``
    Each example's ids are spliced as ``[code, SEP, ast]`` and pass through
    one encoder; no fusion projection.

Layers are post-norm: ``x = LayerNorm(x + Sublayer(x))``. Positional
embeddings are learned tables.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .bpe import PAD, SEP
from .tensor import Tensor

FUSION_MODES = ("jointly", "shared", "single")


class LengthExceeded(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 8192
    d_model: int = 128
    heads: int = 4
    layers: int = 2
    d_ff: int = 512
    dropout: float = 0.1
    max_code_len: int = 200
    max_ast_len: int = 200
    max_comment_len: int = 30
    fusion: str = "single"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        for name in ("vocab_size", "d_model", "heads", "layers", "d_ff", "max_code_len", "max_ast_len", "max_comment_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def small(cls, **overrides) -> ModelConfig:
        """Desk-test preset: narrower and shallower, default lengths."""
        base = dict(d_model=64, heads=4, layers=2, d_ff=128)
        base.update(overrides)
        return cls(**base)

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def encoder_stacks(self) -> list[tuple[str, int]]:
        """(name, positional-table length) of every encoder stack."""
        if self.fusion == "jointly":
            return [("enc_code", self.max_code_len), ("enc_ast", self.max_ast_len)]
        if self.fusion == "shared":
            return [("enc", max(self.max_code_len, self.max_ast_len))]
        return [("enc", self.max_code_len + 1 + self.max_ast_len)]


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter total for ``cfg``."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    ffn = d * f + f + f * d + d
    enc_layer = 4 * d * d + ffn + 2 * 2 * d
    dec_layer = 8 * d * d + ffn + 3 * 2 * d
    total = v * d
    for _, positions in cfg.encoder_stacks():
        total += positions * d + cfg.layers * enc_layer
    if cfg.fusion != "single":
        total += d * d + d
    total += cfg.max_comment_len * d + cfg.layers * dec_layer
    total += d * v + v
    return total


def _layer_shapes(cfg: ModelConfig, prefix: str, cross: bool) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    attn = lambda p: [(f"{p}.wq", (d, d)), (f"{p}.wk", (d, d)), (f"{p}.wv", (d, d)), (f"{p}.wo", (d, d))]
    norm = lambda p: [(f"{p}.gamma", (d,)), (f"{p}.beta", (d,))]
    shapes = attn(f"{prefix}.self") + norm(f"{prefix}.ln1")
    if cross:
        shapes += attn(f"{prefix}.cross") + norm(f"{prefix}.ln2")
    shapes += [(f"{prefix}.ffn.w1", (d, f)), (f"{prefix}.ffn.b1", (f,)), (f"{prefix}.ffn.w2", (f, d)), (f"{prefix}.ffn.b2", (d,))]
    shapes += norm(f"{prefix}.ln3" if cross else f"{prefix}.ln2")
    return shapes


def parameter_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of all parameters, in initialization order."""
    d = cfg.d_model
    shapes: list[tuple[str, tuple[int, ...]]] = [("embed.token", (cfg.vocab_size, d))]
    for stack, positions in cfg.encoder_stacks():
        shapes.append((f"{stack}.pos", (positions, d)))
        for layer in range(cfg.layers):
            shapes += _layer_shapes(cfg, f"{stack}.{layer}", cross=False)
    if cfg.fusion != "single":
        shapes += [("fuse.w", (d, d)), ("fuse.b", (d,))]
    shapes.append(("dec.pos", (cfg.max_comment_len, d)))
    for layer in range(cfg.layers):
        shapes += _layer_shapes(cfg, f"dec.{layer}", cross=True)
    shapes += [("out.w", (d, cfg.vocab_size)), ("out.b", (cfg.vocab_size,))]
    return shapes


def make_rng(seed: int) -> np.random.Generator:
    """Mersenne Twister (a twisted generalized feedback shift register)."""
    return np.random.Generator(np.random.MT19937(seed))


def _init_param(name: str, shape: tuple[int, ...], rng: np.random.Generator, d_model: int) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if name in ("embed.token",) or leaf == "pos":
        return rng.normal(0.0, d_model**-0.5, size=shape)
    if leaf == "gamma":
        return np.ones(shape)
    if len(shape) == 1:
        return np.zeros(shape)
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def multi_head_attention(
    params: dict[str, Tensor],
    prefix: str,
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    mask: np.ndarray | None,
    heads: int,
) -> Tensor:
    """Project into ``heads`` subspaces, attend in each, concatenate and
    project with ``W^O``. Inputs are ``[batch, len, d_model]``."""
    b, n, d = q_in.shape
    m = k_in.shape[1]
    d_k = d // heads

    def split(x: Tensor, length: int, w: str) -> Tensor:
        proj = T.matmul(x, params[f"{prefix}.{w}"])
        return T.swapaxes(T.reshape(proj, (b, length, heads, d_k)), 1, 2)

    q = split(q_in, n, "wq")
    k = split(k_in, m, "wk")
    v = split(v_in, m, "wv")
    out = T.scaled_dot_attention(q, k, v, mask)
    out = T.reshape(T.swapaxes(out, 1, 2), (b, n, d))
    return T.matmul(out, params[f"{prefix}.wo"])


def pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def causal_mask(t: int) -> np.ndarray:
    """``[t, t]`` boolean mask, True where key position <= query position."""
    return np.tril(np.ones((t, t), dtype=bool))


class ComFormerModel:
    """All learned parameters plus the forward computations.

    ``params`` maps names to leaf tensors in a fixed order; that order is
    the initialization order and the checkpoint layout.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None) -> None:
        self.config = config
        if params is None:
            rng = make_rng(config.seed)
            params = OrderedDict(
                (name, Tensor(_init_param(name, shape, rng, config.d_model), requires_grad=True))
                for name, shape in parameter_shapes(config)
            )
        else:
            expected = parameter_shapes(config)
            got = [(k, v.shape) for k, v in params.items()]
            if got != expected:
                raise ValueError("parameter names/shapes do not match the configuration")
        self.params: dict[str, Tensor] = params
        self.dropout_rng = make_rng(config.seed + 1)
        self.training = False

    # -- bookkeeping ----------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _drop(self, x: Tensor) -> Tensor:
        if not self.training:
            return x
        return T.dropout(x, self.config.dropout, self.dropout_rng)

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = T.relu(T.matmul(x, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"])
        return T.matmul(h, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]

    def _embed(self, ids: np.ndarray, pos_name: str) -> Tensor:
        length = ids.shape[1]
        table = self.params[pos_name]
        if length > table.shape[0]:
            raise LengthExceeded(f"sequence length {length} exceeds {pos_name} size {table.shape[0]}")
        tok = T.embedding(self.params["embed.token"], ids)
        return self._drop(tok + T.embedding(table, np.arange(length)))

    # -- encoder ----------------------------------------------------------

    def encoder_forward(self, ids: np.ndarray, stack: str = "enc", pad_mask: np.ndarray | None = None) -> Tensor:
        """Context vectors ``[batch, len, d_model]`` for padded ``ids``.

        ``pad_mask`` (True for real tokens) defaults to ``ids != PAD``.
        Masked positions are excluded as attention keys, so non-PAD rows do
        not depend on the ids sitting in PAD positions.
        """
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        real = ids != PAD if pad_mask is None else np.atleast_2d(np.asarray(pad_mask, dtype=bool))
        mask = real[:, None, None, :]
        x = self._embed(ids, f"{stack}.pos")
        cfg = self.config
        for layer in range(cfg.layers):
            pre = f"{stack}.{layer}"
            a = multi_head_attention(self.params, f"{pre}.self", x, x, x, mask, cfg.heads)
            x = self._norm(f"{pre}.ln1", x + self._drop(a))
            x = self._norm(f"{pre}.ln2", x + self._drop(self._ffn(f"{pre}.ffn", x)))
        return x

    def splice(self, code_ids: np.ndarray, ast_ids: np.ndarray) -> np.ndarray:
        """Per example ``[code, SEP, ast]`` with inner padding removed."""
        rows = []
        for c, a in zip(np.atleast_2d(code_ids), np.atleast_2d(ast_ids)):
            rows.append(list(c[c != PAD]) + [SEP] + list(a[a != PAD]))
        return pad_batch(rows)

    def fuse_encode(self, code_ids: np.ndarray, ast_ids: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Encode both streams per the fusion mode.

        Returns the context ``[batch, rows, d_model]`` and its key mask
        ``[batch, rows]`` (True for real positions).
        """
        code_ids = np.atleast_2d(np.asarray(code_ids, dtype=np.int64))
        ast_ids = np.atleast_2d(np.asarray(ast_ids, dtype=np.int64))
        cfg = self.config
        if code_ids.shape[1] > cfg.max_code_len:
            raise LengthExceeded(f"code length {code_ids.shape[1]} > {cfg.max_code_len}")
        if ast_ids.shape[1] > cfg.max_ast_len:
            raise LengthExceeded(f"ast length {ast_ids.shape[1]} > {cfg.max_ast_len}")
        if cfg.fusion == "single":
            ids = self.splice(code_ids, ast_ids)
            return self.encoder_forward(ids, "enc"), ids != PAD
        if cfg.fusion == "jointly":
            zc = self.encoder_forward(code_ids, "enc_code")
            za = self.encoder_forward(ast_ids, "enc_ast")
        else:
            zc = self.encoder_forward(code_ids, "enc")
            za = self.encoder_forward(ast_ids, "enc")
        z = T.concat([zc, za], axis=1)
        z = T.tanh(T.matmul(z, self.params["fuse.w"]) + self.params["fuse.b"])
        mask = np.concatenate([code_ids != PAD, ast_ids != PAD], axis=1)
        return z, mask

    # -- decoder ----------------------------------------------------------

    def decoder_forward(self, context: Tensor, context_mask: np.ndarray, target_ids: np.ndarray) -> Tensor:
        """Vocabulary logits ``[batch, t, vocab]`` for the target prefix.

        Row ``i`` depends only on target positions ``<= i``.
        """
        target_ids = np.atleast_2d(np.asarray(target_ids, dtype=np.int64))
        t = target_ids.shape[1]
        if t > self.config.max_comment_len:
            raise LengthExceeded(f"target length {t} > {self.config.max_comment_len}")
        cfg = self.config
        self_mask = causal_mask(t)[None, None] & (target_ids != PAD)[:, None, None, :]
        cross_mask = np.asarray(context_mask, dtype=bool)[:, None, None, :]
        x = self._embed(target_ids, "dec.pos")
        for layer in range(cfg.layers):
            pre = f"dec.{layer}"
            a = multi_head_attention(self.params, f"{pre}.self", x, x, x, self_mask, cfg.heads)
            x = self._norm(f"{pre}.ln1", x + self._drop(a))
            c = multi_head_attention(self.params, f"{pre}.cross", x, context, context, cross_mask, cfg.heads)
            x = self._norm(f"{pre}.ln2", x + self._drop(c))
            x = self._norm(f"{pre}.ln3", x + self._drop(self._ffn(f"{pre}.ffn", x)))
        return T.matmul(x, self.params["out.w"]) + self.params["out.b"]

    def logits(self, code_ids, ast_ids, target_ids) -> Tensor:
        context, mask = self.fuse_encode(code_ids, ast_ids)
        return self.decoder_forward(context, mask, target_ids)

    def loss(self, code_ids, ast_ids, comment_ids) -> Tensor:
        """Teacher-forced mean cross-entropy over non-PAD next tokens.

        ``comment_ids`` rows are ``[SOS, ..., EOS]`` padded with PAD.
        """
        comment_ids = np.atleast_2d(np.asarray(comment_ids, dtype=np.int64))
        logits = self.logits(code_ids, ast_ids, comment_ids[:, :-1])
        return T.cross_entropy(logits, comment_ids[:, 1:], ignore_index=PAD)


Example = tuple[Sequence[int], Sequence[int], Sequence[int]]


def collate(batch: Sequence[Example]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not batch:
        raise EmptyBatch("train_step needs at least one example")
    code, ast, comment = zip(*batch)
    return pad_batch(code), pad_batch(ast), pad_batch(comment)


def train_step(model: ComFormerModel, batch: Sequence[Example], optimizer) -> float:
    """One teacher-forced update; returns the batch's mean token loss."""
    code, ast, comment = collate(batch)
    model.training = True
    try:
        model.zero_grad()
        loss = model.loss(code, ast, comment)
        T.backward(loss)
    finally:
        model.training = False
    optimizer.step()
    return float(loss.data)


def token_accuracy(model: ComFormerModel, batch: Sequence[Example]) -> float:
    """Teacher-forced next-token argmax accuracy over non-PAD targets."""
    code, ast, comment = collate(batch)
    logits = model.logits(code, ast, comment[:, :-1]).data
    target = comment[:, 1:]
    valid = target != PAD
    return float(((logits.argmax(-1) == target) & valid).sum() / valid.sum())
