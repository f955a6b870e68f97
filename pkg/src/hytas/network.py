"""Materializes a genotype as an encoder-only transformer token classifier.

Layout per block (pre-norm): LayerNorm -> fused-qkv attention (per-head width
64) with residual, LayerNorm -> MLP (GELU) with residual; a learned class
token and positional table in front, a final LayerNorm and linear classifier
behind. The layer registry exposes exactly 4*depth + 2 entries in execution
order: EMBED, then [MSA_QKV, MSA_PROJ, MLP_FC1, MLP_FC2] per block, then HEAD.
Norm parameters ride with the sub-layer they feed (pre-attention norm with
MSA_QKV, pre-MLP norm with MLP_FC1, final norm with HEAD).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import LAYER_NORM_EPS
from .data import TokenBatch, TokenGeometry
from .search_space import HEAD_DIM, Genotype

KIND_EMBED = "EMBED"
KIND_MSA_QKV = "MSA_QKV"
KIND_MSA_PROJ = "MSA_PROJ"
KIND_MLP_FC1 = "MLP_FC1"
KIND_MLP_FC2 = "MLP_FC2"
KIND_HEAD = "HEAD"

MSA_KINDS = (KIND_MSA_QKV, KIND_MSA_PROJ)
MLP_KINDS = (KIND_MLP_FC1, KIND_MLP_FC2)

ATTN_SCALE = 1.0 / math.sqrt(HEAD_DIM)
INIT_STD = 0.02
INIT_TRUNC = 2.0  # resample beyond 2 sigma


@dataclass
class LayerEntry:
    """One scoreable layer: its kind, block, and owned parameters."""

    index: int  # 1-based, execution order
    kind: str
    block: int | None  # 1-based block index, None for EMBED/HEAD
    params: list[tuple[str, T.Tensor]] = field(default_factory=list)

    def param_tensors(self) -> list[T.Tensor]:
        return [p for _, p in self.params]

    def param_count(self) -> int:
        return sum(p.size for p in self.param_tensors())


@dataclass
class NetworkInstance:
    genotype: Genotype
    geom: TokenGeometry
    entries: list[LayerEntry]
    init_seed: int

    @property
    def depth(self) -> int:
        return self.genotype.depth

    def registry(self) -> list[LayerEntry]:
        return self.entries

    def parameters(self) -> list[T.Tensor]:
        return [p for e in self.entries for p in e.param_tensors()]

    def param_count(self) -> int:
        return sum(e.param_count() for e in self.entries)

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        for p, saved in zip(self.parameters(), snapshot):
            p.data[...] = saved

    def entry_of_param(self, param_id: int) -> LayerEntry:
        for e in self.entries:
            if any(p.id == param_id for p in e.param_tensors()):
                return e
        raise KeyError(f"parameter {param_id} not in registry")


@dataclass
class PerSampleRule:
    """Recipe for reconstructing per-sample gradients of one parameter from a
    single batched backward pass (samples never interact inside the encoder,
    so activation gradients under a sum-reduced loss stay per-sample)."""

    param: T.Tensor
    kind: str  # linear_w | bias | ln_gain | ln_bias | direct
    out_id: int  # tensor whose retained gradient feeds the rule
    saved: np.ndarray | None = None  # layer input (linear_w) or xhat (ln_*)


@dataclass
class ForwardPass:
    """Everything a proxy can ask of one forward: tape, logits, and hooks."""

    logits: T.Tensor
    tape: T.Tape
    input: T.Tensor
    activations: list[T.Tensor]  # one per registry entry, post-nonlinearity
    gelu_inputs: list[T.Tensor]  # one per block, pre-GELU
    attention: list[T.Tensor]  # one per block, softmax probabilities
    token_states: list[T.Tensor]  # after embed, then after each block
    psample_rules: list[PerSampleRule]


def _trunc_normal(rng: np.random.Generator, shape, std=INIT_STD, trunc=INIT_TRUNC) -> np.ndarray:
    out = rng.standard_normal(shape)
    mask = np.abs(out) > trunc
    while mask.any():
        out[mask] = rng.standard_normal(int(mask.sum()))
        mask = np.abs(out) > trunc
    return out * std


def build(g: Genotype, geom: TokenGeometry, init_seed: int) -> NetworkInstance:
    """Deterministic from (genotype, geometry, seed): truncated-normal weights
    (std 0.02), zero biases, unit norm gains."""
    rng = np.random.default_rng(init_seed)
    d = g.embed_dim

    def weight(*shape):
        return T.Tensor(_trunc_normal(rng, shape), requires_grad=True)

    def zeros(*shape):
        return T.Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return T.Tensor(np.ones(shape), requires_grad=True)

    entries = [
        LayerEntry(
            index=1,
            kind=KIND_EMBED,
            block=None,
            params=[
                ("weight", weight(d, geom.token_dim)),
                ("bias", zeros(d)),
                ("cls_token", weight(1, d)),
                ("pos_embed", weight(geom.tokens + 1, d)),
            ],
        )
    ]
    idx = 2
    for blk in range(1, g.depth + 1):
        inner = HEAD_DIM * g.num_heads[blk - 1]
        hidden = g.mlp_ratio[blk - 1] * d
        entries.append(
            LayerEntry(
                index=idx,
                kind=KIND_MSA_QKV,
                block=blk,
                params=[
                    ("norm_gain", ones(d)),
                    ("norm_bias", zeros(d)),
                    ("weight", weight(3 * inner, d)),
                    ("bias", zeros(3 * inner)),
                ],
            )
        )
        entries.append(
            LayerEntry(
                index=idx + 1,
                kind=KIND_MSA_PROJ,
                block=blk,
                params=[("weight", weight(d, inner)), ("bias", zeros(d))],
            )
        )
        entries.append(
            LayerEntry(
                index=idx + 2,
                kind=KIND_MLP_FC1,
                block=blk,
                params=[
                    ("norm_gain", ones(d)),
                    ("norm_bias", zeros(d)),
                    ("weight", weight(hidden, d)),
                    ("bias", zeros(hidden)),
                ],
            )
        )
        entries.append(
            LayerEntry(
                index=idx + 3,
                kind=KIND_MLP_FC2,
                block=blk,
                params=[("weight", weight(d, hidden)), ("bias", zeros(d))],
            )
        )
        idx += 4
    entries.append(
        LayerEntry(
            index=idx,
            kind=KIND_HEAD,
            block=None,
            params=[
                ("norm_gain", ones(d)),
                ("norm_bias", zeros(d)),
                ("weight", weight(geom.num_classes, d)),
                ("bias", zeros(geom.num_classes)),
            ],
        )
    )
    return NetworkInstance(genotype=g, geom=geom, entries=entries, init_seed=init_seed)


def _linear(tape, x, w, b, rules):
    """y = x @ w.T + b, recording per-sample gradient rules for w and b."""
    y = T.add(tape, T.matmul(tape, x, T.transpose(tape, w)), b)
    rules.append(PerSampleRule(param=w, kind="linear_w", out_id=y.id, saved=x.data))
    rules.append(PerSampleRule(param=b, kind="bias", out_id=y.id))
    return y


def _norm(tape, x, gain, bias, rules):
    y = T.layer_norm(tape, x, gain, bias)
    rules.append(PerSampleRule(param=gain, kind="ln_gain", out_id=y.id, saved=x.data))
    rules.append(PerSampleRule(param=bias, kind="ln_bias", out_id=y.id))
    return y


def forward(net: NetworkInstance, batch: TokenBatch, input_requires_grad: bool = False) -> ForwardPass:
    """Run the encoder over a token batch, exposing per-entry activations,
    pre-GELU inputs, attention maps, and per-sample gradient rules."""
    geom = net.geom
    if batch.tokens != geom.tokens or batch.token_dim != geom.token_dim:
        raise T.ShapeError(
            f"batch geometry ({batch.tokens}, {batch.token_dim}) does not match "
            f"network geometry ({geom.tokens}, {geom.token_dim})"
        )
    g = net.genotype
    d = g.embed_dim
    b = batch.batch_size
    n = geom.tokens + 1

    tape = T.Tape()
    rules: list[PerSampleRule] = []
    x = T.Tensor(batch.data, requires_grad=input_requires_grad)

    embed = net.entries[0]
    (_, emb_w), (_, emb_b), (_, cls_tok), (_, pos) = embed.params
    tok = _linear(tape, x, emb_w, emb_b, rules)
    cls_exp = T.add(tape, T.Tensor(np.zeros((b, 1, d))), cls_tok)
    rules.append(PerSampleRule(param=cls_tok, kind="direct", out_id=cls_exp.id))
    seq = T.concat(tape, [cls_exp, tok], axis=1)
    seq = T.add(tape, seq, pos)
    rules.append(PerSampleRule(param=pos, kind="direct", out_id=seq.id))

    activations = [seq]
    gelu_inputs: list[T.Tensor] = []
    attention: list[T.Tensor] = []
    token_states = [seq]

    entry_iter = iter(net.entries[1:])
    for blk in range(1, g.depth + 1):
        e_qkv = next(entry_iter)
        e_proj = next(entry_iter)
        e_fc1 = next(entry_iter)
        e_fc2 = next(entry_iter)
        heads = g.num_heads[blk - 1]
        inner = HEAD_DIM * heads

        (_, ln1_g), (_, ln1_b), (_, qkv_w), (_, qkv_b) = e_qkv.params
        h = _norm(tape, seq, ln1_g, ln1_b, rules)
        qkv = _linear(tape, h, qkv_w, qkv_b, rules)
        activations.append(qkv)

        def split(lo, hi):
            part = T.slice_axis(tape, qkv, 2, lo, hi)
            part = T.reshape(tape, part, (b, n, heads, HEAD_DIM))
            return T.transpose(tape, part, (0, 2, 1, 3))  # (B, heads, N, 64)

        q = split(0, inner)
        k = split(inner, 2 * inner)
        v = split(2 * inner, 3 * inner)
        scores = T.scale(tape, T.matmul(tape, q, T.transpose(tape, k)), ATTN_SCALE)
        probs = T.softmax(tape, scores)
        attention.append(probs)
        ctx = T.matmul(tape, probs, v)  # (B, heads, N, 64)
        ctx = T.reshape(tape, T.transpose(tape, ctx, (0, 2, 1, 3)), (b, n, inner))

        (_, proj_w), (_, proj_b) = e_proj.params
        msa_out = _linear(tape, ctx, proj_w, proj_b, rules)
        activations.append(msa_out)
        seq = T.add(tape, seq, msa_out)

        (_, ln2_g), (_, ln2_b), (_, fc1_w), (_, fc1_b) = e_fc1.params
        h2 = _norm(tape, seq, ln2_g, ln2_b, rules)
        pre = _linear(tape, h2, fc1_w, fc1_b, rules)
        gelu_inputs.append(pre)
        act = T.gelu(tape, pre)
        activations.append(act)

        (_, fc2_w), (_, fc2_b) = e_fc2.params
        mlp_out = _linear(tape, act, fc2_w, fc2_b, rules)
        activations.append(mlp_out)
        seq = T.add(tape, seq, mlp_out)
        token_states.append(seq)

    head = net.entries[-1]
    (_, fln_g), (_, fln_b), (_, head_w), (_, head_b) = head.params
    final = _norm(tape, seq, fln_g, fln_b, rules)
    cls_state = T.reshape(tape, T.slice_axis(tape, final, 1, 0, 1), (b, d))
    logits = _linear(tape, cls_state, head_w, head_b, rules)
    activations.append(logits)

    return ForwardPass(
        logits=logits,
        tape=tape,
        input=x,
        activations=activations,
        gelu_inputs=gelu_inputs,
        attention=attention,
        token_states=token_states,
        psample_rules=rules,
    )


def eval_per_sample_rule(rule: PerSampleRule, grads: dict[int, np.ndarray]) -> np.ndarray:
    """Per-sample gradient (B, *param.shape) of one parameter, from the
    retained gradient of its producing op under a sum-reduced loss."""
    dy = grads[rule.out_id]
    if rule.kind == "linear_w":
        x = rule.saved
        if dy.ndim == 3:
            return np.matmul(dy.transpose(0, 2, 1), x)  # batched GEMM -> (B, out, in)
        return dy[:, :, None] * x[:, None, :]
    if rule.kind == "bias":
        return dy.sum(axis=1) if dy.ndim == 3 else dy
    if rule.kind == "ln_gain":
        xi = rule.saved
        mu = xi.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(xi.var(axis=-1, keepdims=True) + LAYER_NORM_EPS)
        xhat = (xi - mu) * inv
        return (dy * xhat).sum(axis=1) if dy.ndim == 3 else dy * xhat
    if rule.kind == "ln_bias":
        return dy.sum(axis=1) if dy.ndim == 3 else dy
    if rule.kind == "direct":
        return dy
    raise ValueError(f"unknown per-sample rule {rule.kind}")


def per_sample_grads(
    rules: list[PerSampleRule], grads: dict[int, np.ndarray]
) -> dict[int, np.ndarray]:
    """Evaluate every rule at once; arrays of shape (B, *param.shape) keyed by
    parameter tensor id. Prefer streaming eval_per_sample_rule for big nets."""
    out: dict[int, np.ndarray] = {}
    for rule in rules:
        g = eval_per_sample_rule(rule, grads)
        if rule.param.id in out:
            out[rule.param.id] = out[rule.param.id] + g
        else:
            out[rule.param.id] = g
    return out
