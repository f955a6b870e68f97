"""Zero-cost proxy scorers and the deterministic population scoring pipeline.

Every scorer is pure given (network, batch, options): scorers that substitute
or perturb parameters (the saliency family, the curvature probe, the
perturbation-consistency probe) restore them bitwise before returning. Loss
reductions are frozen per scorer: batch-mean cross entropy for plain gradient
scorers, sum-reduced cross entropy wherever per-sample statistics are needed
(activation gradients under a sum-reduced loss remain per-sample because
samples never mix inside the encoder).
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import network as N
from . import tensor as T
from .data import (
    PROVENANCE_ONES,
    TokenBatch,
    TokenGeometry,
    synth_batch,
)
from .search_space import (
    Genotype,
    exact_param_count,
    flops_estimate,
    genotype_from_json,
    genotype_to_json,
    layer_count,
    model_size_formula,
)

TCET_COMBINATION = "sum over GELU layers of kernel_logdet(layer) * log1p(saliency(layer))"


class ProxyError(RuntimeError):
    """A scorer hit an unrecoverable condition (NaN, bad options)."""


class ProxyId(str, Enum):
    FLOPS = "flops"
    GRADNORM = "gradnorm"
    SNIP = "snip"
    GRASP = "grasp"
    SYNFLOW = "synflow"
    LOGSYNFLOW = "logsynflow"
    FISHER = "fisher"
    JACOBCOV = "jacobcov"
    NASWOT = "naswot"
    DSS = "dss"
    CROZE = "croze"
    TCET = "tcet"
    ZICO = "zico"
    ZICOPP = "zicopp"


ALL_PROXIES: tuple[ProxyId, ...] = tuple(ProxyId)
SPLITTABLE: tuple[ProxyId, ...] = (ProxyId.SNIP, ProxyId.GRADNORM, ProxyId.SYNFLOW, ProxyId.DSS)


def parse_proxies(spec: str) -> list[ProxyId]:
    if spec.strip().lower() == "all":
        return list(ALL_PROXIES)
    out = []
    valid = {p.value: p for p in ALL_PROXIES}
    for name in spec.split(","):
        name = name.strip().lower()
        if name not in valid:
            raise ValueError(f"unknown proxy {name!r}; valid: {', '.join(valid)}")
        out.append(valid[name])
    return out


@dataclass(frozen=True)
class ProxyOptions:
    sign_removal: bool = False  # saliency family: skip the |params| substitution
    module_split: bool = False  # also emit msa/mlp/origin/logarithm sub-scores
    decay_start: int = 6  # first layer whose aggregate weight decays
    loss_kind: str = "cross_entropy"
    var_epsilon: float = 1e-12
    kernel_jitter: float = 1e-6
    jacob_k: float = 1e-5
    croze_noise_std: float = 0.01  # relative to the input batch std
    croze_lr: float = 1e-3
    grasp_h_scale: float = 1e-4
    tcet_combination: str = TCET_COMBINATION
    rng_seed: int = 0  # consumed by stochastic scorers (perturbation noise)

    def __post_init__(self):
        if self.decay_start < 1:
            raise ValueError("decay_start must be >= 1")
        if self.loss_kind != "cross_entropy":
            raise ValueError(f"unsupported loss kind {self.loss_kind!r}")


@dataclass
class ProxyResult:
    score: float
    flags: list[str] = field(default_factory=list)
    per_entry: dict[int, float] | None = None  # entry index -> contribution


@dataclass
class ModuleSplit:
    msa: float
    mlp: float
    origin: float
    logarithm: float | None
    flags: list[str] = field(default_factory=list)


@dataclass
class ScoreRecord:
    genotype_id: str
    depth: int
    embed_dim: int
    mean_heads: float
    mean_mlp_ratio: float
    sum_head_dim: int
    sum_mlp_dim: int
    formula_ms: int
    exact_params: int
    flops: int
    scores: dict[str, float] = field(default_factory=dict)
    sub_scores: dict[str, float] = field(default_factory=dict)
    times: dict[str, float] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)


def derive_seed(*parts) -> int:
    blob = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


# ---------------------------------------------------------------------------
# shared passes


def _ce_pass(net, batch, reduction="mean", retain=(), input_requires_grad=False):
    fp = N.forward(net, batch, input_requires_grad=input_requires_grad)
    loss = T.cross_entropy_logits(fp.tape, fp.logits, batch.labels, reduction=reduction)
    grads = T.backward(fp.tape, loss, retain_ids=retain)
    return fp, grads


def _entry_saliency(net, grads) -> dict[int, float]:
    return {
        e.index: float(sum(np.abs(grads[p.id] * p.data).sum() for p in e.param_tensors()))
        for e in net.entries
    }


def _entry_grad_norms(net, grads) -> dict[int, float]:
    out = {}
    for e in net.entries:
        sq = sum(float((grads[p.id] ** 2).sum()) for p in e.param_tensors())
        out[e.index] = float(np.sqrt(sq))
    return out


def _ones_batch(net) -> TokenBatch:
    geom = net.geom
    return synth_batch(geom, PROVENANCE_ONES, seed=0, batch_size=1)


def _saliency_pass(net, opts: ProxyOptions):
    """All-ones data pass over |params| (unless sign_removal); returns grads
    of the summed logits plus the (substituted) parameter values."""
    snapshot = net.snapshot()
    try:
        if not opts.sign_removal:
            for p in net.parameters():
                p.data[...] = np.abs(p.data)
        fp = N.forward(net, _ones_batch(net))
        objective = T.tensor_sum(fp.tape, fp.logits)
        grads = T.backward(fp.tape, objective)
        params = {p.id: p.data.copy() for p in net.parameters()}
    finally:
        net.restore(snapshot)
    return grads, params


# ---------------------------------------------------------------------------
# scorers


def _score_flops(net, batch, opts) -> ProxyResult:
    return ProxyResult(score=float(flops_estimate(net.genotype, net.geom)))


def _score_gradnorm(net, batch, opts) -> ProxyResult:
    _, grads = _ce_pass(net, batch)
    per_entry = _entry_grad_norms(net, grads)
    return ProxyResult(score=float(sum(per_entry.values())), per_entry=per_entry)


def _score_snip(net, batch, opts) -> ProxyResult:
    _, grads = _ce_pass(net, batch)
    per_entry = _entry_saliency(net, grads)
    return ProxyResult(score=float(sum(per_entry.values())), per_entry=per_entry)


def _score_grasp(net, batch, opts) -> ProxyResult:
    _, grads = _ce_pass(net, batch)
    params = net.parameters()
    v = {p.id: grads[p.id] for p in params}
    norm_v = float(np.sqrt(sum((g**2).sum() for g in v.values())))
    norm_t = float(np.sqrt(sum((p.data**2).sum() for p in params)))
    if norm_v == 0.0:
        return ProxyResult(score=0.0, flags=["degenerate"])
    h = opts.grasp_h_scale * norm_t / norm_v
    snapshot = net.snapshot()
    try:
        for p in params:
            p.data[...] = p.data + h * v[p.id]
        _, g_plus = _ce_pass(net, batch)
        net.restore(snapshot)
        for p in params:
            p.data[...] = p.data - h * v[p.id]
        _, g_minus = _ce_pass(net, batch)
    finally:
        net.restore(snapshot)
    score = 0.0
    for p in params:
        hv = (g_plus[p.id] - g_minus[p.id]) / (2.0 * h)
        score += float(-(hv * p.data).sum())
    return ProxyResult(score=score)


def _score_synflow(net, batch, opts) -> ProxyResult:
    grads, params = _saliency_pass(net, opts)
    per_entry = {
        e.index: float(sum(np.abs(grads[p.id] * params[p.id]).sum() for p in e.param_tensors()))
        for e in net.entries
    }
    return ProxyResult(score=float(sum(per_entry.values())), per_entry=per_entry)


def _score_logsynflow(net, batch, opts) -> ProxyResult:
    grads, params = _saliency_pass(net, opts)
    per_entry = {
        e.index: float(
            sum(
                (np.abs(params[p.id]) * np.log1p(np.abs(grads[p.id]))).sum()
                for p in e.param_tensors()
            )
        )
        for e in net.entries
    }
    return ProxyResult(score=float(sum(per_entry.values())), per_entry=per_entry)


def _nuclear_norm(mat: np.ndarray) -> float:
    return float(np.linalg.svd(mat, compute_uv=False).sum())


def _score_dss(net, batch, opts) -> ProxyResult:
    """Nuclear-norm synaptic diversity over attention weight matrices plus
    synaptic saliency over MLP parameters, under the all-ones pass."""
    grads, params = _saliency_pass(net, opts)
    per_entry: dict[int, float] = {}
    for e in net.entries:
        if e.kind in N.MSA_KINDS:
            val = 0.0
            for _, p in e.params:
                if p.data.ndim == 2:  # bias/norm vectors carry no diversity term
                    val += _nuclear_norm(grads[p.id]) * _nuclear_norm(params[p.id])
            per_entry[e.index] = float(val)
        elif e.kind in N.MLP_KINDS:
            per_entry[e.index] = float(
                sum(np.abs(grads[p.id] * params[p.id]).sum() for p in e.param_tensors())
            )
    return ProxyResult(score=float(sum(per_entry.values())), per_entry=per_entry)


def _score_fisher(net, batch, opts) -> ProxyResult:
    fp = N.forward(net, batch)
    loss = T.cross_entropy_logits(fp.tape, fp.logits, batch.labels, reduction="mean")
    retain = [a.id for a in fp.activations]
    grads = T.backward(fp.tape, loss, retain_ids=retain)
    score = 0.0
    for act in fp.activations:
        z = act.data
        u = (z * grads[act.id]).sum(axis=tuple(range(z.ndim - 1)))
        score += float((u**2).sum())
    return ProxyResult(score=score)


def _score_jacobcov(net, batch, opts) -> ProxyResult:
    fp = N.forward(net, batch, input_requires_grad=True)
    objective = T.tensor_sum(fp.tape, fp.logits)
    grads = T.backward(fp.tape, objective)
    jac = grads[fp.input.id].reshape(batch.batch_size, -1)
    flags = []
    centered = jac - jac.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=1))
    if np.any(norms < 1e-300):
        flags.append("degenerate")
        norms = np.maximum(norms, 1e-300)
    corr = (centered @ centered.T) / np.outer(norms, norms)
    eigvals = np.linalg.eigvalsh(corr)
    if eigvals.min() < 1e-10:
        flags.append("degenerate")
    k = opts.jacob_k
    score = float(-np.sum(np.log(np.maximum(eigvals, 0.0) + k) + 1.0 / (np.maximum(eigvals, 0.0) + k)))
    return ProxyResult(score=score, flags=sorted(set(flags)))


def _gelu_codes(fp: N.ForwardPass) -> list[np.ndarray]:
    return [
        (pre.data > 0.0).reshape(pre.data.shape[0], -1).astype(np.float64)
        for pre in fp.gelu_inputs
    ]


def _kernel_logdet(codes: np.ndarray, jitter: float) -> tuple[float, bool]:
    """Agreement kernel K = N_A - Hamming over binary codes; sign-log-det with
    diagonal jitter. Returns (logabsdet, degenerate)."""
    n_units = codes.shape[1]
    k = codes @ codes.T + (1.0 - codes) @ (1.0 - codes).T
    off = k - np.diag(np.diag(k))
    degenerate = bool((off >= n_units - 0.5).any())
    sign, logdet = np.linalg.slogdet(k + jitter * np.eye(k.shape[0]))
    if sign <= 0:
        degenerate = True
    return float(logdet), degenerate


def _score_naswot(net, batch, opts) -> ProxyResult:
    fp = N.forward(net, batch)
    codes = np.concatenate(_gelu_codes(fp), axis=1)
    logdet, degenerate = _kernel_logdet(codes, opts.kernel_jitter)
    return ProxyResult(score=logdet, flags=["degenerate"] if degenerate else [])


def _score_croze(net, batch, opts) -> ProxyResult:
    """Consistency of activations and parameter gradients between a clean pass
    and a perturbed pass (noisy inputs, one SGD step on the parameters)."""
    rng = np.random.default_rng(opts.rng_seed)
    fp1 = N.forward(net, batch)
    loss1 = T.cross_entropy_logits(fp1.tape, fp1.logits, batch.labels)
    retain1 = [a.id for a in fp1.activations]
    grads1 = T.backward(fp1.tape, loss1, retain_ids=retain1)
    acts1 = [a.data for a in fp1.activations]  # fp1 keeps these alive, never mutated

    noise_std = opts.croze_noise_std * float(batch.data.std())
    noisy = TokenBatch(
        data=batch.data + rng.standard_normal(batch.data.shape) * noise_std,
        labels=batch.labels,
        provenance=batch.provenance,
    )
    snapshot = net.snapshot()
    try:
        for p in net.parameters():
            p.data[...] = p.data - opts.croze_lr * grads1[p.id]
        fp2 = N.forward(net, noisy)
        loss2 = T.cross_entropy_logits(fp2.tape, fp2.logits, noisy.labels)
        grads2 = T.backward(fp2.tape, loss2)
    finally:
        net.restore(snapshot)

    def cos(a, b):
        na, nb = float(np.sqrt((a**2).sum())), float(np.sqrt((b**2).sum()))
        return float((a * b).sum()) / max(na * nb, 1e-12)

    total = 0.0
    for i, e in enumerate(net.entries):
        act_sim = cos(acts1[i], fp2.activations[i].data)
        g1 = np.concatenate([grads1[p.id].ravel() for p in e.param_tensors()])
        g2 = np.concatenate([grads2[p.id].ravel() for p in e.param_tensors()])
        total += act_sim + cos(g1, g2)
    return ProxyResult(score=total / len(net.entries))


def _score_tcet(net, batch, opts) -> ProxyResult:
    """Layerwise product of activation-pattern expressivity and gradient
    saliency, over the layers where both are defined (the GELU layers)."""
    fp = N.forward(net, batch)
    loss = T.cross_entropy_logits(fp.tape, fp.logits, batch.labels)
    grads = T.backward(fp.tape, loss)
    codes = _gelu_codes(fp)
    fc1_entries = [e for e in net.entries if e.kind == N.KIND_MLP_FC1]
    flags: set[str] = set()
    score = 0.0
    for e, code in zip(fc1_entries, codes):
        logdet, degenerate = _kernel_logdet(code, opts.kernel_jitter)
        if degenerate:
            flags.add("degenerate")
        saliency = float(sum(np.abs(grads[p.id] * p.data).sum() for p in e.param_tensors()))
        score += logdet * float(np.log1p(saliency))
    return ProxyResult(score=score, flags=sorted(flags))


def _zico_ratio_sum(g: np.ndarray, eps: float, work: np.ndarray) -> float:
    """sum over parameters of E_s|g| / sqrt(Var_s g + eps), reusing `work`
    as scratch so big per-sample blocks never allocate fresh pages."""
    w = work[: g.size].reshape(g.shape)
    np.abs(g, out=w)
    mean_abs = w.mean(axis=0)
    mean = g.mean(axis=0)
    np.subtract(g, mean, out=w)
    np.multiply(w, w, out=w)
    var = w.mean(axis=0)
    return float((mean_abs / np.sqrt(var + eps)).sum())


def _score_zico(net, batch, opts) -> ProxyResult:
    """Per-layer log of summed |mean|/std ratios of per-sample gradients.

    Per-sample gradients come from one sum-reduced backward plus the network's
    reconstruction rules; the naive per-sample loop is the test oracle.
    """
    fp = N.forward(net, batch)
    loss = T.cross_entropy_logits(fp.tape, fp.logits, batch.labels, reduction="sum")
    retain = [r.out_id for r in fp.psample_rules]
    grads = T.backward(fp.tape, loss, retain_ids=retain)

    b = batch.batch_size
    max_block = b * max(p.size for p in net.parameters())
    buf = np.empty(max_block)
    work = np.empty(max_block)

    entry_sum = {e.index: 0.0 for e in net.entries}
    entry_by_param = {p.id: e.index for e in net.entries for p in e.param_tensors()}
    for rule in fp.psample_rules:
        if rule.kind == "linear_w" and grads[rule.out_id].ndim == 3:
            dy, x = grads[rule.out_id], rule.saved
            g = buf[: b * dy.shape[2] * x.shape[2]].reshape(b, dy.shape[2], x.shape[2])
            np.matmul(dy.transpose(0, 2, 1), x, out=g)
        else:
            g = N.eval_per_sample_rule(rule, grads)  # (B, *param.shape)
        entry_sum[entry_by_param[rule.param.id]] += _zico_ratio_sum(
            g, opts.var_epsilon, work
        )

    flags = []
    score = 0.0
    for e in net.entries:
        se = entry_sum[e.index]
        if se <= 0.0:
            flags.append("degenerate")
            se = se + opts.var_epsilon
        score += float(np.log(se))
    return ProxyResult(score=score, flags=sorted(set(flags)))


def zicopp_decay_weights(n_layers: int, decay_start: int) -> np.ndarray:
    """Aggregation weights: 1 before decay_start, harmonic decay 1/(i-n+1)
    from decay_start through the penultimate layer, 1 for the last layer."""
    if not (1 <= decay_start <= n_layers - 1):
        raise ProxyError(f"decay_start {decay_start} outside [1, {n_layers - 1}]")
    w = np.ones(n_layers)
    for i in range(decay_start, n_layers):  # 1-based layer ids n .. N-1
        w[i - 1] = 1.0 / (i - decay_start + 1)
    w[-1] = 1.0
    return w


def zicopp_aggregate(layer_stats: Sequence[float], decay_start: int) -> float:
    stats = np.asarray(layer_stats, dtype=np.float64)
    return float((stats * zicopp_decay_weights(len(stats), decay_start)).sum())


def _score_zicopp(net, batch, opts) -> ProxyResult:
    """Activation-level mean/std statistic per layer with harmonic layer decay."""
    fp = N.forward(net, batch)
    loss = T.cross_entropy_logits(fp.tape, fp.logits, batch.labels, reduction="sum")
    retain = [a.id for a in fp.activations]
    grads = T.backward(fp.tape, loss, retain_ids=retain)

    flags = []
    stats = []
    for act in fp.activations:
        z = act.data
        prod = z * grads[act.id]
        if prod.ndim > 2:
            u = prod.sum(axis=tuple(range(1, prod.ndim - 1)))  # (B, C)
        else:
            u = prod
        q = u**2
        m = q.mean(axis=0)
        v = q.var(axis=0)
        se = float((m / np.sqrt(v + opts.var_epsilon)).sum())
        if se <= 0.0:
            flags.append("degenerate")
            se = se + opts.var_epsilon
        stats.append(float(np.log(se)))
    score = zicopp_aggregate(stats, opts.decay_start)
    return ProxyResult(score=score, flags=sorted(set(flags)))


_SCORERS = {
    ProxyId.FLOPS: _score_flops,
    ProxyId.GRADNORM: _score_gradnorm,
    ProxyId.SNIP: _score_snip,
    ProxyId.GRASP: _score_grasp,
    ProxyId.SYNFLOW: _score_synflow,
    ProxyId.LOGSYNFLOW: _score_logsynflow,
    ProxyId.FISHER: _score_fisher,
    ProxyId.JACOBCOV: _score_jacobcov,
    ProxyId.NASWOT: _score_naswot,
    ProxyId.DSS: _score_dss,
    ProxyId.CROZE: _score_croze,
    ProxyId.TCET: _score_tcet,
    ProxyId.ZICO: _score_zico,
    ProxyId.ZICOPP: _score_zicopp,
}


def run_proxy(proxy: ProxyId, net: N.NetworkInstance, batch: TokenBatch, opts: ProxyOptions) -> ProxyResult:
    result = _SCORERS[proxy](net, batch, opts)
    if not np.isfinite(result.score):
        result.flags = sorted(set(result.flags) | {"nonfinite"})
    return result


def compute_proxy(proxy: ProxyId, net: N.NetworkInstance, batch: TokenBatch, opts: ProxyOptions | None = None) -> float:
    return run_proxy(proxy, net, batch, opts or ProxyOptions()).score


def compute_module_split(
    proxy: ProxyId, net: N.NetworkInstance, batch: TokenBatch, opts: ProxyOptions | None = None
) -> ModuleSplit:
    """Attention-vs-MLP decomposition: origin = msa + mlp, logarithm =
    log(msa * mlp) when both sub-scores are positive."""
    if proxy not in SPLITTABLE:
        raise ProxyError(f"module split undefined for {proxy.value}")
    opts = opts or ProxyOptions()
    result = run_proxy(proxy, net, batch, opts)
    if result.per_entry is None:
        raise ProxyError(f"{proxy.value} produced no per-entry contributions")
    kinds = {e.index: e.kind for e in net.entries}
    msa = float(sum(v for i, v in result.per_entry.items() if kinds[i] in N.MSA_KINDS))
    mlp = float(sum(v for i, v in result.per_entry.items() if kinds[i] in N.MLP_KINDS))
    flags = list(result.flags)
    if msa > 0.0 and mlp > 0.0:
        logarithm = float(np.log(msa) + np.log(mlp))
    else:
        logarithm = None
        flags.append("log_undefined")
    return ModuleSplit(msa=msa, mlp=mlp, origin=msa + mlp, logarithm=logarithm, flags=sorted(set(flags)))


# ---------------------------------------------------------------------------
# population scoring


def score_genotype(
    g: Genotype,
    batch: TokenBatch,
    geom: TokenGeometry,
    proxies: Sequence[ProxyId],
    opts: ProxyOptions,
    seed: int,
) -> ScoreRecord:
    """Score one genotype on a freshly built network; init and noise seeds are
    derived from (global seed, genotype id) so duplicates score identically."""
    init_seed = derive_seed(seed, "init", g.id)
    local_opts = replace(opts, rng_seed=derive_seed(seed, "noise", g.id))
    net = N.build(g, geom, init_seed)
    record = ScoreRecord(
        genotype_id=g.id,
        depth=g.depth,
        embed_dim=g.embed_dim,
        mean_heads=g.mean_heads(),
        mean_mlp_ratio=g.mean_mlp_ratio(),
        sum_head_dim=g.sum_head_dim(),
        sum_mlp_dim=g.sum_mlp_dim(),
        formula_ms=model_size_formula(g, geom.num_classes),
        exact_params=exact_param_count(g, geom),
        flops=flops_estimate(g, geom),
    )
    for proxy in proxies:
        t0 = time.perf_counter()
        try:
            result = run_proxy(proxy, net, batch, local_opts)
            record.scores[proxy.value] = result.score
            if result.flags:
                record.flags[proxy.value] = "+".join(result.flags)
        except (T.NumericError, T.ShapeError, ProxyError) as exc:
            record.scores[proxy.value] = float("nan")
            record.flags[proxy.value] = f"error:{type(exc).__name__}"
        record.times[proxy.value] = time.perf_counter() - t0
    if opts.module_split:
        for proxy in proxies:
            if proxy not in SPLITTABLE:
                continue
            try:
                split = compute_module_split(proxy, net, batch, local_opts)
            except (T.NumericError, T.ShapeError, ProxyError) as exc:
                record.flags[f"{proxy.value}_split"] = f"error:{type(exc).__name__}"
                continue
            record.sub_scores[f"msa_{proxy.value}"] = split.msa
            record.sub_scores[f"mlp_{proxy.value}"] = split.mlp
            record.sub_scores[f"origin_{proxy.value}"] = split.origin
            record.sub_scores[f"logarithm_{proxy.value}"] = (
                split.logarithm if split.logarithm is not None else float("nan")
            )
            extra = [f for f in split.flags if f == "log_undefined"]
            if extra:
                record.flags[f"{proxy.value}_split"] = "+".join(extra)
    return record


_WORKER_CTX: dict = {}


def _init_worker(batch_data, batch_labels, provenance, geom, proxy_names, opts_dict, seed):
    _WORKER_CTX["batch"] = TokenBatch(data=batch_data, labels=batch_labels, provenance=provenance)
    _WORKER_CTX["geom"] = geom
    _WORKER_CTX["proxies"] = [ProxyId(p) for p in proxy_names]
    _WORKER_CTX["opts"] = ProxyOptions(**opts_dict)
    _WORKER_CTX["seed"] = seed


def _score_worker(genotype_line: str) -> ScoreRecord:
    g = genotype_from_json(genotype_line)
    return score_genotype(
        g,
        _WORKER_CTX["batch"],
        _WORKER_CTX["geom"],
        _WORKER_CTX["proxies"],
        _WORKER_CTX["opts"],
        _WORKER_CTX["seed"],
    )


def score_population(
    genotypes: Sequence[Genotype],
    batch: TokenBatch,
    geom: TokenGeometry,
    proxies: Sequence[ProxyId],
    opts: ProxyOptions,
    seed: int,
    workers: int = 1,
) -> list[ScoreRecord]:
    """One record per genotype, in input order, invariant to worker count."""
    if not genotypes:
        raise ValueError("empty population")
    if ProxyId.ZICOPP in proxies:
        min_depth = min(g.depth for g in genotypes)
        if opts.decay_start > 4 * min_depth + 1:
            raise ProxyError(
                f"decay_start {opts.decay_start} exceeds 4*min_depth+1 = {4 * min_depth + 1}"
            )
    if workers <= 1:
        return [score_genotype(g, batch, geom, proxies, opts, seed) for g in genotypes]
    lines = [genotype_to_json(g) for g in genotypes]
    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_init_worker,
        initargs=(
            batch.data,
            batch.labels,
            batch.provenance,
            geom,
            [p.value for p in proxies],
            asdict(opts),
            seed,
        ),
    ) as pool:
        return list(pool.map(_score_worker, lines, chunksize=1))


# ---------------------------------------------------------------------------
# score table CSV

CSV_BASE_COLUMNS = (
    "id",
    "depth",
    "embed_dim",
    "mean_heads",
    "mean_mlp_ratio",
    "sum_head_dim",
    "sum_mlp_dim",
    "formula_ms",
    "exact_params",
    "flops",
)


def score_columns(proxies: Sequence[ProxyId], module_split: bool = False) -> list[str]:
    """Frozen column layout. The flops estimate lives in the base columns, so
    the FLOPS proxy contributes no duplicate score column."""
    cols = list(CSV_BASE_COLUMNS)
    cols += [p.value for p in proxies if p != ProxyId.FLOPS]
    if module_split:
        for p in proxies:
            if p in SPLITTABLE:
                cols += [f"{kind}_{p.value}" for kind in ("msa", "mlp", "origin", "logarithm")]
    cols += [f"time_{p.value}" for p in proxies]
    cols.append("flags")
    return cols


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def records_to_rows(
    records: Sequence[ScoreRecord], proxies: Sequence[ProxyId], module_split: bool = False
) -> tuple[list[str], list[list[str]]]:
    cols = score_columns(proxies, module_split)
    rows = []
    for r in records:
        base = {
            "id": r.genotype_id,
            "depth": r.depth,
            "embed_dim": r.embed_dim,
            "mean_heads": r.mean_heads,
            "mean_mlp_ratio": r.mean_mlp_ratio,
            "sum_head_dim": r.sum_head_dim,
            "sum_mlp_dim": r.sum_mlp_dim,
            "formula_ms": r.formula_ms,
            "exact_params": r.exact_params,
            "flops": r.flops,
        }
        row = []
        for col in cols:
            if col in base:
                row.append(_fmt(base[col]))
            elif col.startswith("time_"):
                row.append(format(r.times.get(col[5:], float("nan")), ".6f"))
            elif col == "flags":
                row.append(";".join(f"{k}:{v}" for k, v in sorted(r.flags.items())))
            elif col in r.scores:
                row.append(_fmt(r.scores[col]))
            elif col in r.sub_scores:
                row.append(_fmt(r.sub_scores[col]))
            else:
                row.append("nan")
        rows.append(row)
    return cols, rows


def write_scores_csv(
    records: Sequence[ScoreRecord],
    proxies: Sequence[ProxyId],
    path,
    module_split: bool = False,
) -> None:
    cols, rows = records_to_rows(records, proxies, module_split)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
