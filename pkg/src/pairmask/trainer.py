"""End-to-end pre-training: data preparation, the optimizer, the step
loop, checkpoints, and the two evaluation probes.

Randomness is stateless. Every draw comes from a generator seeded as
``default_rng([seed, stream, step, slot])``, so a resumed run replays
the exact stream of the uninterrupted one and per-sample draws do not
depend on how a batch is chunked. Gradients accumulate sample by sample
into the parameter leaves (each sample's graph is built, differentiated
and dropped before the next), which makes batch math identical however
the samples are grouped.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from . import corpus as corpus_mod
from .corpus import (
    AnnotatedReport,
    CorpusStats,
    MASK_ID,
    TokenSeq,
    Vocabulary,
    annotate,
    compute_stats,
    tokenize,
)
from .distill import concat_input, distill_rule_based
from .losses import (
    LossBundle,
    RebalanceFactors,
    compute_rebalance,
    loss_mim,
    loss_mlm,
    loss_sr,
    loss_total,
    unit_factors,
)
from .masking import apply_text_mask, patchify, plan_patch_mask, plan_text_mask
from .model import Model
from .synthgen import LABEL_PRESENT, SynthSample, downsample

STREAM_TEXT = 1
STREAM_IMAGE = 2
STREAM_DATA = 3
STREAM_INIT = 4     # consumed inside Model
STREAM_EVAL = 5
STREAM_PROBE = 6


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    lr: float = 1.5e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies only to rank >= 2 parameters; gains, biases and other
    vectors are left unregularized. Moment buffers stay in the
    parameter dtype so checkpoints restore bit-exactly.
    """

    def __init__(self, params: dict, cfg: Optional[OptimizerConfig] = None):
        self.params = params
        self.cfg = cfg if cfg is not None else OptimizerConfig()
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"AdamW: non-finite gradient in {name}")
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + c.eps)
            new = p.data - c.lr * update
            if p.data.ndim >= 2:
                new = new - c.lr * c.weight_decay * p.data
            p.assign_(new)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    vocab: Vocabulary
    docs: list              # AnnotatedReport per sample, aligned with samples
    stats: CorpusStats
    factors: RebalanceFactors


def _truncate(seq: TokenSeq, max_len: int) -> TokenSeq:
    if seq.real_len <= max_len:
        return seq
    return TokenSeq(
        surfaces=list(seq.surfaces[:max_len]),
        ids=seq.ids[:max_len].copy(),
        source=seq.source,
        boundary=seq.boundary if seq.boundary is not None and seq.boundary < max_len else None,
    )


def prepare_training_data(
    samples: Sequence[SynthSample],
    lexicon: frozenset = corpus_mod.DEFAULT_ENTITY_LEXICON,
    beta: int = corpus_mod.DEFAULT_BETA,
    max_text_len: int = 64,
    lambda_neg: float = 0.05,
    use_distill: bool = True,
    use_rebalance: bool = True,
    distilled_texts: Optional[Sequence[str]] = None,
) -> PreparedData:
    """Annotate reports, append distilled summaries, fit loss weights.

    Distillation defaults to the deterministic rule-based path;
    externally produced texts (for example from a remote model) can be
    passed pre-computed via ``distilled_texts``, aligned with samples.
    """
    if not samples:
        raise ValueError("prepare_training_data: no samples")
    texts = [s.report for s in samples]

    if use_distill:
        if distilled_texts is None:
            vocab0 = Vocabulary.from_texts(texts)
            pre = [annotate(tokenize(t, vocab0), lexicon, beta=beta) for t in texts]
            distilled_texts = [distill_rule_based(a).raw for a in pre]
        elif len(distilled_texts) != len(samples):
            raise ValueError("prepare_training_data: distilled_texts misaligned with samples")
        vocab = Vocabulary.from_texts(list(texts) + [d for d in distilled_texts if d])
        docs = []
        for text, extra in zip(texts, distilled_texts):
            orig = tokenize(text, vocab)
            if extra:
                seq = concat_input(orig, tokenize(extra, vocab), max_len=max_text_len)
            else:
                seq = _truncate(orig, max_text_len)
            docs.append(annotate(seq, lexicon, beta=beta))
    else:
        vocab = Vocabulary.from_texts(texts)
        docs = [
            annotate(_truncate(tokenize(t, vocab), max_text_len), lexicon, beta=beta)
            for t in texts
        ]

    stats = compute_stats(docs)
    if use_rebalance:
        factors = compute_rebalance(stats.n_neg_tokens, stats.n_oth_tokens, lambda_neg)
    else:
        factors = unit_factors(stats.n_neg_tokens, stats.n_oth_tokens)
    return PreparedData(vocab=vocab, docs=docs, stats=stats, factors=factors)


# ---------------------------------------------------------------------------
# the training step
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 8
    seed: int = 0
    log_every: int = 10
    ckpt_every: int = 0             # 0 disables periodic checkpoints
    ckpt_dir: Optional[str] = None
    use_sr: bool = True
    use_descriptor_mask: bool = True


def sample_losses(
    model: Model,
    sample: SynthSample,
    doc: AnnotatedReport,
    factors: RebalanceFactors,
    rng_image: np.random.Generator,
    rng_text: np.random.Generator,
    use_sr: bool = True,
    use_descriptor_mask: bool = True,
    attention: Optional[Callable[[SynthSample], np.ndarray]] = None,
) -> LossBundle:
    """All three objectives for one image/report pair."""
    cfg = model.cfg
    side = sample.image.shape[0]
    if side != cfg.image_size * cfg.sr_factor:
        raise ValueError(
            f"sample_losses: sample side {side} vs model target {cfg.image_size * cfg.sr_factor}"
        )
    low = downsample(sample.image, cfg.sr_factor).astype(np.float64 if model.dtype == np.float64 else np.float32)

    plan = plan_patch_mask(cfg.n_patches, rng_image, ratio=cfg.patch_mask_ratio)
    patches = patchify(low, cfg.patch)
    f_v = model.encode_image(patches[list(plan.visible)], plan.visible)
    recon = model.decode_image(f_v, plan)
    mim = loss_mim(recon, low, plan, cfg.patch)

    if use_sr:
        weights = sample.attention if attention is None else attention(sample)
        sr = loss_sr(model.sr_head(recon), sample.image.astype(low.dtype), weights)
    else:
        sr = ad.constant(np.zeros(()), dtype=low.dtype)

    spans = doc.spans if use_descriptor_mask else []
    tplan = plan_text_mask(doc.seq, spans, rng_text, ratio=cfg.text_mask_ratio)
    masked = apply_text_mask(doc.seq, tplan, MASK_ID)
    bundle = model.mscf_fuse(f_v, model.embed_text(masked.ids))
    logits = model.decode_text(bundle.f_f)
    mlm = loss_mlm(logits, doc.seq.ids, tplan, factors)

    return loss_total(mim, mlm, sr)


def train_step(
    model: Model,
    opt: AdamW,
    pairs: Sequence[tuple],
    factors: RebalanceFactors,
    step: int,
    seed: int,
    use_sr: bool = True,
    use_descriptor_mask: bool = True,
    attention: Optional[Callable[[SynthSample], np.ndarray]] = None,
) -> dict:
    """One optimizer step over ``pairs`` of (sample, doc).

    Per-sample generators are keyed by (seed, stream, step, slot), and
    gradients add into the leaves one sample at a time, so any chunking
    of the same pairs produces bit-identical parameters.
    """
    opt.zero_grad()
    n = len(pairs)
    sums = {"l_mim": 0.0, "l_mlm": 0.0, "l_sr": 0.0, "total": 0.0}
    for slot, (sample, doc) in enumerate(pairs):
        rng_image = np.random.default_rng([seed, STREAM_IMAGE, step, slot])
        rng_text = np.random.default_rng([seed, STREAM_TEXT, step, slot])
        try:
            bundle = sample_losses(
                model, sample, doc, factors, rng_image, rng_text,
                use_sr=use_sr, use_descriptor_mask=use_descriptor_mask,
                attention=attention,
            )
        except FloatingPointError as exc:
            raise TrainingError(f"step {step}, sample {sample.id}: {exc}") from exc
        for key, value in bundle.values().items():
            sums[key] += value
        ad.backward(ad.scale(bundle.total, 1.0 / n))
    try:
        opt.step()
    except FloatingPointError as exc:
        raise TrainingError(f"step {step}: {exc}") from exc
    return {key: value / n for key, value in sums.items()}


def pretrain(
    model: Model,
    samples: Sequence[SynthSample],
    data: PreparedData,
    cfg: TrainConfig,
    opt: Optional[AdamW] = None,
    opt_cfg: Optional[OptimizerConfig] = None,
    start_step: int = 0,
    log: Optional[Callable[[str], None]] = None,
    attention: Optional[Callable[[SynthSample], np.ndarray]] = None,
) -> list:
    """Run the step loop; returns one metrics dict per step."""
    if len(samples) != len(data.docs):
        raise ValueError("pretrain: samples and prepared docs misaligned")
    if opt is None:
        opt = AdamW(model.params, opt_cfg)
    pool = list(zip(samples, data.docs))
    metrics = []
    for step in range(start_step, cfg.steps):
        t0 = time.perf_counter()
        rng_data = np.random.default_rng([cfg.seed, STREAM_DATA, step])
        idx = rng_data.integers(0, len(pool), size=cfg.batch_size)
        row = train_step(
            model, opt, [pool[i] for i in idx], data.factors,
            step=step, seed=cfg.seed,
            use_sr=cfg.use_sr, use_descriptor_mask=cfg.use_descriptor_mask,
            attention=attention,
        )
        row["step"] = step
        row["wall_ms"] = (time.perf_counter() - t0) * 1e3
        metrics.append(row)
        if log is not None and cfg.log_every and step % cfg.log_every == 0:
            log(
                f"step {step}: total {row['total']:.4f} "
                f"(mim {row['l_mim']:.4f}, mlm {row['l_mlm']:.4f}, sr {row['l_sr']:.4f})"
            )
        if cfg.ckpt_every and cfg.ckpt_dir and (step + 1) % cfg.ckpt_every == 0:
            save_checkpoint(cfg.ckpt_dir, model, opt, step + 1)
    return metrics


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def save_checkpoint(ckpt_dir, model: Model, opt: AdamW, step: int) -> None:
    """Write params + optimizer state as a manifest and one raw blob.

    The blob is little-endian raw array bytes in manifest order; the
    manifest line format is name, dtype, shape, byte offset. Files are
    written via temp + rename, manifest last, so a torn write never
    leaves a manifest pointing at a half-written blob.
    """
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    entries = [(name, p.data) for name, p in model.params.items()]
    entries += [(f"adam.m.{name}", opt.m[name]) for name in model.params]
    entries += [(f"adam.v.{name}", opt.v[name]) for name in model.params]

    lines = [f"#meta\tstep={step}\tadam_t={opt.t}"]
    chunks = []
    offset = 0
    for name, arr in entries:
        arr_le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = arr_le.tobytes()
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name}\t{arr.dtype.name}\t{shape}\t{offset}")
        chunks.append(raw)
        offset += len(raw)

    cfg_lines = [f"{f.name}={getattr(model.cfg, f.name)}" for f in fields(model.cfg)]
    cfg_lines += [f"opt.{f.name}={getattr(opt.cfg, f.name)}" for f in fields(opt.cfg)]

    _atomic_write_bytes(ckpt_dir / "params.bin", b"".join(chunks))
    _atomic_write_bytes(ckpt_dir / "config.txt", ("\n".join(cfg_lines) + "\n").encode())
    _atomic_write_bytes(ckpt_dir / "manifest.tsv", ("\n".join(lines) + "\n").encode())


def load_checkpoint(ckpt_dir, model: Model, opt: AdamW) -> int:
    """Restore params and optimizer state in place; returns the step.

    Every named array must match the model bit-for-bit in dtype and
    shape; mismatches are collected and reported together. A blob
    shorter than the manifest promises raises before anything mutates.
    """
    ckpt_dir = Path(ckpt_dir)
    manifest = (ckpt_dir / "manifest.tsv").read_text().splitlines()
    blob = (ckpt_dir / "params.bin").read_bytes()

    meta = dict(kv.split("=", 1) for kv in manifest[0].split("\t")[1:])
    step = int(meta["step"])
    adam_t = int(meta["adam_t"])

    expected = {name: p.data for name, p in model.params.items()}
    expected.update({f"adam.m.{name}": opt.m[name] for name in model.params})
    expected.update({f"adam.v.{name}": opt.v[name] for name in model.params})

    parsed = {}
    offenders = []
    for line in manifest[1:]:
        name, dtype_name, shape_s, offset_s = line.split("\t")
        shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split(","))
        if name not in expected:
            offenders.append(f"{name}: not in model")
            continue
        target = expected[name]
        if target.shape != shape or target.dtype.name != dtype_name:
            offenders.append(
                f"{name}: checkpoint {dtype_name}{list(shape)} vs model "
                f"{target.dtype.name}{list(target.shape)}"
            )
            continue
        parsed[name] = (int(offset_s), shape, np.dtype(dtype_name))
    missing = set(expected) - parsed.keys() - {o.split(":")[0] for o in offenders}
    offenders.extend(f"{name}: missing from checkpoint" for name in sorted(missing))
    if offenders:
        raise ValueError("load_checkpoint: " + "; ".join(sorted(offenders)))

    arrays = {}
    for name, (offset, shape, dtype) in parsed.items():
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if offset + nbytes > len(blob):
            raise ValueError(
                f"load_checkpoint: blob truncated at {name} "
                f"(needs {offset + nbytes} bytes, has {len(blob)})"
            )
        arrays[name] = np.frombuffer(
            blob, dtype=dtype.newbyteorder("<"), count=nbytes // dtype.itemsize, offset=offset
        ).reshape(shape).astype(dtype)

    for name, p in model.params.items():
        p.assign_(arrays[name])
    for name in model.params:
        opt.m[name] = arrays[f"adam.m.{name}"].copy()
        opt.v[name] = arrays[f"adam.v.{name}"].copy()
    opt.t = adam_t
    return step


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def eval_descriptor_accuracy(
    model: Model,
    samples: Sequence[SynthSample],
    data: PreparedData,
    seed: int = 0,
) -> float:
    """Argmax accuracy on masked other-class descriptor tokens.

    Images are encoded fully visible; text masking replays a fixed
    evaluation stream so repeated calls score the same predictions.
    """
    cfg = model.cfg
    correct = 0
    total = 0
    for i, (sample, doc) in enumerate(zip(samples, data.docs)):
        if not any(s.polarity == corpus_mod.POLARITY_OTHER and s.token_indices for s in doc.spans):
            continue
        low = downsample(sample.image, cfg.sr_factor).astype(np.float32)
        f_v = model.encode_image(patchify(low, cfg.patch), range(cfg.n_patches))
        rng = np.random.default_rng([seed, STREAM_EVAL, i])
        tplan = plan_text_mask(doc.seq, doc.spans, rng, ratio=cfg.text_mask_ratio)
        masked = apply_text_mask(doc.seq, tplan, MASK_ID)
        bundle = model.mscf_fuse(f_v, model.embed_text(masked.ids))
        logits = model.decode_text(bundle.f_f).data
        pred = logits.argmax(axis=1)
        for pos in tplan.descriptor_oth:
            total += 1
            if pred[pos] == doc.seq.ids[pos]:
                correct += 1
    if total == 0:
        raise ValueError("eval_descriptor_accuracy: no other-descriptor tokens in corpus")
    return correct / total


def extract_features(model: Model, samples: Sequence[SynthSample]) -> np.ndarray:
    """Mean-pooled encoder features per sample, (n, dim) float64."""
    rows = []
    for sample in samples:
        low = downsample(sample.image, model.cfg.sr_factor).astype(np.float32)
        rows.append(model.forward_finetune(low, mode="global").data.astype(np.float64))
    return np.stack(rows)


def _fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-3) -> np.ndarray:
    """L2-regularized logistic regression via L-BFGS; returns [w, b]."""
    n, d = x.shape
    xb = np.hstack([x, np.ones((n, 1))])

    def objective(wb):
        z = xb @ wb
        # log(1 + exp(-y z)) with the stable split by sign
        m = np.maximum(0.0, -z)
        nll = (1.0 - y) * z + m + np.log(np.exp(-m) + np.exp(-z - m))
        reg = 0.5 * l2 * (wb[:d] @ wb[:d])
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        grad = xb.T @ (p - y) / n + l2 * np.r_[wb[:d], 0.0]
        return nll.mean() + reg, grad

    res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B")
    return res.x


@dataclass
class ProbeResult:
    per_entity: dict
    macro_accuracy: float
    n_entities: int


def linear_probe(
    features: np.ndarray,
    samples: Sequence[SynthSample],
    entities: Sequence[str],
    train_frac: float = 0.8,
    seed: int = 0,
    shuffle_labels: bool = False,
) -> ProbeResult:
    """Per-entity presence classification on frozen features.

    Features are standardized with train-split statistics. Entities
    whose train or test split is single-class are skipped; accuracy is
    the unweighted mean over the rest. ``shuffle_labels`` permutes
    labels before splitting, the no-signal control.
    """
    n = len(samples)
    if features.shape[0] != n:
        raise ValueError("linear_probe: features misaligned with samples")
    rng = np.random.default_rng([seed, STREAM_PROBE])
    order = rng.permutation(n)
    n_train = int(round(train_frac * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"linear_probe: degenerate split {n_train}/{n - n_train}")
    train_idx, test_idx = order[:n_train], order[n_train:]

    per_entity = {}
    for entity in entities:
        y = np.array([1.0 if s.labels.get(entity) == LABEL_PRESENT else 0.0 for s in samples])
        if shuffle_labels:
            y = y[np.random.default_rng([seed, STREAM_PROBE, hash(entity) % 2**31]).permutation(n)]
        y_tr, y_te = y[train_idx], y[test_idx]
        if len(np.unique(y_tr)) < 2 or len(np.unique(y_te)) < 2:
            continue
        mu = features[train_idx].mean(axis=0)
        sd = features[train_idx].std(axis=0) + 1e-8
        x_tr = (features[train_idx] - mu) / sd
        x_te = (features[test_idx] - mu) / sd
        wb = _fit_logistic(x_tr, y_tr)
        pred = (np.hstack([x_te, np.ones((len(x_te), 1))]) @ wb) > 0
        per_entity[entity] = float((pred == y_te.astype(bool)).mean())

    if not per_entity:
        raise ValueError("linear_probe: every entity was single-class in a split")
    macro = float(np.mean(list(per_entity.values())))
    return ProbeResult(per_entity=per_entity, macro_accuracy=macro, n_entities=len(per_entity))


class ModelAttention:
    """Text-conditioned patch relevance from the trained model.

    Cosine similarity between each patch feature and the mean token
    feature, clamped at zero, upsampled to the sample's resolution and
    max-normalized. A learned stand-in for ground-truth lesion maps
    when those are unavailable.
    """

    def __init__(self, model: Model, vocab: Vocabulary):
        self.model = model
        self.vocab = vocab

    def __call__(self, sample: SynthSample) -> np.ndarray:
        cfg = self.model.cfg
        low = downsample(sample.image, cfg.sr_factor).astype(np.float32)
        f_v = self.model.encode_image(patchify(low, cfg.patch), range(cfg.n_patches))
        seq = _truncate(tokenize(sample.report, self.vocab), cfg.max_text_len)
        bundle = self.model.mscf_fuse(f_v, self.model.embed_text(seq.ids))
        t = bundle.f_t.data.mean(axis=0)
        v = bundle.f_v_local.data
        cos = (v @ t) / (np.linalg.norm(v, axis=1) * np.linalg.norm(t) + 1e-8)
        grid = cfg.grid
        weights = np.maximum(cos, 0.0).reshape(grid, grid)
        cell = sample.image.shape[0] // grid
        full = np.kron(weights, np.ones((cell, cell)))
        peak = full.max()
        return (full / peak if peak > 0 else full).astype(np.float32)
