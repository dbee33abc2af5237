"""Training-sample construction and the pretrain / extend / fine-tune loop.

A sample pairs (a) the sentences before a chosen target sentence, (b) a
random 20-60% of the target sentence's words kept in sentence order, with
up to 10% extra noise words that do not occur in the target sentence, and
(c) the target sentence plus whatever follows as gold labels. Everything
is capped at 256 subword tokens by dropping context sentences from the
front, then trailing gold sentences.

Supervision is teacher-forced next-token prediction over the gold tokens
only: the present input is the end-of-text primer followed by gold[:-1],
so the controlled model and the plain LM are scored on identical label
positions and their token accuracies are directly comparable.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bpe as bpe_mod
from .bpe import BpeVocab, TokenSeq, encode
from .corpus import Article, ArticleStore
from .errors import TrainingError
from .model import BaseLm, GemModel, Parameter, save_checkpoint
from .tensor import Tensor, concat, cross_entropy_mean

_STRIP_CHARS = "\"'!?,.;:()[]{}<>«»“”‘’`-–—"


def sentence_words(text: str) -> list[str]:
    """Whitespace tokens with surrounding punctuation stripped."""
    words = []
    for raw in text.split():
        w = raw.strip(_STRIP_CHARS)
        if w:
            words.append(w)
    return words


@dataclass(frozen=True)
class SampleBuilderConfig:
    select_frac_min: float = 0.20
    select_frac_max: float = 0.60
    noise_frac_max: float = 0.10
    max_sample_tokens: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.select_frac_min <= self.select_frac_max <= 1):
            raise TrainingError("selection fractions must satisfy 0 < min <= max <= 1")
        if not (0 <= self.noise_frac_max <= 1):
            raise TrainingError("noise_frac_max must lie in [0, 1]")
        if self.max_sample_tokens <= 0:
            raise TrainingError("max_sample_tokens must be positive")


@dataclass(frozen=True)
class TrainingSample:
    context_tokens: TokenSeq
    target_words: tuple[str, ...]
    target_tokens: TokenSeq
    gold_tokens: TokenSeq
    article_title: str
    target_index: int

    def key(self) -> str:
        return f"{self.article_title}␟{self.target_index}"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-5
    epochs: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0:
            raise TrainingError("batch_size and epochs must be positive")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise TrainingError("learning_rate and eps must be positive")


def select_target_words(
    words: list[str],
    rng: np.random.Generator,
    frac_min: float = 0.20,
    frac_max: float = 0.60,
) -> list[str]:
    """Pick a uniform-count subset of words, kept in original order."""
    n = len(words)
    if n < 2:
        raise TrainingError("need at least 2 words to select targets from")
    lo = max(1, math.ceil(frac_min * n))
    hi = max(1, math.floor(frac_max * n))
    k = int(rng.integers(lo, hi + 1))
    picked = sorted(rng.choice(n, size=k, replace=False).tolist())
    return [words[i] for i in picked]


def _noise_pool(article: Article, target_idx: int) -> list[str]:
    target_lower = {w.lower() for w in sentence_words(article.sentences[target_idx].text)}
    pool: dict[str, None] = {}
    for sent in article.sentences:
        if sent.index == target_idx:
            continue
        for w in sentence_words(sent.text):
            if w.lower() not in target_lower:
                pool.setdefault(w, None)
    return list(pool)


def _encode_words(words: list[str], vocab: BpeVocab) -> TokenSeq:
    if not words:
        return TokenSeq(ids=(), kind="target")
    return encode(" " + " ".join(words), vocab, kind="target")


def build_sample(
    article: Article,
    target_idx: int,
    cfg: SampleBuilderConfig,
    rng: np.random.Generator,
    vocab: BpeVocab,
) -> TrainingSample:
    if target_idx < 1:
        raise TrainingError("target sentence must have at least one context sentence before it")
    if target_idx >= len(article.sentences):
        raise TrainingError(f"article {article.title!r} has no sentence {target_idx}")
    target_sentence = article.sentences[target_idx].text
    words = sentence_words(target_sentence)
    if len(words) < 2:
        raise TrainingError("target sentence too short to build a sample from")
    n = len(words)

    targets = select_target_words(words, rng, cfg.select_frac_min, cfg.select_frac_max)

    pool = _noise_pool(article, target_idx)
    m_cap = min(math.floor(cfg.noise_frac_max * n), len(pool))
    m = int(rng.integers(0, m_cap + 1)) if m_cap > 0 else 0
    if m:
        noise = [pool[i] for i in rng.choice(len(pool), size=m, replace=False).tolist()]
        for w in noise:
            pos = int(rng.integers(0, len(targets) + 1))
            targets.insert(pos, w)

    context_sentences = [s.text for s in article.sentences[:target_idx]]
    gold_sentences = [s.text for s in article.sentences[target_idx:]]
    target_tokens = _encode_words(targets, vocab)

    def tokens_for(ctx: list[str], gold: list[str]) -> tuple[TokenSeq, TokenSeq]:
        ctx_seq = encode(" ".join(ctx), vocab, kind="context")
        gold_seq = encode(" " + " ".join(gold), vocab, kind="present")
        return ctx_seq, gold_seq

    ctx_seq, gold_seq = tokens_for(context_sentences, gold_sentences)
    budget = cfg.max_sample_tokens

    def total() -> int:
        return len(ctx_seq) + len(target_tokens) + len(gold_seq)

    while total() > budget and context_sentences:
        context_sentences.pop(0)
        ctx_seq, gold_seq = tokens_for(context_sentences, gold_sentences)
    while total() > budget and len(gold_sentences) > 1:
        gold_sentences.pop()
        ctx_seq, gold_seq = tokens_for(context_sentences, gold_sentences)
    if total() > budget:
        keep = budget - len(target_tokens) - len(ctx_seq)
        if keep < 1:
            raise TrainingError("token budget too small for the target sentence")
        gold_seq = TokenSeq(ids=gold_seq.ids[:keep], kind="present")

    return TrainingSample(
        context_tokens=ctx_seq,
        target_words=tuple(targets),
        target_tokens=target_tokens,
        gold_tokens=gold_seq,
        article_title=article.title,
        target_index=target_idx,
    )


def build_dataset(
    store: ArticleStore,
    cfg: SampleBuilderConfig,
    vocab: BpeVocab,
) -> list[TrainingSample]:
    """One sample per eligible (article, target sentence) pair, seeded rng."""
    rng = np.random.default_rng(cfg.seed)
    samples = []
    for article in store:
        for idx in range(1, len(article.sentences)):
            if len(sentence_words(article.sentences[idx].text)) < 2:
                continue
            samples.append(build_sample(article, idx, cfg, rng, vocab))
    return samples


def article_lm_samples(store: ArticleStore, vocab: BpeVocab, max_tokens: int = 256) -> list[TrainingSample]:
    """Plain LM samples (whole-article text, no context or targets)."""
    samples = []
    for article in store:
        text = " ".join(s.text for s in article.sentences)
        ids = encode(text, vocab, kind="present").ids[:max_tokens]
        if not ids:
            continue
        samples.append(
            TrainingSample(
                context_tokens=TokenSeq(ids=(), kind="context"),
                target_words=(),
                target_tokens=TokenSeq(ids=(), kind="target"),
                gold_tokens=TokenSeq(ids=ids, kind="present"),
                article_title=article.title,
                target_index=0,
            )
        )
    return samples


def _gold_logits_tensor(model: BaseLm | GemModel, sample: TrainingSample, eot_id: int) -> Tensor:
    """Logits rows aligned one-to-one with the sample's gold tokens."""
    gold = sample.gold_tokens.ids
    present = (eot_id,) + gold[:-1]
    if isinstance(model, GemModel):
        logits = model.forward_tensor(sample.context_tokens, sample.target_tokens, present)
        return logits
    seq = (eot_id,) + sample.context_tokens.ids + gold[:-1]
    from .tensor import narrow

    logits = model.forward_tensor(seq)
    return narrow(logits, 0, len(seq) - len(gold), len(gold))


def loss_and_backward(model: BaseLm | GemModel, batch: list[TrainingSample], eot_id: int) -> float:
    """Mean token cross-entropy over all gold positions, with gradients."""
    if not batch:
        raise TrainingError("empty batch")
    model.zero_grads()
    parts = []
    labels = []
    for sample in batch:
        if not sample.gold_tokens.ids:
            raise TrainingError("sample has no gold tokens")
        parts.append(_gold_logits_tensor(model, sample, eot_id))
        labels.extend(sample.gold_tokens.ids)
    loss = cross_entropy_mean(concat(parts, axis=0), np.asarray(labels, dtype=np.int64))
    loss.backward()
    return float(loss.data)


def batch_loss(model: BaseLm | GemModel, batch: list[TrainingSample], eot_id: int) -> float:
    """Loss without touching gradients (evaluation only)."""
    if not batch:
        raise TrainingError("empty batch")
    total, count = 0.0, 0
    for sample in batch:
        logits = _gold_logits_tensor(model, sample, eot_id).data
        labels = np.asarray(sample.gold_tokens.ids)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        total += -logp[np.arange(len(labels)), labels].sum()
        count += len(labels)
    return total / count


def token_accuracy(model: BaseLm | GemModel, samples: list[TrainingSample], eot_id: int) -> float:
    """Teacher-forced argmax accuracy over gold positions (ties: lowest id)."""
    if not samples:
        raise TrainingError("token_accuracy needs at least one sample")
    matches = 0
    total = 0
    for sample in samples:
        logits = _gold_logits_tensor(model, sample, eot_id).data
        predicted = logits.argmax(axis=-1)
        gold = np.asarray(sample.gold_tokens.ids)
        matches += int((predicted == gold).sum())
        total += len(gold)
    return matches / total


class Adam:
    """Adam with bias correction, applied to trainable parameters only."""

    def __init__(self, params: list[Parameter], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in params}
        self.v = {id(p): np.zeros_like(p.data) for p in params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if not p.trainable or p.grad is None:
                continue
            g = p.grad
            m = self.m[id(p)]
            v = self.v[id(p)]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    loss: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_token_accuracy: float | None


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        """One row per optimizer step; accuracy fills the epoch-final rows."""
        epoch_acc = {e.epoch: e.val_token_accuracy for e in self.epochs}
        last_step = {}
        for rec in self.steps:
            last_step[rec.epoch] = rec.step
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "loss", "val_token_accuracy"])
            for rec in self.steps:
                acc = epoch_acc.get(rec.epoch)
                is_final = last_step[rec.epoch] == rec.step
                writer.writerow([
                    rec.epoch,
                    rec.step,
                    f"{rec.loss:.6f}",
                    "" if (acc is None or not is_final) else f"{acc:.6f}",
                ])


def split_train_val(samples: list[TrainingSample]) -> tuple[list[TrainingSample], list[TrainingSample]]:
    """Deterministic 95/5 split keyed on a stable hash of sample identity."""
    train, val = [], []
    for s in samples:
        digest = hashlib.sha256(s.key().encode("utf-8")).digest()
        (val if digest[0] % 20 == 0 else train).append(s)
    return train, val


def train(
    model: BaseLm | GemModel,
    samples: list[TrainingSample],
    cfg: TrainConfig,
    eot_id: int,
    checkpoint_dir: str | Path | None = None,
) -> TrainHistory:
    """Adam fine-tuning over shuffled batches with per-epoch validation."""
    if not samples:
        raise TrainingError("empty dataset")
    train_set, val_set = split_train_val(samples)
    if not train_set:
        raise TrainingError("training split is empty")
    optimizer = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    global_step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(train_set), cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            loss = loss_and_backward(model, batch, eot_id)
            optimizer.step()
            global_step += 1
            losses.append(loss)
            history.steps.append(StepRecord(epoch=epoch, step=global_step, loss=loss))
        val_acc = token_accuracy(model, val_set, eot_id) if val_set else None
        history.epochs.append(
            EpochRecord(epoch=epoch, mean_loss=float(np.mean(losses)), val_token_accuracy=val_acc)
        )
        if checkpoint_dir is not None:
            directory = Path(checkpoint_dir)
            directory.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, directory / f"epoch{epoch:03d}.ckpt")
    return history
