"""Controlled autoregressive decoding.

Sampling applies temperature scaling, then an optional top-k restriction
(set membership is unaffected by temperature; we scale first only so the
renormalized distribution is explicit). Temperature 0 means greedy argmax.
All ties break toward the lowest token id so runs are reproducible across
platforms. Generation stops after max_tokens emitted tokens or as soon as
the end-of-text token is emitted, whichever comes first; the end-of-text
token is included in the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bpe import TokenSeq
from .corpus import split_sentences
from .errors import GenerationError


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 1.0
    top_k: int = 40
    max_tokens: int = 48
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise GenerationError("temperature must be >= 0")
        if self.top_k < 0:
            raise GenerationError("top_k must be >= 0 (0 disables it)")
        if self.max_tokens <= 0:
            raise GenerationError("max_tokens must be positive")


def sample_next(logits: np.ndarray, params: GenerationParams, rng: np.random.Generator) -> int:
    """Draw one token id from temperature/top-k modified logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise GenerationError("logits must be finite")
    if params.temperature == 0:
        return int(np.argmax(logits))
    # Stable sort on -logits leaves equal logits in ascending-id order.
    order = np.argsort(-logits, kind="stable")
    if 0 < params.top_k < logits.shape[0]:
        keep = order[: params.top_k]
    else:
        keep = order
    z = logits[keep] / params.temperature
    z -= z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    cumulative = np.cumsum(probs)
    draw = rng.random()
    idx = int(np.searchsorted(cumulative, draw, side="right"))
    idx = min(idx, len(keep) - 1)
    return int(keep[idx])


def generate(
    model,
    context,
    target,
    params: GenerationParams,
    end_of_text_id: int,
    rng: np.random.Generator | None = None,
) -> TokenSeq:
    """Decode up to max_tokens from (context, target), feeding outputs back.

    The present sequence is primed with the end-of-text token (not part of
    the output), matching how training samples are supervised.
    """
    ctx_ids = tuple(context.ids if isinstance(context, TokenSeq) else context)
    tgt_ids = tuple(target.ids if isinstance(target, TokenSeq) else target)
    needed = len(ctx_ids) + len(tgt_ids) + params.max_tokens + 1
    if needed > model.cfg.max_positions:
        raise GenerationError(
            f"context+target+max_tokens+primer = {needed} exceeds "
            f"max_positions={model.cfg.max_positions}"
        )
    if rng is None:
        rng = np.random.default_rng(params.seed)
    present = [end_of_text_id]
    out: list[int] = []
    for _ in range(params.max_tokens):
        logits = model.forward(ctx_ids, tgt_ids, present)
        token = sample_next(logits[-1], params, rng)
        out.append(token)
        present.append(token)
        if token == end_of_text_id:
            break
    return TokenSeq(ids=tuple(out), kind="present")


def first_sentence(output_text: str) -> str:
    """Text up to and including the first sentence terminator.

    Uses the corpus sentence splitter, so whitespace is normalized; when
    the splitter finds nothing (no terminator at all) the whole normalized
    text is returned.
    """
    parts = split_sentences(output_text)
    return parts[0] if parts else ""
