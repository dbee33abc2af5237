"""Transformer stacks: a base autoregressive LM and the controlled variant.

The controlled model reuses the base stack for context ("past") and
generated ("present") tokens and adds a separately parameterized encoder
for target words. Per layer, all three row groups share one attention
pool: context rows attend causally within context, target rows attend
bidirectionally within target, and present rows see every context row,
every target row, and present rows up to their own position. A single
trainable vector is added to each context input embedding so the decoder
can tell context from present; token embeddings are shared by all three
inputs and frozen after the extend step.

Checkpoint format: `GEMCKPT v1` header line, one JSON config line, a
`params <n>` line, then per parameter a JSON metadata line followed by
raw row-major little-endian float64 bytes and a newline.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .bpe import TokenSeq
from .errors import ModelError
from .tensor import Tensor

_MASK_OFF = -1e30


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_positions: int = 256
    init_std: float = 0.02

    def __post_init__(self) -> None:
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "vocab_size", "max_positions"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ModelError("d_model must be divisible by n_heads")
        if self.max_positions < 256:
            raise ModelError("max_positions must be at least 256")


class Parameter(Tensor):
    """A named float64 array with a same-shape gradient and a trainable flag."""

    def __init__(self, name: str, values: np.ndarray, trainable: bool = True):
        super().__init__(np.array(values, dtype=np.float64), requires_grad=trainable)
        self.name = name

    @property
    def values(self) -> np.ndarray:
        return self.data

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)

    @property
    def gradient(self) -> np.ndarray:
        # Non-trainable parameters accumulate zero gradient by contract.
        return self.grad if self.grad is not None else np.zeros_like(self.data)


_BLOCK_KEYS = (
    "ln1.g", "ln1.b", "attn.w_qkv", "attn.b_qkv", "attn.w_proj", "attn.b_proj",
    "ln2.g", "ln2.b", "mlp.w_in", "mlp.b_in", "mlp.w_out", "mlp.b_out",
)


def _block_init(prefix: str, cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    d, f, std = cfg.d_model, cfg.d_ff, cfg.init_std
    shapes = {
        "ln1.g": np.ones(d), "ln1.b": np.zeros(d),
        "attn.w_qkv": rng.normal(0.0, std, (d, 3 * d)), "attn.b_qkv": np.zeros(3 * d),
        "attn.w_proj": rng.normal(0.0, std, (d, d)), "attn.b_proj": np.zeros(d),
        "ln2.g": np.ones(d), "ln2.b": np.zeros(d),
        "mlp.w_in": rng.normal(0.0, std, (d, f)), "mlp.b_in": np.zeros(f),
        "mlp.w_out": rng.normal(0.0, std, (f, d)), "mlp.b_out": np.zeros(d),
    }
    return {f"{prefix}.{k}": Parameter(f"{prefix}.{k}", shapes[k]) for k in _BLOCK_KEYS}


def _stack_init(prefix: str, cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}
    for i in range(cfg.n_layers):
        params.update(_block_init(f"{prefix}h{i}", cfg, rng))
    return params


def _ids(tokens) -> np.ndarray:
    if isinstance(tokens, TokenSeq):
        return np.asarray(tokens.ids, dtype=np.int64)
    return np.asarray(list(tokens), dtype=np.int64)


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ModelError("token id outside the model vocabulary")


def build_base_mask(n: int) -> np.ndarray:
    """Causal mask: row i attends columns 0..i."""
    allowed = np.tril(np.ones((n, n), dtype=bool))
    return np.where(allowed, 0.0, _MASK_OFF)


def build_gem_mask(nc: int, nt: int, n_present: int) -> np.ndarray:
    s = nc + nt + n_present
    allowed = np.zeros((s, s), dtype=bool)
    if nc:
        allowed[:nc, :nc] = np.tril(np.ones((nc, nc), dtype=bool))
    if nt:
        allowed[nc : nc + nt, nc : nc + nt] = True
    p0 = nc + nt
    allowed[p0:, :p0] = True
    allowed[p0:, p0:] = np.tril(np.ones((n_present, n_present), dtype=bool))
    return np.where(allowed, 0.0, _MASK_OFF)


def _heads(x: Tensor, n: int, cfg: ModelConfig) -> Tensor:
    # (n, d) -> (heads, n, d_head)
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    return T.swapaxes(T.reshape(x, (n, h, dh)), 0, 1)


def _merge_heads(x: Tensor, n: int, cfg: ModelConfig) -> Tensor:
    return T.reshape(T.swapaxes(x, 0, 1), (n, cfg.d_model))


def _block_forward(
    xs: list[Tensor],
    blocks: list[dict[str, Parameter]],
    mask: np.ndarray,
    cfg: ModelConfig,
) -> list[Tensor]:
    """One pre-norm block over row segments sharing a single attention pool.

    xs[i] is the (n_i, d) hidden state of segment i and blocks[i] the
    parameter set applied to that segment's rows.
    """
    d = cfg.d_model
    dh = d // cfg.n_heads
    lens = [x.data.shape[0] for x in xs]

    qs, ks, vs = [], [], []
    for x, p, n in zip(xs, blocks, lens):
        if n == 0:
            qs.append(None)
            ks.append(None)
            vs.append(None)
            continue
        normed = T.layer_norm(x, p["ln1.g"], p["ln1.b"])
        qkv = T.matmul(normed, p["attn.w_qkv"]) + p["attn.b_qkv"]
        qs.append(_heads(T.narrow(qkv, 1, 0, d), n, cfg))
        ks.append(_heads(T.narrow(qkv, 1, d, d), n, cfg))
        vs.append(_heads(T.narrow(qkv, 1, 2 * d, d), n, cfg))

    q_all = T.concat([q for q in qs if q is not None], axis=1)
    k_all = T.concat([k for k in ks if k is not None], axis=1)
    v_all = T.concat([v for v in vs if v is not None], axis=1)
    scores = T.scale(T.matmul(q_all, T.swapaxes(k_all, -1, -2)), 1.0 / math.sqrt(dh))
    pooled = T.matmul(T.masked_softmax(scores, mask), v_all)
    merged = _merge_heads(pooled, sum(lens), cfg)

    out: list[Tensor] = []
    offset = 0
    for x, p, n in zip(xs, blocks, lens):
        if n == 0:
            out.append(x)
            continue
        rows = T.narrow(merged, 0, offset, n)
        offset += n
        x = x + (T.matmul(rows, p["attn.w_proj"]) + p["attn.b_proj"])
        normed = T.layer_norm(x, p["ln2.g"], p["ln2.b"])
        hidden = T.gelu(T.matmul(normed, p["mlp.w_in"]) + p["mlp.b_in"])
        out.append(x + (T.matmul(hidden, p["mlp.w_out"]) + p["mlp.b_out"]))
    return out


class _ModelBase:
    cfg: ModelConfig
    params: dict[str, Parameter]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _blocks(self, prefix: str) -> list[dict[str, Parameter]]:
        return [
            {k: self.params[f"{prefix}h{i}.{k}"] for k in _BLOCK_KEYS}
            for i in range(self.cfg.n_layers)
        ]


class BaseLm(_ModelBase):
    """Plain autoregressive pre-norm transformer LM with a tied output head."""

    arch = "base"

    def __init__(self, cfg: ModelConfig, seed: int = 0, _params: dict[str, Parameter] | None = None):
        self.cfg = cfg
        if _params is not None:
            self.params = _params
            return
        rng = np.random.default_rng(seed)
        params: dict[str, Parameter] = {}
        params["tok_emb"] = Parameter("tok_emb", rng.normal(0.0, cfg.init_std, (cfg.vocab_size, cfg.d_model)))
        params["pos_emb"] = Parameter("pos_emb", rng.normal(0.0, cfg.init_std, (cfg.max_positions, cfg.d_model)))
        params.update(_stack_init("", cfg, rng))
        params["ln_f.g"] = Parameter("ln_f.g", np.ones(cfg.d_model))
        params["ln_f.b"] = Parameter("ln_f.b", np.zeros(cfg.d_model))
        params["out_bias"] = Parameter("out_bias", np.zeros(cfg.vocab_size))
        self.params = params

    def forward_tensor(self, tokens) -> Tensor:
        ids = _ids(tokens)
        n = ids.shape[0]
        if n == 0:
            raise ModelError("forward requires at least one token")
        if n > self.cfg.max_positions:
            raise ModelError(f"sequence of {n} tokens exceeds max_positions={self.cfg.max_positions}")
        _check_ids(ids, self.cfg.vocab_size)
        x = T.embedding(self.params["tok_emb"], ids) + T.embedding(self.params["pos_emb"], np.arange(n))
        blocks = self._blocks("")
        mask = build_base_mask(n)
        for i in range(self.cfg.n_layers):
            [x] = _block_forward([x], [blocks[i]], mask, self.cfg)
        x = T.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])
        logits = T.matmul(x, T.swapaxes(self.params["tok_emb"], 0, 1)) + self.params["out_bias"]
        return logits

    def forward(self, tokens) -> np.ndarray:
        return self.forward_tensor(tokens).data


class GemModel(_ModelBase):
    """Base stack plus target encoder, target positions, and past embedding."""

    arch = "gem"

    def __init__(self, cfg: ModelConfig, params: dict[str, Parameter]):
        self.cfg = cfg
        self.params = params

    def forward_tensor(self, context, target, present) -> Tensor:
        ctx, tgt, prs = _ids(context), _ids(target), _ids(present)
        nc, nt, n_present = len(ctx), len(tgt), len(prs)
        if n_present == 0:
            raise ModelError("present tokens must be non-empty")
        total = nc + nt + n_present
        if total > self.cfg.max_positions:
            raise ModelError(
                f"combined length {total} exceeds max_positions={self.cfg.max_positions}"
            )
        for ids in (ctx, tgt, prs):
            _check_ids(ids, self.cfg.vocab_size)

        tok = self.params["shared.tok_emb"]
        pos = self.params["shared.pos_emb"]
        xs: list[Tensor] = []
        if nc:
            x_ctx = T.embedding(tok, ctx) + T.embedding(pos, np.arange(nc))
            xs.append(x_ctx + self.params["past_emb"])
        else:
            xs.append(Tensor(np.zeros((0, self.cfg.d_model))))
        if nt:
            xs.append(T.embedding(tok, tgt) + T.embedding(self.params["target.pos_emb"], np.arange(nt)))
        else:
            xs.append(Tensor(np.zeros((0, self.cfg.d_model))))
        # Present positions continue after the context positions.
        xs.append(T.embedding(tok, prs) + T.embedding(pos, nc + np.arange(n_present)))

        shared_blocks = self._blocks("shared.")
        target_blocks = self._blocks("target.")
        mask = build_gem_mask(nc, nt, n_present)
        for i in range(self.cfg.n_layers):
            xs = _block_forward(
                xs, [shared_blocks[i], target_blocks[i], shared_blocks[i]], mask, self.cfg
            )
        x = T.layer_norm(xs[2], self.params["shared.ln_f.g"], self.params["shared.ln_f.b"])
        logits = T.matmul(x, T.swapaxes(tok, 0, 1)) + self.params["shared.out_bias"]
        return logits

    def forward(self, context, target, present) -> np.ndarray:
        return self.forward_tensor(context, target, present).data


def forward_base(model: BaseLm, tokens) -> np.ndarray:
    return model.forward(tokens)


def forward_gem(model: GemModel, context, target, present) -> np.ndarray:
    return model.forward(context, target, present)


def extend_from_base(base: BaseLm, seed: int) -> GemModel:
    """Graft the target encoder onto a trained base LM.

    Base weights are copied bit-for-bit under the shared namespace, token
    embeddings are frozen, the target stack and target positional table
    are drawn fresh from the model's init scheme, and the past embedding
    starts at zero so the extended model reproduces the base exactly until
    fine-tuning moves it.
    """
    cfg = base.cfg
    params: dict[str, Parameter] = {}
    for name, p in base.params.items():
        shared = f"shared.{name}"
        params[shared] = Parameter(shared, p.data.copy(), trainable=(name != "tok_emb"))
    rng = np.random.default_rng(seed)
    params["target.pos_emb"] = Parameter(
        "target.pos_emb", rng.normal(0.0, cfg.init_std, (cfg.max_positions, cfg.d_model))
    )
    params.update(_stack_init("target.", cfg, rng))
    params["past_emb"] = Parameter("past_emb", np.zeros(cfg.d_model))
    return GemModel(cfg, params)


def _count_base(cfg: ModelConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    per_block = (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (2 * d) + (d * f + f) + (f * d + d)
    return (
        cfg.vocab_size * d          # token embeddings (tied with the head)
        + cfg.max_positions * d     # positions
        + cfg.n_layers * per_block
        + 2 * d                     # final layer norm
        + cfg.vocab_size            # output bias
    )


def count_params_config(cfg: ModelConfig) -> tuple[int, int, float]:
    """Parameter totals implied by a config, without allocating a model."""
    d, f = cfg.d_model, cfg.d_ff
    per_block = (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (2 * d) + (d * f + f) + (f * d + d)
    base = _count_base(cfg)
    gem = base + cfg.n_layers * per_block + cfg.max_positions * d + d
    return base, gem, gem / base


def param_counts(model: GemModel) -> tuple[int, int, float]:
    """(base stack size, full size, ratio) by summing actual array shapes."""
    base = sum(p.data.size for name, p in model.params.items() if name.startswith("shared."))
    gem = sum(p.data.size for p in model.params.values())
    return base, gem, gem / base


def save_checkpoint(model: BaseLm | GemModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"GEMCKPT v1\n")
        header = {"arch": model.arch, "config": asdict(model.cfg)}
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(f"params {len(model.params)}\n".encode("utf-8"))
        for name, p in model.params.items():
            meta = {"name": name, "shape": list(p.data.shape), "trainable": p.trainable}
            fh.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
            fh.write(b"\n")


def load_checkpoint(path: str | Path) -> BaseLm | GemModel:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.readline() != b"GEMCKPT v1\n":
            raise ModelError(f"{path}: bad checkpoint header")
        header = json.loads(fh.readline().decode("utf-8"))
        arch = header["arch"]
        cfg = ModelConfig(**header["config"])
        count_line = fh.readline().decode("utf-8").split()
        if count_line[:1] != ["params"]:
            raise ModelError(f"{path}: missing params count")
        n_params = int(count_line[1])
        params: dict[str, Parameter] = {}
        for _ in range(n_params):
            meta = json.loads(fh.readline().decode("utf-8"))
            shape = tuple(meta["shape"])
            n_bytes = 8 * int(np.prod(shape)) if shape else 8
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise ModelError(f"{path}: truncated parameter {meta['name']}")
            if fh.read(1) != b"\n":
                raise ModelError(f"{path}: bad parameter framing for {meta['name']}")
            values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            params[meta["name"]] = Parameter(meta["name"], values, trainable=meta["trainable"])
    if arch == "base":
        return BaseLm(cfg, _params=params)
    if arch == "gem":
        return GemModel(cfg, params)
    raise ModelError(f"{path}: unknown arch {arch!r}")
