"""Text-conditioned autoregressive motion-token generator.

Sequence layout for one example with ``w`` text slots and ``n`` motion slots::

    [t_1 .. t_w | BOS m_1 .. m_{n-1}]   ->   logits for [m_1 .. m_{n-1} EOS]

Text attends to text only (bidirectionally); motion position ``i`` attends to
every text position and to motion positions ``<= i``.  Text padding columns
are additionally hidden from every row except their own.

Token ids: ``PAD=0, BOS=1, EOS=2``; tokenizer code ``c`` becomes ``c + 3``.
The toy text tokenizer maps UTF-8 byte ``b`` to ``b + 3``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .fsq import TokenizerModel, TokenSequence, TrainingDiverged, decode_tokens
from .geom import Skeleton
from .representation import EmptyInputError, MotionSequence, decode_features

PAD, BOS, EOS = 0, 1, 2
NUM_SPECIAL = 3
TEXT_VOCAB = 256 + NUM_SPECIAL
MASK_FILL = -1e9


class GeneratorError(ValueError):
    pass


class ConfigMismatch(GeneratorError):
    pass


@dataclass(frozen=True)
class GenConfig:
    code_vocab: int
    layers: int = 4
    width: int = 256
    heads: int = 4
    ffn_mult: int = 4
    max_text: int = 32
    max_motion: int = 64
    text_vocab: int = TEXT_VOCAB
    tokenizer_hash: str = ""

    def __post_init__(self):
        if self.width % self.heads:
            raise GeneratorError(f"width {self.width} not divisible by {self.heads} heads")
        if self.code_vocab < 1 or self.layers < 1 or self.max_motion < 2 or self.max_text < 0:
            raise GeneratorError("invalid generator dimensions")
        if self.text_vocab <= NUM_SPECIAL:
            raise GeneratorError("text vocabulary must exceed the special tokens")

    @property
    def vocab(self) -> int:
        return self.code_vocab + NUM_SPECIAL

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# text


@dataclass
class Prompt:
    text: str
    ids: np.ndarray


def tokenize_text(text: str, max_len: int) -> Prompt:
    """Byte-level ids, truncated to ``max_len``."""
    ids = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)[:max_len] + NUM_SPECIAL
    return Prompt(text, ids)


# --------------------------------------------------------------------------
# mask


def build_hybrid_mask(w: int, n: int) -> np.ndarray:
    """``(w + n, w + n)`` boolean matrix, True where a row may attend a column."""
    if n < 1:
        raise GeneratorError("motion length must be >= 1")
    if w < 0:
        raise GeneratorError("text length must be >= 0")
    S = w + n
    m = np.zeros((S, S), dtype=bool)
    m[:w, :w] = True
    m[w:, :w] = True
    m[w:, w:] = np.tril(np.ones((n, n), dtype=bool))
    return m


def _attention_mask(text_ids: np.ndarray, n: int) -> np.ndarray:
    """Per-example mask ``(B, 1, S, S)`` hiding text padding columns."""
    B, w = text_ids.shape
    base = build_hybrid_mask(w, n)
    keep = np.ones((B, w + n), dtype=bool)
    keep[:, :w] = text_ids != PAD
    m = base[None] & keep[:, None, :]
    m |= np.eye(w + n, dtype=bool)[None]
    return m[:, None]


# --------------------------------------------------------------------------
# model


@dataclass
class GeneratorModel:
    config: GenConfig
    params: dict = field(default_factory=dict)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _attention(self, h: Tensor, bias: np.ndarray, pre: str) -> Tensor:
        cfg = self.config
        B, S, W = h.shape
        H, dh = cfg.heads, W // cfg.heads
        qkv = dc.linear(h, self._p(pre + "qkv.w"), self._p(pre + "qkv.b"))
        qkv = dc.transpose(dc.reshape(qkv, (B, S, 3, H, dh)), (2, 0, 3, 1, 4))  # (3, B, H, S, dh)
        q, k, v = (dc.getitem(qkv, i) for i in range(3))
        scores = dc.matmul(q, dc.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh)) + bias
        out = dc.matmul(dc.softmax(scores, axis=-1), v)  # (B, H, S, dh)
        out = dc.reshape(dc.transpose(out, (0, 2, 1, 3)), (B, S, W))
        return dc.linear(out, self._p(pre + "proj.w"), self._p(pre + "proj.b"))

    def _block(self, x: Tensor, bias: np.ndarray, i: int) -> Tensor:
        pre = f"layer{i}."
        x = x + self._attention(dc.rms_norm(x, self._p(pre + "norm1")), bias, pre + "attn.")
        h = dc.rms_norm(x, self._p(pre + "norm2"))
        h = dc.gelu(dc.linear(h, self._p(pre + "ffn1.w"), self._p(pre + "ffn1.b")))
        return x + dc.linear(h, self._p(pre + "ffn2.w"), self._p(pre + "ffn2.b"))

    def logits(self, text_ids, motion_ids, zero_text_positions: bool = False) -> Tensor:
        """Logits ``(B, n, vocab)`` at the motion positions.

        ``text_ids`` is ``(B, w)`` (PAD-filled), ``motion_ids`` is ``(B, n)``;
        1-D inputs are treated as a batch of one.
        """
        cfg = self.config
        t = np.asarray(text_ids, dtype=np.int64)
        t = t[None] if t.ndim == 1 else t
        m = np.atleast_2d(np.asarray(motion_ids, dtype=np.int64))
        if t.shape[0] != m.shape[0]:
            raise GeneratorError(f"batch mismatch: {t.shape[0]} prompts vs {m.shape[0]} motions")
        B, w = t.shape
        n = m.shape[1]
        if w > cfg.max_text or n > cfg.max_motion or n < 1:
            raise GeneratorError(f"sequence lengths (text {w}, motion {n}) outside (<= {cfg.max_text}, 1..{cfg.max_motion})")
        if t.size and (t.min() < 0 or t.max() >= cfg.text_vocab):
            raise GeneratorError(f"text id outside [0, {cfg.text_vocab})")
        if m.min() < 0 or m.max() >= cfg.vocab:
            raise GeneratorError(f"motion id outside [0, {cfg.vocab})")

        xm = dc.embedding(m, self._p("emb.motion")) + dc.getitem(self._p("pos.motion"), slice(0, n))
        if w:
            xt = dc.embedding(t, self._p("emb.text"))
            if not zero_text_positions:
                xt = xt + dc.getitem(self._p("pos.text"), slice(0, w))
            x = dc.concat([xt, xm], axis=1)
        else:
            x = xm
        mask = _attention_mask(t, n)
        bias = np.where(mask, 0.0, MASK_FILL).astype(x.data.dtype)
        for i in range(cfg.layers):
            x = self._block(x, bias, i)
        x = dc.rms_norm(dc.getitem(x, (slice(None), slice(w, w + n))), self._p("norm.out"))
        return dc.linear(x, self._p("head.w"), self._p("head.b"))


def forward_logits(model: GeneratorModel, prompt_ids, motion_ids) -> np.ndarray:
    """Single example: logits ``(n, vocab)``."""
    return model.logits(np.asarray(prompt_ids)[None], np.asarray(motion_ids)[None]).data[0]


def init_generator(config: GenConfig, seed: int = 0) -> GeneratorModel:
    rng = np.random.default_rng(seed)
    W, F = config.width, config.width * config.ffn_mult
    p = {}

    def add(name, arr):
        p[name] = dc.tensor(arr, requires_grad=True, name=name)

    add("emb.text", rng.normal(0, 0.2, (config.text_vocab, W)))
    add("emb.motion", rng.normal(0, 0.2, (config.vocab, W)))
    add("pos.text", rng.normal(0, 0.02, (max(config.max_text, 1), W)))
    add("pos.motion", rng.normal(0, 0.02, (config.max_motion, W)))
    out_scale = 1.0 / math.sqrt(2 * config.layers)
    for i in range(config.layers):
        pre = f"layer{i}."
        add(pre + "norm1", np.ones(W))
        add(pre + "attn.qkv.w", rng.normal(0, 1 / math.sqrt(W), (W, 3 * W)))
        add(pre + "attn.qkv.b", np.zeros(3 * W))
        add(pre + "attn.proj.w", rng.normal(0, out_scale / math.sqrt(W), (W, W)))
        add(pre + "attn.proj.b", np.zeros(W))
        add(pre + "norm2", np.ones(W))
        add(pre + "ffn1.w", rng.normal(0, 1 / math.sqrt(W), (W, F)))
        add(pre + "ffn1.b", np.zeros(F))
        add(pre + "ffn2.w", rng.normal(0, out_scale / math.sqrt(F), (F, W)))
        add(pre + "ffn2.b", np.zeros(W))
    add("norm.out", np.ones(W))
    # a near-zero head starts the model at the uniform distribution
    add("head.w", rng.normal(0, 0.01 / math.sqrt(W), (W, config.vocab)))
    add("head.b", np.zeros(config.vocab))
    return GeneratorModel(config, p)


# --------------------------------------------------------------------------
# loss and training


def ce_loss(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood over positions whose target is not PAD."""
    targets = np.asarray(targets, dtype=np.int64)
    keep = targets != PAD
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        raise GeneratorError("every target position is padding")
    return dc.cross_entropy(logits, targets, keep)


def wrap_codes(codes: Sequence[int], max_motion: int) -> tuple[np.ndarray, np.ndarray]:
    """``(inputs, targets)`` of length ``len(codes) + 1`` for one clip."""
    c = np.asarray(codes, dtype=np.int64) + NUM_SPECIAL
    if c.size + 1 > max_motion:
        raise GeneratorError(f"{c.size} codes exceed motion capacity {max_motion - 1}")
    return np.concatenate([[BOS], c]), np.concatenate([c, [EOS]])


def make_batch(pairs: Sequence[tuple[str, Sequence[int]]], config: GenConfig):
    """Pad a list of ``(text, codes)`` pairs into model inputs."""
    prompts = [tokenize_text(t, config.max_text).ids for t, _ in pairs]
    wrapped = [wrap_codes(c, config.max_motion) for _, c in pairs]
    w = max((p.size for p in prompts), default=0)
    n = max(x.size for x, _ in wrapped)
    B = len(pairs)
    text = np.full((B, w), PAD, dtype=np.int64)
    inp = np.full((B, n), PAD, dtype=np.int64)
    tgt = np.full((B, n), PAD, dtype=np.int64)
    for b, (p, (x, y)) in enumerate(zip(prompts, wrapped)):
        text[b, :p.size] = p
        inp[b, :x.size] = x
        tgt[b, :y.size] = y
    return text, inp, tgt


def batch_loss(model: GeneratorModel, pairs) -> Tensor:
    text, inp, tgt = make_batch(pairs, model.config)
    return ce_loss(model.logits(text, inp), tgt)


@dataclass
class GenTrainConfig:
    steps: int = 1000
    lr: float = 1e-3
    batch: int = 16
    grad_clip: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def train_generator(model: GeneratorModel, corpus: Sequence[tuple[str, Sequence[int]]],
                    cfg: GenTrainConfig = GenTrainConfig(), seed: int = 0,
                    log_every: int = 0) -> tuple[GeneratorModel, list[float]]:
    """Next-token training on ``(text, codes)`` pairs; returns the model and per-step losses."""
    if len(corpus) == 0:
        raise EmptyInputError("empty paired corpus")
    rng = np.random.default_rng(seed)
    params = list(model.params.values())
    opt = dc.Adam(params, lr=cfg.lr, grad_clip=cfg.grad_clip)
    B = min(cfg.batch, len(corpus))
    losses = []
    for step in range(cfg.steps):
        pick = np.sort(rng.choice(len(corpus), size=B, replace=False))
        loss = batch_loss(model, [corpus[i] for i in pick])
        val = float(loss.data)
        if not math.isfinite(val):
            raise TrainingDiverged(step, val)
        opt.zero_grad()
        dc.backward(loss)
        opt.step()
        losses.append(val)
        if log_every and step % log_every == 0:
            print(f"step {step:5d} loss {val:.5f}")
    return model, losses


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Strategy:
    """``greedy``, ``temperature`` (with ``temperature``) or ``top-k`` (with ``k``)."""

    kind: str = "greedy"
    temperature: float = 1.0
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("greedy", "temperature", "top-k"):
            raise GeneratorError(f"unknown sampling strategy {self.kind!r}")
        if self.kind != "greedy" and self.temperature <= 0:
            raise GeneratorError("temperature must be positive")
        if self.kind == "top-k" and self.k < 1:
            raise GeneratorError("top-k needs k >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    codes: np.ndarray
    truncated: bool


def _pick(logits: np.ndarray, strategy: Strategy, rng: np.random.Generator) -> int:
    if strategy.kind == "greedy":
        return int(np.argmax(logits))
    z = logits.astype(np.float64)
    if strategy.kind == "top-k":
        k = min(strategy.k, int(np.isfinite(z).sum()))
        # stable order so equal logits resolve to the lower id, matching argmax
        order = np.argsort(-z, kind="stable")
        drop = order[k:]
        z = z.copy()
        z[drop] = -np.inf
    z = z / strategy.temperature
    z = z - z[np.isfinite(z)].max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(p.size, p=p))


def sample_autoregressive(model: GeneratorModel, prompt: str | Prompt, strategy: Strategy = Strategy(),
                          seed: int = 0, max_length: Optional[int] = None) -> Sample:
    """Grow a motion-token sequence until EOS or ``max_length`` codes.

    Returned codes exclude the special tokens (tokenizer code space).  PAD and
    BOS are never emitted, and EOS is not allowed as the first token.
    """
    cfg = model.config
    p = prompt if isinstance(prompt, Prompt) else tokenize_text(prompt, cfg.max_text)
    limit = cfg.max_motion - 1 if max_length is None else min(max_length, cfg.max_motion - 1)
    if limit < 1:
        raise GeneratorError("max_length must be >= 1")
    rng = np.random.default_rng(seed)
    seq = [BOS]
    for _ in range(limit):
        row = forward_logits(model, p.ids, seq)[-1].astype(np.float64)
        row[PAD] = row[BOS] = -np.inf
        if len(seq) == 1:
            row[EOS] = -np.inf
        tok = _pick(row, strategy, rng)
        if tok == EOS:
            return Sample(np.asarray(seq[1:], dtype=np.int64) - NUM_SPECIAL, False)
        seq.append(tok)
    return Sample(np.asarray(seq[1:], dtype=np.int64) - NUM_SPECIAL, True)


def check_compatible(model: GeneratorModel, tokenizer: TokenizerModel) -> None:
    if model.config.tokenizer_hash != tokenizer.config_hash:
        raise ConfigMismatch(
            f"generator was trained for tokenizer {model.config.tokenizer_hash or '<unset>'}, "
            f"got {tokenizer.config_hash}")
    if model.config.code_vocab != tokenizer.fsq.vocab_size:
        raise ConfigMismatch(f"code vocabulary {model.config.code_vocab} != tokenizer {tokenizer.fsq.vocab_size}")


def generate(model: GeneratorModel, tokenizer: TokenizerModel, text: str, skeleton: Skeleton,
             strategy: Strategy = Strategy(), seed: int = 0, fps: float = 30.0,
             max_length: Optional[int] = None) -> tuple[MotionSequence, Sample]:
    """Text -> sampled codes -> features -> motion clip at ``fps``."""
    check_compatible(model, tokenizer)
    s = sample_autoregressive(model, text, strategy, seed, max_length)
    frames = s.codes.size * tokenizer.fsq.downsample
    feats = decode_tokens(tokenizer, TokenSequence("", s.codes, frames, fps))
    return decode_features(feats, skeleton, fps=fps), s


# --------------------------------------------------------------------------
# persistence


def save_generator(model: GeneratorModel, path, seed: Optional[int] = None, step: Optional[int] = None) -> None:
    dc.save_checkpoint(path, model.params, {"kind": "generator", "config": model.config.to_dict(),
                                            "config_hash": model.config.hash()}, seed, step)


def load_generator(path) -> GeneratorModel:
    arrays, meta = dc.load_checkpoint(path)
    if meta.get("kind") != "generator":
        raise GeneratorError(f"{path} is not a generator checkpoint")
    cfg = GenConfig(**meta["config"])
    if cfg.hash() != meta.get("config_hash"):
        raise ConfigMismatch(f"{path}: stored config hash does not match its configuration")
    ref = init_generator(cfg)
    for k, p in ref.params.items():
        if k not in arrays or arrays[k].shape != p.shape:
            raise GeneratorError(f"{path}: parameter {k} missing or misshapen")
    return GeneratorModel(cfg, {k: dc.tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})
