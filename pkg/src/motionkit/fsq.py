"""Finite-scalar-quantized motion tokenizer.

Pipeline for one clip of ``F`` frames with feature width ``D``::

    normalize -> pad to a multiple of P -> wavelet analysis -> encoder
      -> quantize -> codes ... codes -> decoder -> wavelet synthesis
      -> trim to F -> denormalize

``P = lcm(downsample, 2**wavelet_levels)``; padding repeats the last frame.
With a wavelet of ``l`` levels the bands of the padded ``(T, D)`` array are
regrouped (polyphase) into a ``(T / 2**l, D * 2**l)`` array so every band
shares one time grid; the encoder then reduces time by the remaining factor
``downsample / 2**l``.  The wavelet must use the ``periodic`` boundary mode:
it is orthogonal, so the squared error measured on the band array equals the
squared error on the features themselves.

Quantization is per latent dimension ``j``::

    code_j = round(sigmoid(z_j) * (L_j - 1))      (ties away from zero)
    zq_j   = code_j / (L_j - 1)

and the decoder consumes ``zq`` directly.  Rounding uses a straight-through
gradient.
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
from .geom import Skeleton
from .metrics import acceleration_series
from .representation import (
    EmptyInputError,
    MotionSequence,
    NormStats,
    TooShortError,
    decode_features,
    encode_features,
    fit_norm_stats,
)
from .wavelet import Bands, WaveletConfig, WaveletError, dwt_forward, dwt_inverse, level_lengths

VOCAB_CAP = 2 ** 24


class FsqError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step


# --------------------------------------------------------------------------
# quantizer


@dataclass(frozen=True)
class FsqConfig:
    levels: tuple = (8, 8, 8, 5, 5, 5)
    downsample: int = 4
    width: int = 128
    depth: int = 2
    vocab_cap: int = VOCAB_CAP

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(L) for L in self.levels))
        if not self.levels or min(self.levels) < 2:
            raise FsqError(f"every level must be >= 2, got {self.levels}")
        if self.vocab_size > self.vocab_cap:
            raise FsqError(f"vocabulary {self.vocab_size} exceeds cap {self.vocab_cap}")
        if self.downsample < 1 or self.downsample & (self.downsample - 1):
            raise FsqError(f"downsample must be a power of two, got {self.downsample}")
        if self.width < 1 or self.depth < 0:
            raise FsqError("width must be positive and depth non-negative")

    @property
    def latent_dim(self) -> int:
        return len(self.levels)

    @property
    def vocab_size(self) -> int:
        return int(np.prod(self.levels, dtype=np.int64))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FsqConfig":
        return cls(**{**d, "levels": tuple(d["levels"])})


def fsq_quantize(z: np.ndarray, levels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Codes and unit-grid values for latent ``z`` (last axis = dimension)."""
    z = np.asarray(z, dtype=np.float64)
    L = np.asarray(levels, dtype=np.float64)
    if z.shape[-1:] != L.shape:
        raise FsqError(f"latent width {z.shape[-1:]} != {len(L)} levels")
    s = dc._sigmoid(z) * (L - 1)
    codes = dc.round_half_away(s).astype(np.int64)
    return codes, codes / (L - 1)


def fsq_quantize_tensor(z: Tensor, levels: Sequence[int]) -> tuple[Tensor, np.ndarray]:
    """Differentiable counterpart of :func:`fsq_quantize`."""
    L = np.asarray(levels, dtype=z.data.dtype)
    s = dc.mul(dc.sigmoid(z), L - 1)
    q = dc.round_ste(s)
    return dc.div(q, L - 1), q.data.astype(np.int64)


def dequantize_logit(codes: np.ndarray, levels: Sequence[int], eps: float = 1e-12) -> np.ndarray:
    """A latent that quantizes back to ``codes``: logit of the grid point."""
    L = np.asarray(levels, dtype=np.float64)
    u = np.clip(np.asarray(codes) / (L - 1), eps, 1 - eps)
    return np.log(u) - np.log1p(-u)


def codes_to_index(codes, levels: Sequence[int]) -> np.ndarray:
    """Mixed radix, first dimension most significant."""
    c = np.asarray(codes, dtype=np.int64)
    L = np.asarray(levels, dtype=np.int64)
    if c.shape[-1:] != L.shape:
        raise FsqError(f"code width {c.shape[-1:]} != {len(L)} levels")
    if np.any(c < 0) or np.any(c >= L):
        raise FsqError("code outside its level range")
    idx = np.zeros(c.shape[:-1], dtype=np.int64)
    for j in range(len(L)):
        idx = idx * L[j] + c[..., j]
    return idx


def index_to_codes(index, levels: Sequence[int]) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64)
    L = np.asarray(levels, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= np.prod(L)):
        raise FsqError(f"index outside [0, {int(np.prod(L))})")
    out = np.empty(idx.shape + (len(L),), dtype=np.int64)
    for j in range(len(L) - 1, -1, -1):
        out[..., j] = idx % L[j]
        idx = idx // L[j]
    return out


# --------------------------------------------------------------------------
# wavelet wrap


def _pad_multiple(levels: int, downsample: int) -> int:
    return math.lcm(downsample, 2 ** levels)


def analysis(x: np.ndarray, wavelet: Optional[WaveletConfig]) -> np.ndarray:
    """``(T, D)`` -> band array ``(T / 2**l, D * 2**l)``; identity without wavelet."""
    if wavelet is None:
        return x
    bands = dwt_forward(x, wavelet)
    Tc = bands.coeffs[0].shape[0]
    parts = [b.reshape(Tc, -1) for b in bands.coeffs]
    return np.concatenate(parts, axis=-1)


def synthesis(y: np.ndarray, T: int, wavelet: Optional[WaveletConfig]) -> np.ndarray:
    if wavelet is None:
        return y
    Tc = y.shape[0]
    D = y.shape[1] // 2 ** wavelet.levels
    widths = [D] + [D * 2 ** (wavelet.levels - k) for k in range(wavelet.levels, 0, -1)]
    splits = np.cumsum(widths)[:-1]
    coeffs = [p.reshape(-1, D) for p in np.split(y, splits, axis=-1)]
    assert coeffs[0].shape[0] == Tc
    return dwt_inverse(Bands(coeffs, level_lengths(T, wavelet)), wavelet)


# --------------------------------------------------------------------------
# model


def config_hash(fsq: FsqConfig, wavelet: Optional[WaveletConfig]) -> str:
    blob = json.dumps({"fsq": fsq.to_dict(), "wavelet": None if wavelet is None else wavelet.to_dict()},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TokenSequence:
    clip_id: str
    codes: np.ndarray
    frames: int
    fps: float

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64).reshape(-1)

    def __len__(self):
        return self.codes.size


@dataclass
class TokenizerModel:
    fsq: FsqConfig
    wavelet: Optional[WaveletConfig]
    norm: NormStats
    params: dict = field(default_factory=dict)
    skeleton: Optional[Skeleton] = None

    def __post_init__(self):
        if self.wavelet is not None:
            if self.wavelet.mode != "periodic":
                raise FsqError("tokenizer wavelet must use the 'periodic' (orthogonal) mode")
            if 2 ** self.wavelet.levels > self.fsq.downsample:
                raise FsqError(f"{self.wavelet.levels} wavelet levels exceed downsample {self.fsq.downsample}")

    # -- shapes

    @property
    def feature_dim(self) -> int:
        return int(self.norm.mean.shape[0])

    @property
    def band_levels(self) -> int:
        return 0 if self.wavelet is None else self.wavelet.levels

    @property
    def channels(self) -> int:
        return self.feature_dim * 2 ** self.band_levels

    @property
    def stride(self) -> int:
        return self.fsq.downsample // 2 ** self.band_levels

    @property
    def pad_multiple(self) -> int:
        return _pad_multiple(self.band_levels, self.fsq.downsample)

    @property
    def config_hash(self) -> str:
        return config_hash(self.fsq, self.wavelet)

    def token_count(self, frames: int) -> int:
        return -(-frames // self.fsq.downsample)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # -- network

    def _conv(self, h: Tensor, name: str) -> Tensor:
        """Kernel-3 temporal convolution with zero padding; ``h`` is ``(B, T, C)``."""
        T = h.shape[1]
        hp = dc.pad_axis(h, 1, 1, axis=1)
        taps = [dc.getitem(hp, (slice(None), slice(k, k + T))) for k in range(3)]
        return dc.linear(dc.concat(taps, axis=-1), self.params[name + ".w"], self.params[name + ".b"])

    def _lin(self, h: Tensor, name: str) -> Tensor:
        return dc.linear(h, self.params[name + ".w"], self.params[name + ".b"])

    def _res(self, h: Tensor, name: str) -> Tensor:
        return h + self._lin(dc.gelu(self._conv(dc.gelu(h), name + ".conv")), name + ".out")

    def encoder(self, x: Tensor) -> Tensor:
        """``(B, T', C)`` band array -> ``(B, T'/stride, d)`` latents."""
        B, T, _ = x.shape
        h = dc.gelu(self._conv(x, "enc.in"))
        h = dc.reshape(h, (B, T // self.stride, self.stride * self.fsq.width))
        h = self._lin(h, "enc.down")
        for i in range(self.fsq.depth):
            h = self._res(h, f"enc.res{i}")
        return self._lin(dc.gelu(h), "enc.out")

    def decoder(self, zq: Tensor) -> Tensor:
        B, n, _ = zq.shape
        h = self._lin(zq, "dec.in")
        for i in range(self.fsq.depth):
            h = self._res(h, f"dec.res{i}")
        h = self._lin(dc.gelu(h), "dec.up")
        h = dc.reshape(h, (B, n * self.stride, self.fsq.width))
        return self._conv(dc.gelu(h), "dec.out")

    def forward(self, bands: Tensor) -> tuple[Tensor, Tensor, np.ndarray]:
        z = self.encoder(bands)
        zq, codes = fsq_quantize_tensor(z, self.fsq.levels)
        return self.decoder(zq), z, codes

    # -- clip-level helpers

    def _prepare(self, features: np.ndarray) -> tuple[np.ndarray, int]:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2:
            raise FsqError(f"expected (frames, width) features, got shape {x.shape}")
        if x.shape[1] != self.feature_dim:
            raise FsqError(f"feature width {x.shape[1]} != normalization width {self.feature_dim}")
        F = x.shape[0]
        if F < self.fsq.downsample:
            raise TooShortError(f"clip of {F} frames shorter than downsample factor {self.fsq.downsample}")
        P = self.pad_multiple
        T = -(-F // P) * P
        x = self.norm.normalize(x)
        if T > F:
            x = np.concatenate([x, np.repeat(x[-1:], T - F, axis=0)], axis=0)
        return x, F

    def latent(self, features: np.ndarray) -> np.ndarray:
        """Pre-quantization latents ``(tokens, d)`` of one clip."""
        x, _ = self._prepare(features)
        z = self.encoder(dc.tensor(analysis(x, self.wavelet)[None]))
        return z.data[0].astype(np.float64)

    def reconstruct(self, features: np.ndarray) -> np.ndarray:
        return decode_tokens(self, encode_motion(self, features))


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0):
    w = rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


def init_tokenizer(fsq: FsqConfig, wavelet: Optional[WaveletConfig], norm: NormStats, seed: int = 0,
                   skeleton: Optional[Skeleton] = None) -> TokenizerModel:
    model = TokenizerModel(fsq, wavelet, norm, {}, skeleton)
    rng = np.random.default_rng(seed)
    W, C, d, s = fsq.width, model.channels, fsq.latent_dim, model.stride
    shapes = [("enc.in", 3 * C, W, 1.0), ("enc.down", s * W, W, 1.0)]
    for i in range(fsq.depth):
        shapes += [(f"enc.res{i}.conv", 3 * W, W, 1.0), (f"enc.res{i}.out", W, W, 0.5)]
    shapes += [("enc.out", W, d, 1.0), ("dec.in", d, W, 1.0)]
    for i in range(fsq.depth):
        shapes += [(f"dec.res{i}.conv", 3 * W, W, 1.0), (f"dec.res{i}.out", W, W, 0.5)]
    shapes += [("dec.up", W, s * W, 1.0), ("dec.out", 3 * W, C, 1.0)]
    for name, fi, fo, sc in shapes:
        w, b = _init_linear(rng, fi, fo, sc)
        model.params[name + ".w"] = dc.tensor(w, requires_grad=True, name=name + ".w")
        model.params[name + ".b"] = dc.tensor(b, requires_grad=True, name=name + ".b")
    return model


def build_tokenizer(corpus: Sequence[np.ndarray], fsq: FsqConfig = FsqConfig(),
                    wavelet: Optional[WaveletConfig] = WaveletConfig("db4", 2, "periodic"),
                    seed: int = 0, skeleton: Optional[Skeleton] = None) -> TokenizerModel:
    """Fresh tokenizer whose normalization statistics are fitted on ``corpus``."""
    if len(corpus) == 0:
        raise EmptyInputError("empty corpus")
    return init_tokenizer(fsq, wavelet, fit_norm_stats(corpus), seed, skeleton)


# --------------------------------------------------------------------------
# encode / decode


def encode_motion(model: TokenizerModel, features: np.ndarray, clip_id: str = "", fps: float = 30.0) -> TokenSequence:
    """Raw (unnormalized) features -> token indices.  Normalization is applied here."""
    x, F = model._prepare(features)
    z = model.encoder(dc.tensor(analysis(x, model.wavelet)[None]))
    codes, _ = fsq_quantize(z.data[0], model.fsq.levels)
    return TokenSequence(clip_id, codes_to_index(codes, model.fsq.levels), F, fps)


def decode_tokens(model: TokenizerModel, tokens: TokenSequence) -> np.ndarray:
    """Token indices -> raw features of ``tokens.frames`` frames."""
    idx = np.asarray(tokens.codes, dtype=np.int64)
    if idx.size == 0:
        raise EmptyInputError("no tokens to decode")
    L = np.asarray(model.fsq.levels, dtype=np.float64)
    zq = index_to_codes(idx, model.fsq.levels) / (L - 1)
    y = model.decoder(dc.tensor(zq[None])).data[0].astype(np.float64)
    T = idx.size * model.fsq.downsample
    x = synthesis(y, T, model.wavelet)
    frames = tokens.frames if tokens.frames else T
    if frames > T:
        raise FsqError(f"{idx.size} tokens cannot cover {frames} frames")
    return model.norm.denormalize(x[:frames])


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 1e-3
    batch: int = 8
    window: int = 64
    grad_clip: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def _batch(model: TokenizerModel, clips: list[np.ndarray], rng: np.random.Generator, cfg: TrainConfig) -> np.ndarray:
    P = model.pad_multiple
    win = max(P, cfg.window // P * P)
    out = []
    for k in rng.integers(len(clips), size=cfg.batch):
        x = clips[k]
        if x.shape[0] >= win:
            s = int(rng.integers(x.shape[0] - win + 1))
            w = x[s:s + win]
        else:
            w = np.concatenate([x, np.repeat(x[-1:], win - x.shape[0], axis=0)], axis=0)
        out.append(analysis(w, model.wavelet))
    return np.stack(out)


def reconstruction_loss(model: TokenizerModel, bands: np.ndarray) -> Tensor:
    x = dc.tensor(bands)
    recon, _, _ = model.forward(x)
    return dc.mse(recon, x)


def train_reconstruction(model: TokenizerModel, corpus: Sequence[np.ndarray], cfg: TrainConfig = TrainConfig(),
                         seed: int = 0, log_every: int = 0) -> tuple[TokenizerModel, list[float]]:
    """Minimize mean squared reconstruction error; returns the model and the loss per step."""
    if len(corpus) == 0:
        raise EmptyInputError("empty training corpus")
    clips = [model.norm.normalize(np.asarray(c, dtype=np.float64)) for c in corpus]
    rng = np.random.default_rng(seed)
    params = list(model.params.values())
    opt = dc.Adam(params, lr=cfg.lr, grad_clip=cfg.grad_clip)
    losses = []
    for step in range(cfg.steps):
        loss = reconstruction_loss(model, _batch(model, clips, rng, cfg))
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
# evaluation


class BypassTokenizer:
    """Reconstructs its input unchanged; the no-quantization reference."""

    def reconstruct(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64)


def eval_reconstruction(model, corpus: Sequence[MotionSequence], skeleton: Skeleton) -> dict:
    """MPJPE (mm) and acceleration statistics of reconstructions vs. the inputs.

    Each clip is encoded to features, reconstructed, decoded back to a motion
    anchored at the input's first-frame translation and heading, and compared
    in world joint positions.  Accelerations (m/s^2) are pooled over every
    frame of every clip.
    """
    if len(corpus) == 0:
        raise EmptyInputError("empty evaluation corpus")
    err_sum, err_count = 0.0, 0
    acc_r, acc_g = [], []
    for m in corpus:
        feats = encode_features(m, skeleton)
        rec = decode_features(model.reconstruct(feats), skeleton, m.translation[0], m.root_orientation[0], m.fps)
        P_gt = m.joint_positions(skeleton)
        P_rc = rec.joint_positions(skeleton)
        d = np.linalg.norm(P_gt - P_rc, axis=-1)
        err_sum += float(d.sum())
        err_count += d.size
        acc_r.append(acceleration_series(P_rc, m.fps))
        acc_g.append(acceleration_series(P_gt, m.fps))
    ar, ag = np.concatenate(acc_r), np.concatenate(acc_g)
    return {
        "clips": len(corpus),
        "mpjpe_mm": err_sum / err_count * 1000.0,
        "acc_mean": float(ar.mean()),
        "acc_max": float(ar.max()),
        "gt_acc_mean": float(ag.mean()),
        "gt_acc_max": float(ag.max()),
    }


# --------------------------------------------------------------------------
# persistence


def save_tokenizer(model: TokenizerModel, path, seed: Optional[int] = None, step: Optional[int] = None) -> None:
    meta = {
        "kind": "tokenizer",
        "fsq": model.fsq.to_dict(),
        "wavelet": None if model.wavelet is None else model.wavelet.to_dict(),
        "norm": model.norm.to_dict(),
        "skeleton": None if model.skeleton is None else model.skeleton.to_dict(),
        "config_hash": model.config_hash,
    }
    dc.save_checkpoint(path, model.params, meta, seed, step)


def load_tokenizer(path) -> TokenizerModel:
    arrays, meta = dc.load_checkpoint(path)
    if meta.get("kind") != "tokenizer":
        raise FsqError(f"{path} is not a tokenizer checkpoint")
    wav = meta["wavelet"]
    model = TokenizerModel(
        FsqConfig.from_dict(meta["fsq"]),
        None if wav is None else WaveletConfig(**wav),
        NormStats.from_dict(meta["norm"]),
        {k: dc.tensor(v, requires_grad=True, name=k) for k, v in arrays.items()},
        None if meta.get("skeleton") is None else Skeleton.from_dict(meta["skeleton"]),
    )
    if model.config_hash != meta.get("config_hash"):
        raise FsqError(f"{path}: stored config hash does not match its configuration")
    ref = init_tokenizer(model.fsq, model.wavelet, model.norm)
    for k, p in ref.params.items():
        if k not in model.params or model.params[k].shape != p.shape:
            raise FsqError(f"{path}: parameter {k} missing or misshapen")
    return model


__all__ = [
    "BypassTokenizer", "FsqConfig", "FsqError", "TokenSequence", "TokenizerModel", "TrainConfig",
    "TrainingDiverged", "WaveletError", "analysis", "build_tokenizer", "codes_to_index", "config_hash",
    "decode_tokens", "dequantize_logit", "encode_motion", "eval_reconstruction", "fsq_quantize",
    "fsq_quantize_tensor", "index_to_codes", "init_tokenizer", "load_tokenizer", "reconstruction_loss",
    "save_tokenizer", "synthesis", "train_reconstruction",
]
