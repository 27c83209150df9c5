"""Orthogonal discrete wavelet transform along time.

Band layout
-----------
``dwt_forward`` returns ``[a_L, d_L, d_{L-1}, ..., d_1]`` (coarsest first).
For an input of length ``n`` and filter length ``F`` one level produces two
bands of length

* ``floor((n + F - 1) / 2)`` for the ``symmetric`` and ``zero`` modes
  (the signal is extended by ``F - 1`` samples on each side), and
* ``ceil(n / 2)`` for ``periodic`` (odd inputs first repeat their last
  sample).  This mode is orthogonal, hence energy preserving.

Each level is applied to the previous approximation.  The input length of
every level is kept in :attr:`Bands.lengths` so the inverse can trim exactly.

``dwt_multichannel`` runs the transform on every column of a ``(T, D)`` array
and concatenates the bands along time, giving ``(sum(band lengths), D)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

_S3 = np.sqrt(3.0)
_LOWPASS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "db2": np.array([1 - _S3, 3 - _S3, 3 + _S3, 1 + _S3]) / (4 * np.sqrt(2.0)),
    "db4": np.array([
        -0.010597401785069032, 0.0328830116668852, 0.030841381835560764, -0.18703481171909309,
        -0.027983769416859854, 0.6308807679298589, 0.7148465705529157, 0.2303778133088965,
    ]),
}
MODES = ("symmetric", "periodic", "zero")


class WaveletError(ValueError):
    pass


@lru_cache(maxsize=None)
def filter_bank(family: str) -> tuple[np.ndarray, np.ndarray]:
    """Analysis (lowpass, highpass) pair for ``family``."""
    if family not in _LOWPASS:
        raise WaveletError(f"unknown wavelet family {family!r}; choose from {sorted(_LOWPASS)}")
    lo = _LOWPASS[family]
    F = len(lo)
    hi = np.array([(-1) ** (k + 1) * lo[F - 1 - k] for k in range(F)])
    return lo, hi


@dataclass(frozen=True)
class WaveletConfig:
    family: str = "db2"
    levels: int = 1
    mode: str = "symmetric"

    def __post_init__(self):
        filter_bank(self.family)
        if self.levels < 1:
            raise WaveletError("levels must be >= 1")
        if self.mode not in MODES:
            raise WaveletError(f"unknown boundary mode {self.mode!r}; choose from {MODES}")

    @property
    def filter_length(self) -> int:
        return len(_LOWPASS[self.family])

    def to_dict(self) -> dict:
        return {"family": self.family, "levels": self.levels, "mode": self.mode}


@dataclass
class Bands:
    coeffs: list[np.ndarray]
    lengths: list[int] = field(default_factory=list)  # input length at each level, finest first

    def __iter__(self):
        return iter(self.coeffs)

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]

    @property
    def approximation(self) -> np.ndarray:
        return self.coeffs[0]

    @property
    def details(self) -> list[np.ndarray]:
        return self.coeffs[1:]


def max_levels(length: int) -> int:
    return int(np.floor(np.log2(length))) if length >= 1 else 0


def band_length(n: int, filter_length: int, mode: str) -> int:
    if mode == "periodic":
        return (n + 1) // 2
    return (n + filter_length - 1) // 2


def coefficient_count(length: int, config: WaveletConfig) -> int:
    """Total number of coefficients ``dwt_forward`` emits for ``length`` samples."""
    total, n = 0, length
    for _ in range(config.levels):
        n = band_length(n, config.filter_length, config.mode)
        total += n
    return total + n


def _check(length: int, config: WaveletConfig) -> None:
    if length < config.filter_length:
        raise WaveletError(f"signal of length {length} shorter than {config.family} filter ({config.filter_length})")
    if config.levels > max_levels(length):
        raise WaveletError(f"{config.levels} levels exceed floor(log2({length})) = {max_levels(length)}")


def _extend(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if mode == "symmetric":
        return np.pad(x, [(pad, pad)] + [(0, 0)] * (x.ndim - 1), mode="symmetric")
    return np.pad(x, [(pad, pad)] + [(0, 0)] * (x.ndim - 1), mode="constant")


@lru_cache(maxsize=256)
def _periodic_index(n: int, F: int) -> np.ndarray:
    # coefficient k reads x[(2k + F/2 - j) mod n] with tap j
    k = np.arange(n // 2)[:, None]
    j = np.arange(F)[None, :]
    return (2 * k + F // 2 - j) % n


def _analyze(x: np.ndarray, config: WaveletConfig) -> tuple[np.ndarray, np.ndarray]:
    """One level along axis 0."""
    lo, hi = filter_bank(config.family)
    F = len(lo)
    if config.mode == "periodic":
        if x.shape[0] % 2:
            x = np.concatenate([x, x[-1:]], axis=0)
        idx = _periodic_index(x.shape[0], F)
        win = x[idx]  # (n/2, F, ...)
        return np.tensordot(lo, win, axes=(0, 1)), np.tensordot(hi, win, axes=(0, 1))
    n = x.shape[0]
    xe = _extend(x, F - 1, config.mode)
    nb = band_length(n, F, config.mode)
    # coefficient k = sum_j h[j] xe[2k + F - j]
    idx = 2 * np.arange(nb)[:, None] + F - np.arange(F)[None, :]
    win = xe[idx]
    return np.tensordot(lo, win, axes=(0, 1)), np.tensordot(hi, win, axes=(0, 1))


def _synthesize(a: np.ndarray, d: np.ndarray, n: int, config: WaveletConfig) -> np.ndarray:
    """Invert one level, returning ``n`` samples along axis 0."""
    lo, hi = filter_bank(config.family)
    F = len(lo)
    if a.shape != d.shape:
        raise WaveletError(f"band shapes differ: {a.shape} vs {d.shape}")
    if config.mode == "periodic":
        m = n + (n % 2)
        if a.shape[0] != m // 2:
            raise WaveletError(f"band length {a.shape[0]} inconsistent with signal length {n}")
        idx = _periodic_index(m, F)
        # adjoint of the orthogonal analysis operator
        contrib = lo[None, :, None] * a.reshape(a.shape[0], 1, -1) + hi[None, :, None] * d.reshape(d.shape[0], 1, -1)
        out = np.zeros((m, contrib.shape[-1]))
        np.add.at(out, idx.ravel(), contrib.reshape(-1, contrib.shape[-1]))
        return out.reshape((m,) + a.shape[1:])[:n]
    nb = a.shape[0]
    if nb != band_length(n, F, config.mode):
        raise WaveletError(f"band length {nb} inconsistent with signal length {n}")
    rec_lo, rec_hi = lo[::-1], hi[::-1]
    tail = a.shape[1:]
    up_a = np.zeros((2 * nb,) + tail)
    up_d = np.zeros((2 * nb,) + tail)
    up_a[::2] = a
    up_d[::2] = d
    full = _convolve(up_a, rec_lo) + _convolve(up_d, rec_hi)
    return full[F - 2 : F - 2 + n]


def _convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    F = len(h)
    out = np.zeros((x.shape[0] + F - 1,) + x.shape[1:])
    for j, tap in enumerate(h):
        out[j : j + x.shape[0]] += tap * x
    return out


def dwt_forward(signal: np.ndarray, config: WaveletConfig = WaveletConfig()) -> Bands:
    """Multi-level decomposition of a 1-D signal (or of each column of a 2-D array)."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 0:
        raise WaveletError("signal must be at least 1-D")
    _check(x.shape[0], config)
    details, lengths = [], []
    a = x
    for _ in range(config.levels):
        lengths.append(a.shape[0])
        a, d = _analyze(a, config)
        details.append(d)
    return Bands([a] + details[::-1], lengths)


def dwt_inverse(bands: Bands, config: WaveletConfig = WaveletConfig(), length: int | None = None) -> np.ndarray:
    """Reconstruct the signal from :func:`dwt_forward` output."""
    coeffs = list(bands.coeffs) if isinstance(bands, Bands) else list(bands)
    lengths = list(bands.lengths) if isinstance(bands, Bands) and bands.lengths else None
    if len(coeffs) != config.levels + 1:
        raise WaveletError(f"expected {config.levels + 1} bands, got {len(coeffs)}")
    if lengths is None:
        if length is None:
            raise WaveletError("original length unknown: pass Bands with lengths or length=")
        lengths = level_lengths(length, config)
    a = np.asarray(coeffs[0], dtype=np.float64)
    for lvl, d in enumerate(coeffs[1:]):
        n = lengths[config.levels - 1 - lvl]
        a = _synthesize(a, np.asarray(d, dtype=np.float64), n, config)
    return a


def level_lengths(length: int, config: WaveletConfig) -> list[int]:
    out, n = [], length
    for _ in range(config.levels):
        out.append(n)
        n = band_length(n, config.filter_length, config.mode)
    return out


@dataclass
class StackedBands:
    """Per-channel bands concatenated along time.

    ``data`` has shape ``(sum(band_lengths), D)``; ``band_lengths`` lists the
    length of each band in ``dwt_forward`` order.
    """

    data: np.ndarray
    band_lengths: list[int]
    signal_length: int


def dwt_multichannel(features: np.ndarray, config: WaveletConfig = WaveletConfig()) -> StackedBands:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise WaveletError("expected a non-empty (T, D) array")
    bands = dwt_forward(x, config)
    return StackedBands(np.concatenate(bands.coeffs, axis=0), [b.shape[0] for b in bands.coeffs], x.shape[0])


def idwt_multichannel(stacked: StackedBands, config: WaveletConfig = WaveletConfig()) -> np.ndarray:
    total = sum(stacked.band_lengths)
    if stacked.data.ndim != 2 or stacked.data.shape[0] != total:
        raise WaveletError(f"stacked data rows {stacked.data.shape[0]} != band total {total}")
    splits = np.cumsum(stacked.band_lengths)[:-1]
    coeffs = np.split(stacked.data, splits, axis=0)
    return dwt_inverse(Bands(coeffs, level_lengths(stacked.signal_length, config)), config)
