"""Binary-input ISI channel, window matrices, noise model and sampling.

Conventions used throughout the package:

* A symbol window around instant ``t`` covers times ``t-m-l .. t+m+l`` and is
  stored at array indices ``0 .. 2(m+l)``; window position ``j`` (``|j| <= m+l``)
  lives at index ``j + m + l``.
* An output window covers times ``t-m .. t+m+l``; row ``r`` is time ``t-m+r``.
* Noise is subtracted: ``Z_t = sum_i h_i A_{t-i} - W_t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constraints import Constraint, get_constraint

PSD_TOL = 1e-10


@dataclass(frozen=True)
class ChannelModel:
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float).ravel()
        if taps.size == 0 or not np.any(taps != 0):
            raise ValueError("channel taps must not be all zero")
        if not np.all(np.isfinite(taps)):
            raise ValueError("channel taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def memory(self) -> int:
        return self.taps.size - 1

    @property
    def energy(self) -> float:
        return float(np.sum(self.taps ** 2))

    def sigma2_for_snr(self, snr_db: float) -> float:
        """Noise variance giving ``10 log10(sum h_i^2 / sigma^2) = snr_db``."""
        return self.energy / 10.0 ** (snr_db / 10.0)

    def convolve(self, symbols: np.ndarray) -> np.ndarray:
        """Noiseless outputs for every time where all l+1 inputs are known."""
        return np.convolve(np.asarray(symbols, dtype=float), self.taps, mode="valid")


@dataclass(frozen=True)
class WindowMatrices:
    m: int
    memory: int
    h_vectors: np.ndarray  # row i+m holds h_i, |i| <= m
    H: np.ndarray
    T: np.ndarray

    @property
    def rows(self) -> int:
        return 2 * self.m + self.memory + 1

    @property
    def width(self) -> int:
        return 2 * (self.m + self.memory) + 1

    @property
    def center(self) -> int:
        return self.m + self.memory

    @property
    def h0(self) -> np.ndarray:
        return self.h_vectors[self.m]

    def h(self, i: int) -> np.ndarray:
        if abs(i) > self.m:
            raise IndexError(f"|i| must be <= m={self.m}")
        return self.h_vectors[i + self.m]

    @property
    def full(self) -> np.ndarray:
        return self.H + self.T


def build_window_matrices(channel: ChannelModel, m: int) -> WindowMatrices:
    if int(m) != m or m < 1:
        raise ValueError(f"truncation length m must be a positive integer, got {m}")
    m = int(m)
    h = channel.taps
    ell = channel.memory
    rows = 2 * m + ell + 1
    width = 2 * (m + ell) + 1
    conv = np.zeros((rows, width))
    for r in range(rows):
        for j in range(ell + 1):
            conv[r, r - j + ell] = h[j]
    H = conv.copy()
    T = np.zeros_like(conv)
    if ell:
        H[:, :ell] = 0.0
        H[:, width - ell:] = 0.0
        T[:, :ell] = conv[:, :ell]
        T[:, width - ell:] = conv[:, width - ell:]
    hv = np.stack([H[:, i + m + ell] for i in range(-m, m + 1)])
    for arr in (hv, H, T):
        arr.setflags(write=False)
    return WindowMatrices(m=m, memory=ell, h_vectors=hv, H=H, T=T)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean jointly Gaussian noise.

    ``autocov`` holds ``c_0, c_1, ...`` for the stationary kinds (lags beyond
    the list are uncorrelated).  ``kernel`` is an optional callable
    ``kernel(t, s) -> E[W_t W_s]`` on integer time arrays for non-stationary
    noise, in which case ``sigma2`` must be given explicitly.
    """

    kind: str
    autocov: tuple = ()
    kernel: Callable | None = field(default=None, compare=False)
    sigma2_override: float | None = None

    @classmethod
    def iid(cls, sigma2: float) -> "NoiseModel":
        return cls("iid", (float(sigma2),))._validated()

    @classmethod
    def lag1(cls, sigma2: float, rho: float) -> "NoiseModel":
        return cls("lag1", (float(sigma2), float(rho) * float(sigma2)))._validated()

    @classmethod
    def custom(cls, autocov: Sequence[float]) -> "NoiseModel":
        return cls("custom", tuple(float(c) for c in autocov))._validated()

    @classmethod
    def nonstationary(cls, kernel: Callable, sigma2: float) -> "NoiseModel":
        return cls("kernel", (), kernel=kernel, sigma2_override=float(sigma2))._validated()

    def _validated(self) -> "NoiseModel":
        s2 = self.sigma2
        if not (np.isfinite(s2) and s2 > 0):
            raise ValueError(f"noise variance must be positive and finite, got {s2}")
        if self.kind != "kernel":
            # a long enough window exposes any indefiniteness of the sequence
            n = max(64, 4 * len(self.autocov))
            _check_psd(self.covariance(np.arange(n)))
        return self

    @property
    def sigma2(self) -> float:
        if self.sigma2_override is not None:
            return float(self.sigma2_override)
        return float(self.autocov[0])

    def covariance(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        if self.kernel is not None:
            t1, t2 = np.meshgrid(times, times, indexing="ij")
            return np.asarray(self.kernel(t1, t2), dtype=float)
        lags = np.abs(times[:, None] - times[None, :])
        c = np.asarray(self.autocov, dtype=float)
        out = np.zeros(lags.shape)
        mask = lags < c.size
        out[mask] = c[lags[mask]]
        return out


def _check_psd(K: np.ndarray) -> np.ndarray:
    if not np.allclose(K, K.T, atol=1e-12 * max(1.0, np.abs(K).max())):
        raise ValueError("covariance matrix is not symmetric")
    w, V = np.linalg.eigh(K)
    tr = max(np.trace(K), np.finfo(float).tiny)
    if w.min() < -PSD_TOL * tr:
        raise ValueError(
            f"covariance is not positive semidefinite (min eigenvalue {w.min():.3e})")
    if w.min() < 0:
        K = (V * np.clip(w, 0.0, None)) @ V.T
        K = 0.5 * (K + K.T)
    return K


def output_times(instants, m: int, memory: int) -> np.ndarray:
    """Concatenated output-window times ``t_i-m .. t_i+m+l`` for every instant."""
    instants = np.asarray(instants, dtype=np.int64)
    offs = np.arange(-m, m + memory + 1)
    return (instants[:, None] + offs[None, :]).ravel()


def _check_instants(instants) -> np.ndarray:
    instants = np.atleast_1d(np.asarray(instants, dtype=np.int64))
    if instants.ndim != 1 or instants.size == 0:
        raise ValueError("need at least one time instant")
    if np.any(np.diff(instants) <= 0):
        raise ValueError("time instants must be strictly increasing")
    return instants


def window_covariance(noise: NoiseModel, instants, m: int, memory: int) -> np.ndarray:
    """Covariance of the concatenated noise windows ``[W_t1; ...; W_tn]``."""
    instants = _check_instants(instants)
    K = noise.covariance(output_times(instants, m, memory))
    return _check_psd(K)


@dataclass(frozen=True)
class SymbolWindows:
    """One (or a batch of) global symbol segment(s) and per-instant views.

    ``segment`` has shape ``(..., L)`` and covers times ``start .. start+L-1``.
    """

    segment: np.ndarray
    start: int
    instants: np.ndarray
    m: int
    memory: int

    @property
    def width(self) -> int:
        return 2 * (self.m + self.memory) + 1

    def offsets(self) -> np.ndarray:
        return self.instants - self.m - self.memory - self.start

    @property
    def windows(self) -> np.ndarray:
        """Array of shape ``(..., n, 2(m+l)+1)``: the views A_{t_i}."""
        idx = self.offsets()[:, None] + np.arange(self.width)[None, :]
        return self.segment[..., idx]

    def view(self, i: int) -> np.ndarray:
        return self.windows[..., i, :]

    @property
    def centers(self) -> np.ndarray:
        """Transmitted symbols A_{t_i}, shape ``(..., n)``."""
        return self.windows[..., self.m + self.memory]

    def __len__(self) -> int:
        return 1 if self.segment.ndim == 1 else self.segment.shape[0]


def segment_span(instants, m: int, memory: int) -> tuple[int, int]:
    instants = _check_instants(instants)
    start = int(instants[0] - m - memory)
    stop = int(instants[-1] + m + memory)
    return start, stop - start + 1


def sample_symbol_windows(rng: np.random.Generator, instants, m: int,
                          channel: ChannelModel, constraint=None,
                          size: int | None = None) -> SymbolWindows:
    """Sample the global segment covering every window and slice the views.

    With ``size=None`` one segment is drawn (``segment`` is 1-D); otherwise a
    batch of ``size`` independent segments.
    """
    constraint: Constraint = get_constraint(constraint)
    instants = _check_instants(instants)
    ell = channel.memory
    start, length = segment_span(instants, m, ell)
    n = 1 if size is None else int(size)
    seg = constraint.sample(rng, length, n).astype(np.int8)
    if size is None:
        seg = seg[0]
    return SymbolWindows(segment=seg, start=start, instants=instants, m=int(m), memory=ell)


def sample_noise(rng: np.random.Generator, noise: NoiseModel, instants, m: int,
                 memory: int, size: int | None = None) -> np.ndarray:
    """Draw noise windows ``W_{t_i}`` jointly, shape ``(..., n, 2m+l+1)``.

    The noise is drawn once over the contiguous output range covering every
    window, so overlapping windows share samples.
    """
    instants = _check_instants(instants)
    lo = int(instants[0] - m)
    hi = int(instants[-1] + m + memory)
    times = np.arange(lo, hi + 1)
    K = _check_psd(noise.covariance(times))
    w, V = np.linalg.eigh(K)
    factor = V * np.sqrt(np.clip(w, 0.0, None))
    n = 1 if size is None else int(size)
    g = rng.standard_normal((n, times.size)) @ factor.T
    idx = (instants - m - lo)[:, None] + np.arange(2 * m + memory + 1)[None, :]
    out = g[:, idx]
    return out[0] if size is None else out


def transmit(windows: SymbolWindows, noise_draw, matrices: WindowMatrices) -> np.ndarray:
    """Received windows ``Z_{t_i} = (H+T) A_{t_i} - W_{t_i}``, shape ``(..., n, rows)``."""
    A = windows.windows.astype(float)
    W = np.asarray(noise_draw, dtype=float)
    if W.shape[-1] != matrices.rows or W.shape[:-1] != A.shape[:-1]:
        raise ValueError(
            f"noise draw shape {W.shape} does not match windows {A.shape[:-1]} x {matrices.rows}")
    if A.shape[-1] != matrices.width:
        raise ValueError("symbol windows do not match the window matrices")
    return A @ matrices.full.T - W
