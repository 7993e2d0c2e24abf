"""Direct m-truncated MLM detection by candidate enumeration.

This is the simulation oracle: it never uses the closed form, only the
definitions of the candidate set, the minimum-distance decision and the
reliability as a metric gap.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import (ChannelModel, NoiseModel, WindowMatrices, build_window_matrices,
                      sample_noise, sample_symbol_windows, transmit)
from .constraints import Constraint, get_constraint

MAX_ORACLE_M = 8


@dataclass(frozen=True)
class CandidateSet:
    """All +/-1 windows with the l boundary symbols on each side pinned.

    Rows are in lexicographic order of the candidate vector (-1 < +1), which
    is the argmin tie-break order.
    """

    m: int
    memory: int
    words: np.ndarray
    constraint: Constraint

    @classmethod
    def build(cls, m: int, memory: int, constraint=None, boundary=None) -> "CandidateSet":
        if m > MAX_ORACLE_M:
            raise ValueError(f"enumerating oracle supports m <= {MAX_ORACLE_M}")
        constraint = get_constraint(constraint)
        if boundary is None:
            boundary = np.ones(memory, dtype=np.int8)
        boundary = np.asarray(boundary, dtype=np.int8)
        if boundary.shape != (memory,) or np.any(np.abs(boundary) != 1):
            raise ValueError("boundary word must be a +/-1 vector of length l")
        core = np.array(list(itertools.product((-1, 1), repeat=2 * m + 1)), dtype=np.int8)
        if not constraint.trivial:
            core = core[constraint.admissible(core)]
        if core.shape[0] == 0:
            raise ValueError("constraint admits no candidate")
        k = core.shape[0]
        words = np.concatenate([np.broadcast_to(boundary, (k, memory)), core,
                                np.broadcast_to(boundary, (k, memory))], axis=1)
        words.setflags(write=False)
        return cls(m=m, memory=memory, words=words, constraint=constraint)

    def __len__(self) -> int:
        return self.words.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.words[:, self.m + self.memory]

    def core_codes(self, windows) -> np.ndarray:
        """Integer code of the core (positions -m..m) of each window; increasing in row order."""
        core = np.asarray(windows)[..., self.memory:self.memory + 2 * self.m + 1] > 0
        weights = 1 << np.arange(2 * self.m, -1, -1, dtype=np.int64)
        return core.astype(np.int64) @ weights

    def locate(self, windows) -> np.ndarray:
        """Row index of the candidate sharing each window's core, or -1."""
        codes = self.core_codes(self.words)
        want = self.core_codes(windows)
        idx = np.clip(np.searchsorted(codes, want), 0, len(codes) - 1)
        return np.where(codes[idx] == want, idx, -1)


@dataclass(frozen=True)
class DetectionResult:
    B_window: np.ndarray
    B: np.ndarray
    R: np.ndarray


def _metrics(Z, words, matrices: WindowMatrices) -> np.ndarray:
    """|Z - T1 - H a|^2 for every candidate, shape ``(..., K)``."""
    Z = np.asarray(Z, dtype=float)
    y = Z - matrices.T.sum(axis=1)
    Ha = words.astype(float) @ matrices.H.T
    return (np.sum(y ** 2, axis=-1)[..., None] - 2.0 * y @ Ha.T
            + np.sum(Ha ** 2, axis=-1))


def delta(Z, a, abar, matrices: WindowMatrices) -> float:
    """|Z - T1 - Ha|^2 - |Z - T1 - H abar|^2."""
    Z = np.asarray(Z, dtype=float)
    a = np.asarray(a, dtype=float)
    abar = np.asarray(abar, dtype=float)
    if Z.shape[-1] != matrices.rows or a.shape[-1] != matrices.width or abar.shape != a.shape:
        raise ValueError("dimension mismatch")
    y = Z - matrices.T.sum(axis=1)
    return np.sum((y - a @ matrices.H.T) ** 2, axis=-1) - np.sum((y - abar @ matrices.H.T) ** 2, axis=-1)


def detect(Z, candidates: CandidateSet, sigma2: float, matrices: WindowMatrices) -> DetectionResult:
    """Minimum-distance window decision and its reliability (batched over Z)."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-1] != matrices.rows:
        raise ValueError("received window has the wrong length")
    d = _metrics(Z, candidates.words, matrices)
    best = np.argmin(d, axis=-1)
    dmin = np.take_along_axis(d, best[..., None], axis=-1)[..., 0]
    B = candidates.centers[best]
    other = candidates.centers != np.asarray(B)[..., None]
    gap = np.where(other, d, np.inf).min(axis=-1) - dmin
    R = np.maximum(gap, 0.0) / (2.0 * sigma2)
    return DetectionResult(B_window=candidates.words[best], B=B, R=R)


def compute_xy(A_window, W_window, candidates: CandidateSet, matrices: WindowMatrices):
    """X_t and Y_t: best metric gains (over the true window) of wrong/right-center candidates.

    Batched over leading axes; returns two arrays of that shape.
    """
    A = np.asarray(A_window, dtype=float)
    W = np.asarray(W_window, dtype=float)
    Z = A @ matrices.full.T - W
    y = Z - matrices.T.sum(axis=1)
    d_true = np.sum((y - A @ matrices.H.T) ** 2, axis=-1)
    d = _metrics(Z, candidates.words, matrices)
    gain = (d_true[..., None] - d) / 4.0
    # the candidate matching the true core has gain exactly zero; pin it so
    # cancellation in the expanded metric cannot push Y below 0
    hit = candidates.locate(A).reshape(-1)
    flat = gain.reshape(-1, gain.shape[-1])
    rows = np.nonzero(hit >= 0)[0]
    flat[rows, hit[rows]] = 0.0
    center = A[..., matrices.center]
    same = candidates.centers == center[..., None]
    X = np.where(~same, gain, -np.inf).max(axis=-1)
    Y = np.where(same, gain, -np.inf).max(axis=-1)
    return X, Y


@dataclass
class SimulationResult:
    """Per-trial oracle outputs, each of shape ``(trials, n)``."""

    A: np.ndarray
    B: np.ndarray
    R: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    sigma2: float

    @property
    def errors(self) -> np.ndarray:
        return self.B != self.A

    @property
    def xmy(self) -> np.ndarray:
        return self.X - self.Y


def simulate_detector(m: int, instants, channel: ChannelModel, noise: NoiseModel,
                      trials: int, rng: np.random.Generator, constraint=None,
                      sigma2: float | None = None, chunk: int = 4096) -> SimulationResult:
    """Transmit, detect and record X, Y, B, R for every instant of every trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if m > MAX_ORACLE_M:
        raise ValueError(f"enumerating oracle supports m <= {MAX_ORACLE_M}")
    constraint = get_constraint(constraint)
    instants = np.atleast_1d(np.asarray(instants, dtype=np.int64))
    mats = build_window_matrices(channel, m)
    cands = CandidateSet.build(m, channel.memory, constraint)
    sigma2 = noise.sigma2 if sigma2 is None else sigma2
    # keep the (chunk x n x K) metric array bounded
    chunk = max(1, min(chunk, (1 << 22) // max(1, len(cands) * instants.size)))
    parts = {k: [] for k in ("A", "B", "R", "X", "Y")}
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        win = sample_symbol_windows(rng, instants, m, channel, constraint, size=b)
        W = sample_noise(rng, noise, instants, m, channel.memory, size=b)
        Z = transmit(win, W, mats)
        res = detect(Z, cands, sigma2, mats)
        X, Y = compute_xy(win.windows, W, cands, mats)
        parts["A"].append(win.centers)
        parts["B"].append(res.B)
        parts["R"].append(res.R)
        parts["X"].append(X)
        parts["Y"].append(Y)
        done += b
    out = {k: np.concatenate(v, axis=0) for k, v in parts.items()}
    return SimulationResult(sigma2=sigma2, **out)


def simulate_empirical_cdf(config, channel: ChannelModel, noise: NoiseModel, trials: int,
                           rng: np.random.Generator, sigma2: float | None = None,
                           delta_conf: float = 0.05):
    """Empirical joint CDFs of X-Y (on ``config.grid``) and of R (same grid).

    Returns ``(cdf_xmy, cdf_r, simulation)``; both estimates carry binomial
    standard errors in ``stderr`` and a Hoeffding half-width.
    """
    from .estimator import empirical_cdf

    sim = simulate_detector(config.m, config.instants, channel, noise, trials, rng,
                            constraint=config.constraint, sigma2=sigma2)
    grid = config.grid_array()
    return (empirical_cdf(sim.xmy, grid, delta_conf),
            empirical_cdf(sim.R, grid, delta_conf), sim)
