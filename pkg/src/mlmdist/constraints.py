"""Admissibility constraints on transmitted symbol sequences.

A constraint decides which +/-1 sequences may be transmitted.  It is used in
three places: sampling the transmitted segment, restricting the detector's
candidate set to admissible words, and restricting the selector maxima in the
closed form.  Local constraints (a finite list of forbidden patterns) can be
handled inside the dynamic program; anything else falls back to exhaustive
enumeration.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class InfeasibleConstraintError(ValueError):
    """Raised when a constraint admits no sequence of the requested length."""


class Constraint:
    """Base class: the unconstrained source (every +/-1 sequence allowed)."""

    name = "none"
    is_local = True
    span = 1
    forbidden: tuple[tuple[int, ...], ...] = ()

    def admissible(self, seqs) -> np.ndarray:
        seqs = np.asarray(seqs)
        return np.ones(seqs.shape[:-1], dtype=bool)

    def sample(self, rng: np.random.Generator, length: int, size: int) -> np.ndarray:
        return rng.choice(np.array([-1, 1], dtype=np.int8), size=(size, length))

    @property
    def trivial(self) -> bool:
        return not self.forbidden and self.is_local

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


UNCONSTRAINED = Constraint()


class ForbiddenPatterns(Constraint):
    """Sequences in which none of the listed patterns occurs as a substring.

    All patterns must have the same length ``span``.  Sampling is uniform over
    the admissible sequences of the requested length (transfer-matrix
    counting on the last ``span - 1`` symbols).
    """

    is_local = True

    def __init__(self, patterns: Sequence[Sequence[int]], name: str = "patterns"):
        pats = tuple(tuple(int(v) for v in p) for p in patterns)
        if not pats:
            raise ValueError("at least one forbidden pattern is required")
        spans = {len(p) for p in pats}
        if len(spans) != 1:
            raise ValueError("forbidden patterns must share one length")
        for p in pats:
            if any(v not in (-1, 1) for v in p):
                raise ValueError(f"pattern {p} is not a +/-1 word")
        self.forbidden = pats
        self.span = spans.pop()
        self.name = name
        self._codes = {self._encode(p) for p in pats}
        self._count_cache: dict[int, np.ndarray] = {}

    @staticmethod
    def _encode(symbols) -> int:
        # bit i set <=> symbol i equals -1 (symbol 0 is the oldest)
        code = 0
        for i, v in enumerate(symbols):
            if v < 0:
                code |= 1 << i
        return code

    def pattern_allowed(self, window: Sequence[int]) -> bool:
        return self._encode(window) not in self._codes

    def admissible(self, seqs) -> np.ndarray:
        seqs = np.asarray(seqs)
        length = seqs.shape[-1]
        ok = np.ones(seqs.shape[:-1], dtype=bool)
        k = self.span
        for start in range(0, length - k + 1):
            win = seqs[..., start:start + k]
            for pat in self.forbidden:
                ok &= ~np.all(win == np.asarray(pat), axis=-1)
        return ok

    def _counts(self, length: int) -> np.ndarray:
        """counts[p, state] = admissible completions of positions p..length-1.

        ``state`` encodes the previous ``span - 1`` symbols (bit i <=> the
        symbol i places back is -1) and is only meaningful once that many
        symbols exist; before that, missing history is treated as unknown and
        the pattern test is skipped.
        """
        if length in self._count_cache:
            return self._count_cache[length]
        k = self.span
        h = k - 1
        nstates = 1 << h
        counts = np.zeros((length + 1, nstates), dtype=object)
        counts[length, :] = 1
        for p in range(length - 1, -1, -1):
            for state in range(nstates):
                total = 0
                for sym_bit in (0, 1):
                    if p >= h and self._blocked(state, sym_bit):
                        continue
                    total += counts[p + 1, self._shift(state, sym_bit)]
                counts[p, state] = total
        self._count_cache[length] = counts
        return counts

    def _shift(self, state: int, sym_bit: int) -> int:
        h = self.span - 1
        if h == 0:
            return 0
        return ((state << 1) | sym_bit) & ((1 << h) - 1)

    def _blocked(self, state: int, sym_bit: int) -> bool:
        h = self.span - 1
        # rebuild the window oldest -> newest
        window = [(-1 if (state >> (h - 1 - i)) & 1 else 1) for i in range(h)]
        window.append(-1 if sym_bit else 1)
        return not self.pattern_allowed(window)

    def sample(self, rng: np.random.Generator, length: int, size: int) -> np.ndarray:
        counts = self._counts(length)
        if counts[0, 0] == 0:
            raise InfeasibleConstraintError(
                f"constraint {self.name!r} admits no sequence of length {length}")
        h = self.span - 1
        out = np.empty((size, length), dtype=np.int8)
        state = np.zeros(size, dtype=np.int64)
        u = rng.random((size, length))
        for p in range(length):
            # P(next symbol = -1 | history) from completion counts
            c = np.zeros((1 << max(h, 0), 2))
            for st in range(c.shape[0]):
                for b in (0, 1):
                    if p >= h and self._blocked(st, b):
                        continue
                    c[st, b] = float(counts[p + 1, self._shift(st, b)])
            tot = c.sum(axis=1)
            tot[tot == 0] = 1.0
            p_minus = c[state, 1] / tot[state]
            bit = (u[:, p] < p_minus).astype(np.int64)
            out[:, p] = np.where(bit == 1, -1, 1)
            if h:
                state = ((state << 1) | bit) & ((1 << h) - 1)
        return out


def rll_d1() -> ForbiddenPatterns:
    """RLL d=1 constraint: no two consecutive transitions (runs of length >= 2)."""
    return ForbiddenPatterns([(1, -1, 1), (-1, 1, -1)], name="rll-d1")


class PredicateConstraint(Constraint):
    """Arbitrary admissibility predicate on a +/-1 sequence.

    Not decomposable into sliding windows, so candidate restriction uses
    exhaustive enumeration and sampling uses rejection.
    """

    is_local = False

    def __init__(self, predicate: Callable[[np.ndarray], bool], name: str = "custom",
                 max_rejections: int = 10_000):
        self.predicate = predicate
        self.name = name
        self.max_rejections = max_rejections

    def admissible(self, seqs) -> np.ndarray:
        seqs = np.asarray(seqs)
        flat = seqs.reshape(-1, seqs.shape[-1])
        ok = np.fromiter((bool(self.predicate(row)) for row in flat), dtype=bool,
                         count=flat.shape[0])
        return ok.reshape(seqs.shape[:-1])

    def sample(self, rng: np.random.Generator, length: int, size: int) -> np.ndarray:
        out = np.empty((size, length), dtype=np.int8)
        filled = 0
        attempts = 0
        while filled < size:
            batch = rng.choice(np.array([-1, 1], dtype=np.int8), size=(max(size, 64), length))
            ok = self.admissible(batch)
            take = batch[ok][: size - filled]
            out[filled:filled + len(take)] = take
            filled += len(take)
            attempts += batch.shape[0]
            if filled == 0 and attempts >= self.max_rejections:
                raise InfeasibleConstraintError(
                    f"constraint {self.name!r} rejected {attempts} draws of length {length}")
        return out


def get_constraint(spec) -> Constraint:
    """Resolve ``None``, a name (``"none"``, ``"rll-d1"``) or a Constraint."""
    if spec is None:
        return UNCONSTRAINED
    if isinstance(spec, Constraint):
        return spec
    key = str(spec).strip().lower()
    if key in ("", "none", "unconstrained"):
        return UNCONSTRAINED
    if key in ("rll-d1", "rll_d1", "rll"):
        return rll_d1()
    raise ValueError(f"unknown constraint {spec!r}")
