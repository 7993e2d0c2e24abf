"""Banded binary quadratic maximization over selectors.

Solves ``max_s  s^T C - |G(a) s|^2`` over ``s in {0,1}^{2m}`` by dynamic
programming along the output rows.  Row ``tau`` of ``G s`` only involves
``s_{tau-l} .. s_tau``, so a trellis whose state is the last ``l`` selector bits
visits ``(2m+l+1) * 2^(l+1)`` branches instead of ``2^(2m)`` selectors.

Positions are ``-m..m`` with ``s_0`` pinned to 0 (the center is never a
selector entry) and ``s_tau = 0`` for ``|tau| > m``.  All routines are batched
over the leading axes of ``C`` and the band coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import Constraint, get_constraint
from .selectors import selector_from_index, selector_positions

NEG_INF = -np.inf


@dataclass(frozen=True)
class DpInstance:
    """Linear weights ``C`` (shape ``(..., 2m)``) and the band of ``G(a)``.

    ``coef[..., r, j] = h_j * a_{tau-j}`` for output row ``r = tau + m``
    (``tau = -m .. m+l``), zero whenever ``tau - j`` is not a selectable
    position.
    """

    C: np.ndarray
    coef: np.ndarray

    @property
    def m(self) -> int:
        return self.C.shape[-1] // 2

    @property
    def memory(self) -> int:
        return self.coef.shape[-1] - 1

    @classmethod
    def from_window(cls, a, taps, C) -> "DpInstance":
        C = np.asarray(C, dtype=float)
        a = np.asarray(a, dtype=float)
        taps = np.asarray(taps, dtype=float)
        m = C.shape[-1] // 2
        ell = taps.size - 1
        if a.shape[-1] != 2 * (m + ell) + 1:
            raise ValueError("window length does not match C and the taps")
        tau = np.arange(-m, m + ell + 1)
        pos = tau[:, None] - np.arange(ell + 1)[None, :]
        valid = (np.abs(pos) <= m) & (pos != 0)
        idx = np.clip(pos + m + ell, 0, a.shape[-1] - 1)
        coef = np.where(valid, taps[None, :] * a[..., idx], 0.0)
        return cls(C=C, coef=coef)

    def dense_g(self) -> np.ndarray:
        """Rebuild ``G(a)`` (shape ``(..., 2m+l+1, 2m)``) from the band."""
        m, ell = self.m, self.memory
        rows = 2 * m + ell + 1
        G = np.zeros(self.coef.shape[:-2] + (rows, 2 * m))
        col_of = {int(p): k for k, p in enumerate(selector_positions(m))}
        for r in range(rows):
            tau = r - m
            for j in range(ell + 1):
                k = col_of.get(tau - j)
                if k is not None:
                    G[..., r, k] = self.coef[..., r, j]
        return G


def _word_bits(width: int) -> np.ndarray:
    """bits[w, j] = bit j of w, for every (width+1)-bit word."""
    words = np.arange(1 << (width + 1))
    return ((words[:, None] >> np.arange(width + 1)) & 1).astype(float)


def _run(C, coef, width: int, forced: dict, block=None, track: bool = False):
    """Generic forward pass; the state keeps the last ``width`` bits.

    ``forced[tau]`` pins bit ``s_tau``; ``block(tau)`` returns a boolean mask
    over words (shape ``(..., 2^(width+1))``) of forbidden transitions.
    Returns the final values per state and the per-step branch choices.
    """
    m = C.shape[-1] // 2
    ell = coef.shape[-1] - 1
    rows = 2 * m + ell + 1
    batch = np.broadcast_shapes(C.shape[:-1], coef.shape[:-2])
    C = np.broadcast_to(C, batch + C.shape[-1:])
    coef = np.broadcast_to(coef, batch + coef.shape[-2:])
    nstates = 1 << width
    bits = _word_bits(width)
    # the quadratic row only sees the newest l+1 bits of the word
    qbits = bits[:, :ell + 1]
    x = (np.arange(1 << (width + 1)) & 1).astype(bool)
    ns = np.arange(nstates)
    w0, w1 = ns, ns | (1 << width)

    beta = np.full(batch + (nstates,), NEG_INF)
    beta[..., 0] = 0.0
    choices = []
    col = {int(p): k for k, p in enumerate(selector_positions(m))}
    for r in range(rows):
        tau = r - m
        row = coef[..., r, :] @ qbits.T
        reward = np.zeros(batch + (1,))
        if tau in col:
            reward = C[..., col[tau]][..., None]
        gain = np.where(x, reward, 0.0) - row ** 2
        pinned = forced.get(tau, 0 if abs(tau) > m else None)
        if pinned is not None:
            gain = np.where(x == bool(pinned), gain, NEG_INF)
        if block is not None:
            bad = block(tau)
            if bad is not None:
                gain = np.where(bad, NEG_INF, gain)
        # predecessor of word w is state w >> 1; -inf + finite stays -inf and
        # beta is never subtracted, so no inf - inf can arise
        v0 = beta[..., w0 >> 1] + gain[..., w0]
        v1 = beta[..., w1 >> 1] + gain[..., w1]
        take1 = v1 > v0
        beta = np.where(take1, v1, v0)
        if track:
            choices.append(take1)
    return beta, choices


def _backtrack(choices, width: int, final_state) -> np.ndarray:
    """Recover the selector bits (positions -m..m+l) along the chosen path."""
    rows = len(choices)
    state = np.asarray(final_state, dtype=np.int64)
    bits = np.zeros(state.shape + (rows,), dtype=np.int8)
    for r in range(rows - 1, -1, -1):
        take1 = np.take_along_axis(choices[r], state[..., None], axis=-1)[..., 0]
        word = state | (take1.astype(np.int64) << width)
        bits[..., r] = word & 1
        state = word >> 1
    return bits


def _positions_to_selector(bits, m: int) -> np.ndarray:
    # bits are indexed by tau + m over -m..m+l
    return bits[..., selector_positions(m) + m]


def dp_max(instance: DpInstance, return_argmax: bool = False):
    """max over s of ``s^T C - |G s|^2`` with ``s_0 = 0``.

    With ``return_argmax`` also returns the maximizing selector (ties go to
    the branch whose dropped bit is 0) and the center bit it assigned, which
    is always 0.
    """
    C = np.asarray(instance.C, dtype=float)
    coef = np.asarray(instance.coef, dtype=float)
    if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(C))):
        raise ValueError("DP inputs must be finite")
    m = C.shape[-1] // 2
    ell = coef.shape[-1] - 1
    beta, choices = _run(C, coef, ell, {0: 0}, track=return_argmax)
    value = beta[..., 0]
    if not return_argmax:
        return value
    path = _backtrack(choices, ell, np.zeros(value.shape, dtype=np.int64))
    return value, _positions_to_selector(path, m), path[..., m]


def _local_block(constraint: Constraint, a_core, m: int, width: int):
    """Forbidden-word masks for a sliding-window constraint on the flipped core.

    ``a_core`` holds the transmitted symbols at positions ``-m..m``; flipping
    bit ``f_p`` negates position ``p``.  Only windows fully inside the core are
    checked, matching the candidate-set restriction.
    """
    span = constraint.span
    bits = _word_bits(width)[:, :span]
    signs = 1.0 - 2.0 * bits  # (words, span), column j <-> position tau - j
    pats = np.asarray(constraint.forbidden, dtype=float)  # oldest first

    def block(tau):
        lo = tau - span + 1
        if lo < -m or tau > m:
            return None
        syms = a_core[..., None, tau + m - np.arange(span)] * signs
        syms = syms[..., ::-1]  # oldest first
        bad = np.zeros(syms.shape[:-1], dtype=bool)
        for p in pats:
            bad |= np.all(syms == p, axis=-1)
        return bad

    return block


def dp_max_constrained(instance: DpInstance, a_window, constraint, flip_center: bool):
    """Constrained maximum: only selectors whose candidate is admissible.

    The candidate is ``selector_to_candidate(a, s, flip_center)``; admissibility
    is tested on its core (positions ``-m..m``).  Returns ``-inf`` where no
    selector qualifies.
    """
    constraint = get_constraint(constraint)
    C = np.asarray(instance.C, dtype=float)
    coef = np.asarray(instance.coef, dtype=float)
    m = C.shape[-1] // 2
    ell = coef.shape[-1] - 1
    if constraint.trivial:
        return dp_max(instance)
    if not constraint.is_local:
        raise ValueError(
            f"constraint {constraint.name!r} is not sliding-window local; use exhaustive_max")
    width = max(ell, constraint.span - 1)
    a = np.asarray(a_window, dtype=float)
    core = a[..., ell:ell + 2 * m + 1]
    # the center bit carries the flip for admissibility but must not enter the
    # quadratic, so its band entries are zeroed
    tau = np.arange(-m, m + ell + 1)
    center = (tau[:, None] - np.arange(ell + 1)[None, :]) == 0
    coef_w = np.where(center, 0.0, coef)
    block = _local_block(constraint, core, m, width)
    beta, _ = _run(C, coef_w, width, {0: int(bool(flip_center))}, block=block)
    return beta.max(axis=-1)


def exhaustive_max(C, G, allowed=None) -> np.ndarray:
    """Brute-force max over all ``2^(2m)`` selectors (optionally masked).

    ``G`` has shape ``(..., rows, 2m)``; ``allowed`` is a boolean array over
    selector indices (broadcast against the batch).
    """
    C = np.asarray(C, dtype=float)
    G = np.asarray(G, dtype=float)
    m = C.shape[-1] // 2
    S = selector_from_index(np.arange(1 << (2 * m)), m).astype(float)
    GS = G @ S.T
    vals = C @ S.T - np.sum(GS ** 2, axis=-2)
    if allowed is not None:
        vals = np.where(allowed, vals, NEG_INF)
    return vals.max(axis=-1)


def admissible_selectors(a_window, m: int, memory: int, constraint, flip_center: bool) -> np.ndarray:
    """Boolean mask over selector indices whose candidate core is admissible."""
    from .selectors import selector_to_candidate

    constraint = get_constraint(constraint)
    a = np.asarray(a_window)
    S = selector_from_index(np.arange(1 << (2 * m)), m)
    cands = selector_to_candidate(np.broadcast_to(a[..., None, :], a.shape[:-1] + (S.shape[0], a.shape[-1])),
                                  S, flip_center)
    return constraint.admissible(cands[..., memory:memory + 2 * m + 1])
