"""Selector objects: E, S, SS^T, the banded matrix G(a) and the mu/nu vectors.

A selector ``s`` is a binary vector over the 2m non-center window positions
``-m..-1, 1..m`` (in that order).  Column ``k`` of ``S`` is the 2m-bit binary
expansion of ``k`` with position ``-m`` as the least significant bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import WindowMatrices

MAX_DENSE_M = 8


def selector_positions(m: int) -> np.ndarray:
    """Window positions (relative to the center) selected by the rows of s."""
    return np.concatenate([np.arange(-m, 0), np.arange(1, m + 1)])


def selector_from_index(k, m: int) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    bits = (k[..., None] >> np.arange(2 * m)) & 1
    return bits.astype(np.int8)


def selector_to_index(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    return (s << np.arange(s.shape[-1])).sum(axis=-1)


def sst_analytic(m: int) -> np.ndarray:
    return 2.0 ** (2 * (m - 1)) * (np.eye(2 * m) + np.ones((2 * m, 2 * m)))


@dataclass(frozen=True)
class SelectorMatrices:
    m: int
    memory: int
    E: np.ndarray
    SST: np.ndarray

    @property
    def count(self) -> int:
        return 1 << (2 * self.m)

    @property
    def columns(self) -> np.ndarray:
        """Window indices of the selectable positions (the nonzero rows of E)."""
        return selector_positions(self.m) + self.m + self.memory

    @property
    def S(self) -> np.ndarray:
        if self.m > MAX_DENSE_M:
            raise ValueError(f"S is not materialized for m > {MAX_DENSE_M}")
        return selector_from_index(np.arange(self.count), self.m).T.astype(float)

    def column(self, k) -> np.ndarray:
        return selector_from_index(k, self.m)


def build_selectors(m: int, memory: int) -> SelectorMatrices:
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    m = int(m)
    width = 2 * (m + memory) + 1
    E = np.zeros((width, 2 * m))
    E[selector_positions(m) + m + memory, np.arange(2 * m)] = 1.0
    E.setflags(write=False)
    SST = sst_analytic(m)
    SST.setflags(write=False)
    return SelectorMatrices(m=m, memory=memory, E=E, SST=SST)


def build_g(a, matrices: WindowMatrices, selectors: SelectorMatrices) -> np.ndarray:
    """G(a) = H diag(a) E, batched over leading axes of ``a``.

    Returns shape ``(..., 2m+l+1, 2m)``.
    """
    a = np.asarray(a, dtype=float)
    cols = selectors.columns
    return matrices.H[:, cols] * a[..., None, cols]


def t_offset(a, matrices: WindowMatrices) -> np.ndarray:
    """T (1 - a): the boundary mismatch between the true window and all-ones."""
    a = np.asarray(a, dtype=float)
    return (1.0 - a) @ matrices.T.T


def compute_mu_nu(a, matrices: WindowMatrices, selectors: SelectorMatrices):
    """Explicit mu(a), nu(a) over all 2^{2m} selectors (small m only)."""
    a = np.asarray(a, dtype=float)
    G = build_g(a, matrices, selectors)
    GS = G @ selectors.S
    mu = GS.T @ t_offset(a, matrices) - np.sum(GS ** 2, axis=0)
    a0 = a[matrices.center]
    nu = mu - 2.0 * a0 * (matrices.h0 @ GS)
    return mu, nu


def linear_terms(a, matrices: WindowMatrices, selectors: SelectorMatrices):
    """Selector-linear parts of mu and nu: G^T T(1-a) and G^T[T(1-a) - 2 a_0 h_0].

    Batched; each returned array has shape ``(..., 2m)``.
    """
    a = np.asarray(a, dtype=float)
    G = build_g(a, matrices, selectors)
    off = t_offset(a, matrices)
    lin_mu = np.einsum("...rk,...r->...k", G, off)
    a0 = a[..., matrices.center]
    lin_nu = lin_mu - 2.0 * a0[..., None] * np.einsum("...rk,r->...k", G, matrices.h0)
    return lin_mu, lin_nu


def selector_to_candidate(a, s, flip_center: bool) -> np.ndarray:
    """Negate ``a`` at every selected position (and at the center if asked)."""
    a = np.asarray(a).copy()
    s = np.asarray(s)
    m = s.shape[-1] // 2
    width = a.shape[-1]
    memory = (width - 1) // 2 - m
    idx = selector_positions(m) + m + memory
    a[..., idx] = np.where(s.astype(bool), -a[..., idx], a[..., idx])
    if flip_center:
        a[..., m + memory] = -a[..., m + memory]
    return a
