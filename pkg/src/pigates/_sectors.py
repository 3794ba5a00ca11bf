"""Block structure shared by every operator of a model.

Dispersive models conserve the photon number, so the joint space splits into
equal-size sectors that no Hamiltonian or jump operator couples. Superoperators
are then stored per ordered sector pair, which turns a ``D^2 x D^2`` matrix
into ``S^2`` blocks of size ``m^2 x m^2``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .model import SampledControl, SystemModel

PATTERN_TOL = 1e-14


class Sectors:
    """Partition of ``range(D)`` into ``S`` sectors of common size ``m``."""

    def __init__(self, groups: list[list[int]], dim: int):
        self.dim = dim
        self.idx = np.array(groups, dtype=int)  # (S, m)
        self.S, self.m = self.idx.shape
        self.M = self.m * self.m
        # global column-stacked vec index of each (s, s', local vec) entry
        rows = self.idx[:, None, None, :]          # i = idx[s][a]
        cols = self.idx[None, :, :, None]          # j = idx[s'][b]
        g = cols * dim + rows                      # (S, S, m_b, m_a)
        self.vec_index = g.reshape(self.S, self.S, self.M)

    # -- operators ----------------------------------------------------------

    def blocks(self, a: np.ndarray) -> np.ndarray:
        """Diagonal sector blocks of ``a``: (..., D, D) -> (..., S, m, m)."""
        return a[..., self.idx[:, :, None], self.idx[:, None, :]]

    def unblocks(self, b: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`blocks` for block-diagonal operators."""
        out = np.zeros(b.shape[:-3] + (self.dim, self.dim), dtype=complex)
        out[..., self.idx[:, :, None], self.idx[:, None, :]] = b
        return out

    # -- density matrices ---------------------------------------------------

    def to_pairs(self, rho: np.ndarray) -> np.ndarray:
        """(..., D, D) -> (..., S, S, M) column-stacked pair vectors."""
        blk = rho[..., self.idx[:, None, :, None], self.idx[None, :, None, :]]
        return np.swapaxes(blk, -1, -2).reshape(rho.shape[:-2] + (self.S, self.S, self.M))

    def from_pairs(self, v: np.ndarray) -> np.ndarray:
        lead = v.shape[:-3]
        blk = np.swapaxes(v.reshape(lead + (self.S, self.S, self.m, self.m)), -1, -2)
        out = np.zeros(lead + (self.dim, self.dim), dtype=complex)
        out[..., self.idx[:, None, :, None], self.idx[None, :, None, :]] = blk
        return out

    # -- superoperators -----------------------------------------------------

    def pair_kron(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Pair superoperator ``conj(left[s']) x right[s]``.

        ``left`` and ``right`` have shape (..., S, m, m); the result has shape
        (..., S, S, M, M) and maps ``X -> right[s] X left[s']^dagger``.
        """
        out = np.einsum("...tij,...skl->...stikjl", left.conj(), right)
        return out.reshape(out.shape[:-6] + (self.S, self.S, self.M, self.M))

    def liouvillian(self, heff: np.ndarray, jumps) -> np.ndarray:
        """Pair Liouvillian from sector blocks of ``H_eff`` and jump blocks."""
        eye = np.eye(self.m)
        lead = heff.shape[:-3]
        ham_r = np.einsum("ij,...skl->...sikjl", eye, heff).reshape(lead + (self.S, self.M, self.M))
        ham_l = np.einsum("...tij,kl->...tikjl", heff.conj(), eye)
        ham_l = ham_l.reshape(lead + (self.S, self.M, self.M))
        gen = -1j * ham_r[..., :, None, :, :] + 1j * ham_l[..., None, :, :, :]
        for rate, kb in jumps:
            gen = gen + rate * self.pair_kron(kb, kb)
        return gen

    def jump_super(self, jumps) -> np.ndarray | None:
        out = None
        for rate, kb in jumps:
            term = rate * self.pair_kron(kb, kb)
            out = term if out is None else out + term
        return out

    def to_full(self, g: np.ndarray) -> np.ndarray:
        """Dense (D^2, D^2) column-stacked superoperator from pair blocks."""
        d2 = self.dim * self.dim
        full = np.zeros((d2, d2), dtype=complex)
        vi = self.vec_index
        full[vi[:, :, :, None], vi[:, :, None, :]] = g
        return full

    def from_full(self, full: np.ndarray) -> np.ndarray:
        vi = self.vec_index
        return full[vi[:, :, :, None], vi[:, :, None, :]]

    def apply(self, g: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Apply pair superoperator (S, S, M, M) to pair vectors (..., S, S, M)."""
        return np.einsum("stij,...stj->...sti", g, v)


def _pattern(model: SystemModel) -> np.ndarray:
    dim = model.dim
    pat = np.abs(model.static_hamiltonian) > PATTERN_TOL
    for seg in model.frame:
        pat |= np.abs(scipy.linalg.block_diag(*seg.blocks)) > PATTERN_TOL
    for seg in model.controls:
        if isinstance(seg, SampledControl):
            span = seg.end - seg.start
            for frac in (0.1234, 0.5, 0.8765):
                pat |= np.abs(seg.func(seg.start + frac * span)) > PATTERN_TOL
        else:
            pat |= np.abs(seg.hamiltonian) > PATTERN_TOL
    for j in model.jumps:
        pat |= np.abs(j.operator) > PATTERN_TOL
    return pat | pat.T | np.eye(dim, dtype=bool)


def find_sectors(model: SystemModel) -> Sectors:
    """Equal-size invariant sectors of ``model``, or one sector if uneven."""
    key = ("sectors",)
    if key in model._cache:
        return model._cache[key]
    dim = model.dim
    parent = list(range(dim))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rows, cols = np.nonzero(_pattern(model))
    for i, j in zip(rows, cols):
        ri, rj = root(int(i)), root(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(dim):
        groups.setdefault(root(i), []).append(i)
    parts = sorted(groups.values(), key=lambda g: g[0])
    if len({len(g) for g in parts}) != 1:
        parts = [list(range(dim))]
    sec = Sectors(parts, dim)
    model._cache[key] = sec
    return sec


def single_sector(dim: int) -> Sectors:
    return Sectors([list(range(dim))], dim)
