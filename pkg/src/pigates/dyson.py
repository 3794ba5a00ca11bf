"""Evolution engine: no-jump propagators, Lindblad integration, Dyson terms.

Superoperators act on column-stacked density matrices,
``vec(X)[j*D + i] = X[i, j]``, so ``vec(A X B) = (B^T x A) vec(X)`` and the
Liouvillian reads::

    L = -i (I x H_eff - conj(H_eff) x I) + sum_k rate_k conj(K_k) x K_k

The Dyson expansion splits ``L`` into the no-jump part (first term) and the
jump part ``S`` (the sum), and groups trajectories by jump count::

    G_0(t, 0) = W(t, 0)
    G_p(t, 0) = int_{0 <= t_1 <= ... <= t_p <= t} W S W ... S W

Each piecewise-constant piece is integrated with nested Gauss-Legendre
quadrature and pieces are chained with the convolution rule
``G_p(t3, t1) = sum_q G_q(t3, t2) G_{p-q}(t2, t1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._sectors import Sectors, find_sectors
from .model import JumpOperator, ModelError, Piece, SystemModel
from .numerics import NumericError, as_matrix, is_hermitian, matrix_exponential

__all__ = [
    "QuadratureError",
    "DysonTerm",
    "ConditionalChannel",
    "effective_hamiltonian",
    "no_jump_propagator",
    "evolve_master",
    "master_superoperator",
    "dyson_terms",
    "dyson_term",
    "path_operator",
    "conditional_channel",
    "choi_from_superoperator",
    "choi_unitarity",
    "liouvillian",
]

DOUBLING_TOL = 1e-7
CHUNK_BYTES = 1 << 25


class QuadratureError(NumericError):
    """Raised when node doubling changes a Dyson term beyond tolerance."""


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# ----------------------------------------------------------------------------
# effective Hamiltonian and no-jump propagator


def effective_hamiltonian(model: SystemModel, t: float) -> np.ndarray:
    """Interaction-picture ``H_eff(t) = H(t) - (i/2) sum rate K^dagger K``.

    The Hermitian part is the total interaction-picture Hamiltonian; the
    anti-Hermitian part is ``-(1/2) sum rate K^dagger K`` with the jump
    operators rotated into the frame.
    """
    model.check_time(t)
    h = model.interaction_hamiltonian(t).astype(complex)
    for j in model.jumps:
        if j.rate:
            k = model.jump_interaction(j, t)
            h = h - 0.5j * j.rate * (k.conj().T @ k)
    return h


def _chunks(pieces, per_chunk):
    buf = []
    for p in pieces:
        buf.append(p)
        if len(buf) >= per_chunk:
            yield buf
            buf = []
    if buf:
        yield buf


def _piece_propagators(sec: Sectors, chunk: list[Piece]) -> np.ndarray:
    heff = sec.blocks(np.stack([p.effective_hamiltonian() for p in chunk]))
    tau = np.array([p.duration for p in chunk])
    return matrix_exponential(-1j * heff * tau[:, None, None, None])


def no_jump_propagator(model: SystemModel, t1: float, t2: float,
                       step_scale: float = 1.0) -> np.ndarray:
    """No-jump propagator ``W(t2, t1)`` in the interaction picture.

    Ordered product of the piece exponentials ``exp(-i H_eff dt)``.

    Raises
    ------
    ModelError
        If ``t1 > t2`` or either time lies outside the schedule.
    """
    if t1 > t2:
        raise ModelError(f"no_jump_propagator needs t1 <= t2, got {t1} > {t2}")
    model.check_time(t1)
    model.check_time(t2)
    sec = find_sectors(model)
    w = np.broadcast_to(np.eye(sec.m, dtype=complex), (sec.S, sec.m, sec.m)).copy()
    per = max(1, CHUNK_BYTES // (16 * sec.S * sec.m * sec.m * 4))
    for chunk in _chunks(model.pieces(t1, t2, step_scale), per):
        for wk in _piece_propagators(sec, chunk):
            w = wk @ w
    return sec.unblocks(w)


# ----------------------------------------------------------------------------
# master equation


def liouvillian(model: SystemModel, t: float) -> np.ndarray:
    """Dense column-stacked Liouvillian at time ``t``."""
    model.check_time(t)
    dim = model.dim
    heff = effective_hamiltonian(model, t)
    eye = np.eye(dim)
    gen = -1j * (np.kron(eye, heff) - np.kron(heff.conj(), eye))
    for j in model.jumps:
        if j.rate:
            k = model.jump_interaction(j, t)
            gen += j.rate * np.kron(k.conj(), k)
    return gen


def _piece_jump_blocks(sec: Sectors, piece: Piece):
    return [(rate, sec.blocks(k)) for rate, k in piece.jumps]


def _validate_rho(rho, dim):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[-2:] != (dim, dim):
        raise ModelError(f"density matrix must be {dim}x{dim}")
    for r in rho.reshape(-1, dim, dim):
        if not np.all(np.isfinite(r)):
            raise ModelError("density matrix has non-finite entries")
        if not is_hermitian(r, 1e-10):
            raise ModelError("density matrix is not Hermitian")
        if abs(np.trace(r).real - 1) > 1e-10:
            raise ModelError("density matrix must have unit trace")
        if np.linalg.eigvalsh(r)[0] < -1e-10:
            raise ModelError("density matrix is not positive semidefinite")
    return rho


def _master_pairs(model, sec, v, t0, t1, step_scale):
    per = max(1, CHUNK_BYTES // (16 * sec.S * sec.S * sec.M * sec.M))
    for chunk in _chunks(model.pieces(t0, t1, step_scale), per):
        heff = sec.blocks(np.stack([p.effective_hamiltonian() for p in chunk]))
        gens = []
        cache = {}
        for p, hb in zip(chunk, heff):
            if p.jump_key not in cache:
                cache[p.jump_key] = sec.jump_super(_piece_jump_blocks(sec, p))
            gen = sec.liouvillian(hb, [])
            if cache[p.jump_key] is not None:
                gen = gen + cache[p.jump_key]
            gens.append(gen * p.duration)
        props = matrix_exponential(np.stack(gens))
        for e in props:
            v = sec.apply(e, v)
    return v


def evolve_master(model: SystemModel, rho0, t: float, t0: float = 0.0,
                  step_scale: float = 1.0, validate: bool = True) -> np.ndarray:
    """Integrate the Lindblad equation from ``t0`` to ``t``.

    Parameters
    ----------
    model : SystemModel
    rho0 : array_like, shape (D, D) or (B, D, D)
        Initial density matrix (or a batch of them) in the interaction picture.
    t : float
        Final time in us.
    step_scale : float, optional
        Multiplier on every sampling step, used for halving checks.

    Returns
    -------
    numpy.ndarray
        ``rho(t)`` obtained by exponentiating the Liouvillian on each
        piecewise-constant piece.
    """
    if t < t0:
        raise ModelError("evolve_master needs t >= t0")
    model.check_time(t0)
    model.check_time(t)
    rho = _validate_rho(rho0, model.dim) if validate else np.asarray(rho0, dtype=complex)
    sec = find_sectors(model)
    v = _master_pairs(model, sec, sec.to_pairs(rho), t0, t, step_scale)
    return sec.from_pairs(v)


def master_superoperator(model: SystemModel, t: float, step_scale: float = 1.0) -> np.ndarray:
    """Pair-form propagator of the full Lindblad evolution over ``[0, t]``."""
    sec = find_sectors(model)
    eye = np.broadcast_to(np.eye(sec.M, dtype=complex), (sec.S, sec.S, sec.M, sec.M))
    # propagate every basis vector at once: columns of the identity
    v = np.moveaxis(eye, -1, 0).copy()  # (M, S, S, M)
    v = _master_pairs(model, sec, v, 0.0, t, step_scale)
    return np.moveaxis(v, 0, -1)


# ----------------------------------------------------------------------------
# Dyson terms


@dataclass
class DysonTerm:
    """Order-``p`` Dyson superoperator ``G_p(t, 0)``.

    Attributes
    ----------
    order : int
    quadrature_points : int
        Gauss-Legendre nodes per nested integral on a full-size piece.
    converged : bool
        Whether doubling the nodes changed the term by at most 1e-7.
    convergence_error : float
        Max-entry change observed in the doubling check (``nan`` if skipped).
    """

    order: int
    quadrature_points: int
    converged: bool
    convergence_error: float
    pairs: np.ndarray = field(repr=False)
    sectors: Sectors = field(repr=False)

    @property
    def superoperator(self) -> np.ndarray:
        """Dense ``(D^2, D^2)`` column-stacked matrix."""
        return self.sectors.to_full(self.pairs)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        sec = self.sectors
        return sec.from_pairs(sec.apply(self.pairs, sec.to_pairs(np.asarray(rho, dtype=complex))))


def _nodes_for(x: float, cap: int) -> int:
    """Fewest Gauss-Legendre nodes resolving a generator of size ``x``."""
    n = 2
    while n < cap:
        if (2 * n) * math.log(max(x, 1e-300)) - math.lgamma(2 * n + 1) < math.log(1e-17):
            break
        n += 1
    return n


class _NoJumpCache:
    """No-jump pair propagators of consecutive pieces sharing one ``H_eff``.

    Uniformly sampled pieces often differ only in their jump operators, so
    the nested quadrature requests identical exponentials piece after piece.
    """

    def __init__(self, budget: int = CHUNK_BYTES * 8):
        self.key = None
        self.store: dict[bytes, np.ndarray] = {}
        self.budget = budget
        self.used = 0

    def bind(self, heff: np.ndarray):
        key = heff.tobytes()
        if key != self.key:
            self.key, self.store, self.used = key, {}, 0

    def get(self, taus):
        return self.store.get(taus.tobytes())

    def put(self, taus, value):
        if self.used + value.nbytes <= self.budget:
            self.store[taus.tobytes()] = value
            self.used += value.nbytes


class _PieceIntegrator:
    """Nested quadrature of the Dyson terms over one constant piece."""

    def __init__(self, sec: Sectors, heff: np.ndarray, jump_sup: np.ndarray, n: int,
                 cache: "_NoJumpCache | None" = None):
        self.sec = sec
        self.heff = heff
        self.jump_sup = jump_sup
        self.x, self.w = _gauss_legendre(n)
        self.cache = cache

    def nojump(self, taus: np.ndarray) -> np.ndarray:
        taus = np.asarray(taus, dtype=float)
        if self.cache is not None:
            hit = self.cache.get(taus)
            if hit is not None:
                return hit
        wb = matrix_exponential(-1j * self.heff[None] * taus[:, None, None, None])
        out = self.sec.pair_kron(wb, wb)
        if self.cache is not None:
            self.cache.put(taus, out)
        return out

    def terms(self, tau: float, order: int) -> list[np.ndarray]:
        """``[Psi_0(tau), ..., Psi_order(tau)]`` for the piece generator."""
        if order == 0:
            return [self.nojump([tau])[0]]
        x, w = self.x, self.w
        outer = self.nojump(np.concatenate([[tau], tau * (1 - x)]))
        psi0, left = outer[0], outer[1:]
        if order == 1:
            inner = [[blk] for blk in self.nojump(tau * x)]
        else:
            inner = [self.terms(tau * xk, order - 1) for xk in x]
        out = [psi0]
        for q in range(1, order + 1):
            right = np.stack([inner[k][q - 1] for k in range(len(x))])
            prod = left @ (self.jump_sup[None] @ right)
            out.append(tau * np.tensordot(w, prod, axes=1))
        return out


def _dyson_pairs(model: SystemModel, P: int, t: float, quad_points: int,
                 step_scale: float) -> list[np.ndarray]:
    sec = find_sectors(model)
    eye = np.broadcast_to(np.eye(sec.M, dtype=complex), (sec.S, sec.S, sec.M, sec.M)).copy()
    zero = np.zeros_like(eye)
    phi = [eye] + [zero.copy() for _ in range(P)]
    jump_cache = {}
    nojump_cache = _NoJumpCache()
    for piece in model.pieces(0.0, t, step_scale):
        heff = sec.blocks(piece.effective_hamiltonian())
        nojump_cache.bind(heff)
        if piece.jump_key not in jump_cache:
            js = sec.jump_super(_piece_jump_blocks(sec, piece))
            jump_cache[piece.jump_key] = np.zeros_like(eye) if js is None else js
        jsup = jump_cache[piece.jump_key]
        size = (2 * np.max(np.abs(np.linalg.eigvals(heff))) * piece.duration
                + np.max(np.abs(jsup)) * sec.M * piece.duration)
        n = _nodes_for(size, quad_points)
        psi = _PieceIntegrator(sec, heff, jsup, n, nojump_cache).terms(piece.duration, P)
        phi = [sum(psi[q] @ phi[p - q] for q in range(p + 1)) for p in range(P + 1)]
    return phi


def default_quad_points(P: int) -> int:
    return 24 if P <= 2 else 12


def dyson_terms(model: SystemModel, P: int, t: float, quad_points: int | None = None,
                check: bool = True, step_scale: float = 1.0,
                strict: bool = False) -> list[DysonTerm]:
    """All Dyson terms ``G_0 .. G_P`` over ``[0, t]``.

    Parameters
    ----------
    P : int
        Highest jump count.
    quad_points : int, optional
        Nodes per nested integral; 24 for ``P <= 2`` and 12 for ``P = 3`` by
        default. Short sampled pieces use fewer nodes when their generator
        is already resolved.
    check : bool
        Recompute with doubled nodes and record the change.
    strict : bool
        Raise :class:`QuadratureError` if the doubling check fails.
    """
    if P < 0:
        raise ModelError("Dyson order must be non-negative")
    q = default_quad_points(P) if quad_points is None else int(quad_points)
    if q < 2:
        raise ModelError("quad_points must be at least 2")
    model.check_time(t)
    base = _dyson_pairs(model, P, t, q, step_scale)
    errs = [math.nan] * (P + 1)
    if check:
        fine = _dyson_pairs(model, P, t, 2 * q, step_scale)
        errs = [float(np.max(np.abs(a - b))) for a, b in zip(base, fine)]
    sec = find_sectors(model)
    out = []
    for p in range(P + 1):
        ok = (not check) or errs[p] <= DOUBLING_TOL
        if strict and not ok:
            raise QuadratureError(f"Dyson term {p} changed by {errs[p]:.2e} under node doubling")
        out.append(DysonTerm(p, q, ok, errs[p], base[p], sec))
    return out


def dyson_term(model: SystemModel, p: int, t: float, quad_points: int | None = None,
               check: bool = True, step_scale: float = 1.0) -> DysonTerm:
    """Single Dyson term ``G_p(t, 0)``; see :func:`dyson_terms`."""
    if quad_points is None:
        quad_points = default_quad_points(p)
    return dyson_terms(model, p, t, quad_points, check, step_scale)[p]


# ----------------------------------------------------------------------------
# explicit trajectories


def _jump_matrix(model: SystemModel, spec) -> np.ndarray:
    if isinstance(spec, (int, np.integer)):
        return model.jumps[int(spec)].operator
    if isinstance(spec, JumpOperator):
        return spec.operator
    return as_matrix(spec, "inserted operator", square=True)


def path_operator(model: SystemModel, i, jumps, r, t: float,
                  step_scale: float = 1.0) -> np.ndarray:
    """Central-system operator of one explicit trajectory.

    Returns ``<r| W(t, t_p) K_p ... K_1 W(t_1, 0) |i>`` with each ``K_k``
    rotated into the interaction picture at its exact jump time.

    Parameters
    ----------
    i, r : int or str
        Initial and final ancilla levels.
    jumps : sequence of (K, t_k)
        ``K`` is a jump index into ``model.jumps``, a :class:`JumpOperator`
        or a joint-space matrix (for one-off insertions). Times must be
        non-decreasing and within ``[0, t]``.
    """
    i = model.level_index(i)
    r = model.level_index(r)
    times = [float(tk) for _, tk in jumps]
    if any(b < a for a, b in zip(times[:-1], times[1:])):
        raise ModelError("jump times must be non-decreasing")
    if times and (times[0] < 0 or times[-1] > t):
        raise ModelError("jump times must lie within [0, t]")
    prev = 0.0
    op = np.eye(model.dim, dtype=complex)
    for spec, tk in jumps:
        op = no_jump_propagator(model, prev, float(tk), step_scale) @ op
        op = model.jump_interaction(_jump_matrix(model, spec), float(tk)) @ op
        prev = float(tk)
    op = no_jump_propagator(model, prev, t, step_scale) @ op
    n = model.N
    return op[r * n:(r + 1) * n, i * n:(i + 1) * n]


# ----------------------------------------------------------------------------
# conditional channels


def choi_from_superoperator(full: np.ndarray, dim: int, i: int, r: int, n: int) -> np.ndarray:
    """Choi matrix of ``X -> <r| Phi(|i><i| x X) |r>`` from a dense superoperator.

    Convention: ``J = sum_ab |a><b| x Phi(|a><b|)``.
    """
    rows = r * n + np.arange(n)
    cols = i * n + np.arange(n)
    # vec index of (x, y) is y*dim + x
    out_idx = rows[None, :] * dim + rows[:, None]   # [c, e] -> vec(|c><e|)
    in_idx = cols[None, :] * dim + cols[:, None]    # [a, b] -> vec(|a><b|)
    block = full[out_idx.reshape(-1)[:, None], in_idx.reshape(-1)[None, :]]
    # block[(c, e), (a, b)] with row-major (c, e) and (a, b)
    blk = block.reshape(n, n, n, n)                 # c, e, a, b
    return blk.transpose(2, 0, 3, 1).reshape(n * n, n * n)


@dataclass
class ConditionalChannel:
    """Outcome-conditioned central channel for ancilla ``i -> r``.

    Attributes
    ----------
    i, r : int
    P : int
        Highest Dyson order included (``None`` for the full Lindblad route).
    choi : numpy.ndarray, shape (N^2, N^2)
        Unnormalized Choi matrix ``sum_ab |a><b| x Phi(|a><b|)``.
    success_weight : float
        Trace of the output for the maximally mixed input, ``tr(J) / N``.
    converged : bool
    """

    i: int
    r: int
    P: int | None
    choi: np.ndarray
    success_weight: float
    converged: bool = True

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.choi + self.choi.conj().T))[::-1]

    def unitarity(self):
        """See :func:`choi_unitarity`."""
        return choi_unitarity(self.choi)

    def restrict(self, basis: np.ndarray) -> np.ndarray:
        """Choi matrix of the channel restricted to ``span(basis)``.

        ``basis`` is (N, k) with orthonormal columns; the output is the
        ``k^2 x k^2`` Choi matrix in that basis.
        """
        n = int(round(math.sqrt(self.choi.shape[0])))
        v = np.asarray(basis, dtype=complex)
        k = v.shape[1]
        j4 = self.choi.reshape(n, n, n, n)             # a, c, b, e
        j4 = np.einsum("ax,acbe,by->xcye", v, j4, v.conj())
        j4 = np.einsum("cu,xcye,ev->xuyv", v.conj(), j4, v)
        return j4.reshape(k * k, k * k)


def choi_unitarity(choi: np.ndarray):
    """Rank-one and unitary-Kraus test of a Choi matrix.

    Returns
    -------
    ratio : float
        Second-largest over largest eigenvalue (0 for a zero channel).
    spread : float
        Relative singular-value spread of the dominant Kraus operator.
    kraus : numpy.ndarray
        Dominant Kraus operator scaled by the square root of its eigenvalue.
    """
    herm = 0.5 * (choi + choi.conj().T)
    w, v = np.linalg.eigh(herm)
    n = int(round(math.sqrt(choi.shape[0])))
    top = w[-1]
    if top <= 0:
        return 0.0, 0.0, np.zeros((n, n), dtype=complex)
    ratio = float(max(w[-2], 0.0) / top) if len(w) > 1 else 0.0
    # J[(a, c), (b, e)] = M[c, a] conj(M[e, b])
    kraus = np.sqrt(top) * v[:, -1].reshape(n, n).T
    s = np.linalg.svd(kraus, compute_uv=False)
    spread = float((s[0] - s[-1]) / s[0])
    return ratio, spread, kraus


def conditional_channel(model: SystemModel, i, r, t: float, P: int | None = None,
                        quad_points: int | None = None, terms: list | None = None,
                        check: bool = True) -> ConditionalChannel:
    """Central channel conditioned on ancilla ``i`` initially and ``r`` finally.

    With ``P`` given the channel sums the Dyson terms ``G_0 .. G_P``; with
    ``P=None`` the full Lindblad propagator is used.

    Parameters
    ----------
    terms : list of DysonTerm, optional
        Precomputed terms (reused across ``(i, r)`` pairs).
    """
    i = model.level_index(i)
    r = model.level_index(r)
    n = model.N
    if P is None:
        pairs = master_superoperator(model, t)
        sec = find_sectors(model)
        converged = True
    else:
        if terms is None:
            terms = dyson_terms(model, P, t, quad_points, check=check)
        sec = terms[0].sectors
        pairs = sum(term.pairs for term in terms[:P + 1])
        converged = all(term.converged for term in terms[:P + 1])
    choi = choi_from_superoperator(sec.to_full(pairs), model.dim, i, r, n)
    weight = float(np.trace(choi).real / n)
    return ConditionalChannel(i, r, P, choi, weight, converged)
