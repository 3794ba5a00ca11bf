"""Composite ancilla x central-system model.

A :class:`SystemModel` holds a ``d``-level ancilla coupled to an
``N``-dimensional central system. The joint space is ordered ancilla-major,
so the operator ``|m><n| x V`` occupies rows ``m*N:(m+1)*N`` and columns
``n*N:(n+1)*N``.

Dynamics are expressed in the interaction picture of a frame Hamiltonian
``H0'(t) = sum_m |m><m| x H_m(t)`` with piecewise-constant ``H_m``. The
control schedule is stored directly in that interaction picture. Jump
operators are stored in the Schrodinger picture and rotated on demand.

All frequencies are angular (rad/us) and all times are in microseconds.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.linalg

from .numerics import (
    DimensionError,
    as_matrix,
    dagger,
    is_hermitian,
    is_unitary,
    kronecker,
)

__all__ = [
    "ModelError",
    "SpecError",
    "destroy",
    "number",
    "ket",
    "level_projector",
    "FrameSegment",
    "ControlSegment",
    "SampledControl",
    "JumpOperator",
    "PiPair",
    "PiControlSpec",
    "SystemModel",
    "Piece",
    "build_model",
    "validate_jump",
    "frame_rotation",
    "pi_control_hamiltonian",
    "build_pi_control",
    "MAX_PHASE_STEP",
]

#: largest frame phase (rad) accumulated across one sampling step
MAX_PHASE_STEP = 0.05

HERMITIAN_TOL = 1e-12
BLOCK_TOL = 1e-12
JUMP_TOL = 1e-10
DEFAULT_LEVEL_NAMES = ("g", "e", "f", "h")


class ModelError(ValueError):
    """Raised when a model violates one of its structural invariants."""


class SpecError(ValueError):
    """Raised for an invalid control specification."""


# ----------------------------------------------------------------------------
# small operator helpers


def destroy(n: int) -> np.ndarray:
    """Truncated bosonic lowering operator on ``n`` Fock levels."""
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def number(n: int) -> np.ndarray:
    return np.diag(np.arange(n, dtype=float)).astype(complex)


def ket(dim: int, k: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[k] = 1.0
    return v


def level_projector(d: int, m: int, n: int | None = None) -> np.ndarray:
    """Ancilla operator ``|m><n|`` (``n`` defaults to ``m``)."""
    out = np.zeros((d, d), dtype=complex)
    out[m, m if n is None else n] = 1.0
    return out


def _block(op: np.ndarray, d: int, n_c: int, m: int, n: int) -> np.ndarray:
    return op[m * n_c:(m + 1) * n_c, n * n_c:(n + 1) * n_c]


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    return scipy.linalg.block_diag(*blocks).astype(complex)


# ----------------------------------------------------------------------------
# schedule and frame segments


@dataclass(frozen=True, eq=False)
class FrameSegment:
    """Constant per-level frame Hamiltonians ``H_m`` on ``[start, end)``."""

    start: float
    end: float
    blocks: np.ndarray  # (d, N, N)

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=complex)
        object.__setattr__(self, "blocks", blocks)
        w, v = np.linalg.eigh(blocks)
        object.__setattr__(self, "_eig", (w, v))

    def propagator_blocks(self, tau: float) -> np.ndarray:
        """``exp(-i H_m tau)`` for every level, shape (d, N, N)."""
        w, v = self._eig
        return np.einsum("mij,mj,mkj->mik", v, np.exp(-1j * w * tau), v.conj())

    @property
    def hamiltonian(self) -> np.ndarray:
        return _block_diag(self.blocks)


@dataclass(frozen=True, eq=False)
class ControlSegment:
    """Interaction-picture control held constant on ``[start, end)``."""

    start: float
    end: float
    hamiltonian: np.ndarray

    def breakpoints(self, ta, tb, step_scale=1.0):
        return ()

    def value(self, t, step_scale=1.0) -> np.ndarray:
        return self.hamiltonian


@dataclass(frozen=True, eq=False)
class SampledControl:
    """Continuous interaction-picture drive sampled piecewise-constant.

    ``func(t)`` is evaluated at the midpoints of ``ceil(T/step)`` equal
    sub-steps of the segment, where ``step_scale`` shrinks the nominal step
    for convergence checks.
    """

    start: float
    end: float
    func: Callable[[float], np.ndarray]
    step: float

    def grid_step(self, step_scale=1.0) -> float:
        span = self.end - self.start
        n = max(1, int(math.ceil(span / (self.step * step_scale) - 1e-9)))
        return span / n

    def breakpoints(self, ta, tb, step_scale=1.0):
        h = self.grid_step(step_scale)
        k0 = max(1, int(math.floor((ta - self.start) / h)))
        k1 = int(math.ceil((tb - self.start) / h))
        return [self.start + k * h for k in range(k0, k1 + 1)]

    def value(self, t, step_scale=1.0) -> np.ndarray:
        h = self.grid_step(step_scale)
        span = self.end - self.start
        k = min(int((t - self.start) / h), int(round(span / h)) - 1)
        return np.asarray(self.func(self.start + (k + 0.5) * h), dtype=complex)

    @property
    def n_steps(self) -> int:
        return int(round((self.end - self.start) / self.grid_step()))


# ----------------------------------------------------------------------------
# jumps


@dataclass(frozen=True, eq=False)
class JumpOperator:
    """Validated Lindblad operator on the joint space.

    Attributes
    ----------
    kind : {"dephasing", "relaxation", "general"}
    operator : numpy.ndarray
        Full joint-space operator ``K``.
    rate : float
        Rate in 1/us multiplying the dissipator of ``K``.
    weights : numpy.ndarray or None
        Dephasing weights, one per ancilla level.
    levels : tuple of int or None
        ``(m, n)`` for a relaxation ``|m><n| x I``.
    ancilla_op : numpy.ndarray or None
        ``k`` such that ``K = k x I`` when the central action is trivial.
    unitary : numpy.ndarray or None
        Polar unitary ``S`` with ``k = S sqrt(k^dagger k)``.
    lambdas : numpy.ndarray or None
        Diagonal of ``k^dagger k``.
    pi_compatible : bool
        Whether ``K^dagger K`` is ancilla-diagonal times identity.
    label : str
    """

    kind: str
    operator: np.ndarray
    rate: float
    weights: np.ndarray | None = None
    levels: tuple | None = None
    ancilla_op: np.ndarray | None = None
    unitary: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    pi_compatible: bool = True
    label: str = ""

    @property
    def transitions(self) -> list[tuple[int, int]]:
        """Off-diagonal ancilla transitions ``(source, target)`` of ``K``."""
        if self.ancilla_op is None:
            return []
        k = self.ancilla_op
        d = k.shape[0]
        return [(n, m) for m in range(d) for n in range(d)
                if m != n and abs(k[m, n]) > JUMP_TOL]


def _ancilla_factor(op: np.ndarray, d: int, n_c: int):
    """Return ``k`` if ``op = k x I_N`` within tolerance, else ``None``."""
    k = np.zeros((d, d), dtype=complex)
    eye = np.eye(n_c)
    for m in range(d):
        for n in range(d):
            blk = _block(op, d, n_c, m, n)
            c = np.trace(blk) / n_c
            if np.max(np.abs(blk - c * eye), initial=0.0) > JUMP_TOL:
                return None
            k[m, n] = c
    return k


def validate_jump(model_or_dims, operator, rate: float, label: str = "") -> JumpOperator:
    """Classify a jump operator and extract its PI-relevant structure.

    Parameters
    ----------
    model_or_dims : SystemModel or tuple of int
        Model (or ``(d, N)``) fixing the joint-space layout.
    operator : array_like, shape (d*N, d*N)
    rate : float
        Non-negative rate in 1/us.

    Returns
    -------
    JumpOperator
        Dephasing if ancilla-diagonal times identity, relaxation if a single
        ``|m><n| x I`` block, general otherwise. Operators whose
        ``K^dagger K`` is not ancilla-diagonal times identity are kept but
        flagged ``pi_compatible=False``.
    """
    if isinstance(model_or_dims, SystemModel):
        d, n_c = model_or_dims.d, model_or_dims.N
    else:
        d, n_c = model_or_dims
    op = as_matrix(operator, "jump operator", square=True)
    if op.shape[0] != d * n_c:
        raise DimensionError(f"jump operator must be {d * n_c}-dimensional")
    rate = float(rate)
    if not np.isfinite(rate) or rate < 0:
        raise ModelError(f"jump rate must be finite and non-negative, got {rate}")

    k = _ancilla_factor(op, d, n_c)
    if k is not None:
        off = k - np.diag(np.diag(k))
        if np.max(np.abs(off), initial=0.0) <= JUMP_TOL:
            return JumpOperator("dephasing", op, rate, weights=np.diag(k).copy(),
                                ancilla_op=k, unitary=np.eye(d, dtype=complex),
                                lambdas=np.abs(np.diag(k)) ** 2,
                                label=label or "dephasing")
        nz = np.argwhere(np.abs(k) > JUMP_TOL)
        if len(nz) == 1 and nz[0][0] != nz[0][1]:
            m, n = (int(x) for x in nz[0])
            s, _ = scipy.linalg.polar(k)
            return JumpOperator("relaxation", op, rate, levels=(m, n), ancilla_op=k,
                                unitary=s, lambdas=np.real(np.diag(k.conj().T @ k)),
                                label=label or f"relax {m}<-{n}")
        kk = k.conj().T @ k
        diag_ok = np.max(np.abs(kk - np.diag(np.diag(kk))), initial=0.0) <= JUMP_TOL
        s, _ = scipy.linalg.polar(k)
        return JumpOperator("general", op, rate, ancilla_op=k, unitary=s,
                            lambdas=np.real(np.diag(kk)), pi_compatible=diag_ok,
                            label=label or "general")

    kk = op.conj().T @ op
    ok = _ancilla_factor(kk, d, n_c)
    diag_ok = ok is not None and np.max(np.abs(ok - np.diag(np.diag(ok))), initial=0.0) <= JUMP_TOL
    return JumpOperator("general", op, rate, pi_compatible=bool(diag_ok),
                        lambdas=np.real(np.diag(ok)) if diag_ok else None,
                        label=label or "general")


# ----------------------------------------------------------------------------
# PI control specification


@dataclass(frozen=True, eq=False)
class PiPair:
    """One driven ancilla pair ``(m, n)`` with central unitary ``U``."""

    m: int
    n: int
    unitary: np.ndarray
    omega: float
    delta_m: float = 0.0
    delta_n: float = 0.0


@dataclass(frozen=True, eq=False)
class PiControlSpec:
    pairs: tuple

    def __post_init__(self):
        seen = set()
        for p in self.pairs:
            if p.m == p.n:
                raise SpecError(f"pair ({p.m}, {p.n}) must join distinct levels")
            if p.m in seen or p.n in seen:
                raise SpecError(f"overlapping level pairs at ({p.m}, {p.n})")
            seen.update((p.m, p.n))
            if not is_unitary(p.unitary, 1e-10):
                raise SpecError(f"pair ({p.m}, {p.n}) carries a non-unitary U")


def pi_control_hamiltonian(spec: PiControlSpec, d: int, n_c: int) -> np.ndarray:
    """Interaction-picture PI control for a set of disjoint driven pairs.

    ``sum_mu Omega_mu (|m><n| x U_mu + h.c.) + delta_m |m><m| + delta_n |n><n|``
    """
    h = np.zeros((d * n_c, d * n_c), dtype=complex)
    eye = np.eye(n_c)
    for p in spec.pairs:
        u = np.asarray(p.unitary, dtype=complex)
        if u.shape != (n_c, n_c):
            raise SpecError(f"pair unitary must be {n_c}x{n_c}")
        drive = p.omega * kronecker(level_projector(d, p.m, p.n), u)
        h += drive + drive.conj().T
        h += p.delta_m * kronecker(level_projector(d, p.m), eye)
        h += p.delta_n * kronecker(level_projector(d, p.n), eye)
    return h


# ----------------------------------------------------------------------------
# model


@dataclass
class Piece:
    """Constant-generator interval used by the evolution engine.

    ``hamiltonian`` is the Hermitian interaction-picture Hamiltonian and
    ``decay`` the anti-Hermitian part ``sum rate K^dagger K``. The
    interaction-picture jump operators (``jumps``, paired with their rates)
    are built on first access. ``jump_key`` is equal for consecutive pieces
    whose dissipator is identical, so callers can reuse derived
    superoperators.
    """

    t0: float
    t1: float
    hamiltonian: np.ndarray
    decay: np.ndarray | None
    jump_key: tuple
    _jump_fn: Callable = field(repr=False, default=None)
    _jumps: list | None = field(repr=False, default=None)

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    @property
    def jumps(self) -> list:
        if self._jumps is None:
            self._jumps = self._jump_fn() if self._jump_fn is not None else []
        return self._jumps

    def effective_hamiltonian(self) -> np.ndarray:
        h = self.hamiltonian.astype(complex)
        if self.decay is not None:
            h = h - 0.5j * self.decay
        return h


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Validated joint ancilla x central-system model.

    Attributes
    ----------
    d, N : int
        Ancilla and central dimensions.
    static_hamiltonian : numpy.ndarray
        ``H0`` on the ``d*N`` space, ancilla-block-diagonal.
    frame : tuple of FrameSegment
        Contiguous frame segments starting at 0; the last may be unbounded.
    controls : tuple
        Contiguous interaction-picture control segments starting at 0.
    jumps : tuple of JumpOperator
    ancilla_energies : numpy.ndarray
        Bare ancilla energies, kept for reporting.
    levels : tuple of str
        Display names of the ancilla levels.
    max_phase_step : float
        Frame phase budget per sampling step for time-dependent terms.
    """

    d: int
    N: int
    static_hamiltonian: np.ndarray
    frame: tuple
    controls: tuple = ()
    jumps: tuple = ()
    ancilla_energies: np.ndarray | None = None
    levels: tuple = ()
    max_phase_step: float = MAX_PHASE_STEP
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        d, n_c = self.d, self.N
        if d < 1 or n_c < 1:
            raise ModelError("dimensions must be positive")
        dim = d * n_c
        h0 = as_matrix(self.static_hamiltonian, "H0", square=True)
        if h0.shape[0] != dim:
            raise ModelError(f"H0 must be {dim}x{dim}")
        if not is_hermitian(h0, HERMITIAN_TOL):
            raise ModelError("H0 is not Hermitian")
        for m in range(d):
            for n in range(d):
                if m != n and np.linalg.norm(_block(h0, d, n_c, m, n)) > BLOCK_TOL:
                    raise ModelError(f"H0 couples ancilla levels {m} and {n}")
        object.__setattr__(self, "static_hamiltonian", h0)
        if not self.levels:
            names = DEFAULT_LEVEL_NAMES if d <= len(DEFAULT_LEVEL_NAMES) else ()
            object.__setattr__(self, "levels", tuple(names[:d]) if names else
                               tuple(str(i) for i in range(d)))
        if len(self.levels) != d:
            raise ModelError("one level name per ancilla level is required")
        if self.ancilla_energies is None:
            object.__setattr__(self, "ancilla_energies", np.zeros(d))
        self._check_frame()
        self._check_controls()
        for j in self.jumps:
            if not isinstance(j, JumpOperator):
                raise ModelError("jumps must be JumpOperator instances")
            if j.operator.shape != (dim, dim):
                raise ModelError("jump operator has the wrong dimension")

    # -- validation ---------------------------------------------------------

    def _check_frame(self):
        if not self.frame:
            raise ModelError("frame needs at least one segment")
        t = 0.0
        for seg in self.frame:
            if abs(seg.start - t) > 1e-12 or not seg.end > seg.start:
                raise ModelError("frame segments must be contiguous from t=0")
            if seg.blocks.shape != (self.d, self.N, self.N):
                raise ModelError("frame blocks must have shape (d, N, N)")
            for b in seg.blocks:
                if not is_hermitian(b, HERMITIAN_TOL):
                    raise ModelError("frame Hamiltonians must be Hermitian")
            t = seg.end

    def _check_controls(self):
        t = 0.0
        dim = self.dim
        for seg in self.controls:
            if abs(seg.start - t) > 1e-12 or not seg.end > seg.start:
                raise ModelError("control segments must be contiguous and non-overlapping from t=0")
            probe = seg.value(0.5 * (seg.start + seg.end))
            if probe.shape != (dim, dim):
                raise ModelError(f"control Hamiltonian must be {dim}x{dim}")
            if not is_hermitian(probe, HERMITIAN_TOL):
                raise ModelError("control segment is not Hermitian")
            t = seg.end
        if self.controls and self.frame[-1].end < t - 1e-12:
            raise ModelError("frame does not cover the control schedule")

    # -- basic properties -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.d * self.N

    @property
    def duration(self) -> float | None:
        return self.controls[-1].end if self.controls else None

    def level_index(self, level) -> int:
        if isinstance(level, str):
            if level not in self.levels:
                raise ModelError(f"unknown ancilla level {level!r}")
            return self.levels.index(level)
        level = int(level)
        if not 0 <= level < self.d:
            raise ModelError(f"ancilla index {level} out of range")
        return level

    def check_time(self, t: float):
        if t < -1e-12:
            raise ModelError(f"time {t} is negative")
        end = self.duration
        if end is not None and t > end * (1 + 1e-12) + 1e-12:
            raise ModelError(f"time {t} lies beyond the control schedule end {end}")
        if t > self.frame[-1].end + 1e-12:
            raise ModelError(f"time {t} lies outside the frame coverage")

    def with_jumps(self, jumps) -> "SystemModel":
        return SystemModel(self.d, self.N, self.static_hamiltonian, self.frame,
                           self.controls, tuple(jumps), self.ancilla_energies,
                           self.levels, self.max_phase_step)

    def with_controls(self, controls) -> "SystemModel":
        return SystemModel(self.d, self.N, self.static_hamiltonian, self.frame,
                           tuple(controls), self.jumps, self.ancilla_energies,
                           self.levels, self.max_phase_step)

    # -- frame ----------------------------------------------------------------

    def _frame_index(self, t: float) -> int:
        for i, seg in enumerate(self.frame):
            if t < seg.end:
                return i
        return len(self.frame) - 1

    def frame_blocks(self, t: float) -> np.ndarray:
        return self.frame[self._frame_index(t)].blocks

    def frame_hamiltonian(self, t: float) -> np.ndarray:
        return self.frame[self._frame_index(t)].hamiltonian

    def frame_rotation_blocks(self, t: float) -> np.ndarray:
        """Per-level ``R_m(t)`` as an array of shape (d, N, N)."""
        if t < -1e-12 or t > self.frame[-1].end + 1e-12:
            raise ModelError(f"time {t} outside frame coverage")
        out = np.broadcast_to(np.eye(self.N, dtype=complex), (self.d, self.N, self.N)).copy()
        for seg in self.frame:
            if t <= seg.start:
                break
            tau = min(t, seg.end) - seg.start
            out = seg.propagator_blocks(tau) @ out
        return out

    def frame_rotation(self, t: float) -> np.ndarray:
        return _block_diag(self.frame_rotation_blocks(t))

    # -- sampled structure ----------------------------------------------------

    def _segment_info(self, idx: int) -> dict:
        key = ("seginfo", idx)
        if key in self._cache:
            return self._cache[key]
        seg = self.frame[idx]
        hf = seg.hamiltonian
        scale = 1.0 + np.max(np.abs(hf), initial=0.0)
        h0 = self.static_hamiltonian
        residual_const = np.max(np.abs(h0 @ hf - hf @ h0), initial=0.0) <= 1e-10 * scale * (
            1 + np.max(np.abs(h0), initial=0.0))
        covariant = []
        for j in self.jumps:
            k = j.operator
            c_op = hf @ k - k @ hf
            nk = np.vdot(k, k).real
            c = np.vdot(k, c_op) / nk if nk > 0 else 0.0
            res = np.max(np.abs(c_op - c * k), initial=0.0)
            covariant.append(bool(res <= 1e-10 * scale * max(1.0, np.max(np.abs(k)))))
        kk = sum((j.rate * (j.operator.conj().T @ j.operator) for j in self.jumps if j.rate > 0),
                 np.zeros_like(hf))
        decay_const = bool(np.max(np.abs(hf @ kk - kk @ hf), initial=0.0)
                           <= 1e-10 * scale * max(1.0, np.max(np.abs(kk), initial=0.0)))
        w = np.linalg.eigvalsh(hf)
        spread = float(w[-1] - w[0]) if w.size else 0.0
        sampled = (not residual_const) or not all(covariant)
        info = {"sampled": sampled and spread > 0, "spread": spread,
                "residual_const": residual_const, "covariant": covariant,
                "decay_const": decay_const}
        self._cache[key] = info
        return info

    def sampling_step(self, idx: int, step_scale: float = 1.0) -> float | None:
        info = self._segment_info(idx)
        if not info["sampled"]:
            return None
        return self.max_phase_step * step_scale / info["spread"]

    def is_time_dependent(self) -> bool:
        """True when some generator piece needs sub-step sampling."""
        if any(isinstance(c, SampledControl) for c in self.controls):
            return True
        return any(self._segment_info(i)["sampled"] for i in range(len(self.frame)))

    def _sample_time(self, idx: int, t: float, step_scale: float) -> tuple[float, int]:
        h = self.sampling_step(idx, step_scale)
        if h is None:
            return t, -1
        seg = self.frame[idx]
        k = int(math.floor((t - seg.start) / h))
        return seg.start + (k + 0.5) * h, k

    def control_hamiltonian(self, t: float, step_scale: float = 1.0) -> np.ndarray:
        """Interaction-picture control at ``t`` (zero outside the schedule)."""
        for seg in self.controls:
            if t < seg.end:
                return seg.value(t, step_scale)
        if self.controls and t <= self.controls[-1].end + 1e-12:
            seg = self.controls[-1]
            return seg.value(min(t, seg.end - 1e-15 * max(1.0, seg.end)), step_scale)
        return np.zeros((self.dim, self.dim), dtype=complex)

    def residual_hamiltonian(self, t: float) -> np.ndarray:
        """``R(t)^dagger H0 R(t) - H0'(t)``, zero when the frame is ``H0``."""
        r = self.frame_rotation(t)
        return r.conj().T @ self.static_hamiltonian @ r - self.frame_hamiltonian(t)

    def interaction_hamiltonian(self, t: float, step_scale: float = 1.0) -> np.ndarray:
        """Total Hermitian interaction-picture Hamiltonian at time ``t``."""
        return self.control_hamiltonian(t, step_scale) + self.residual_hamiltonian(t)

    def jump_interaction(self, j: int | JumpOperator, t: float) -> np.ndarray:
        """Interaction-picture jump operator ``R(t)^dagger K R(t)``."""
        k = self.jumps[j].operator if isinstance(j, (int, np.integer)) else (
            j.operator if isinstance(j, JumpOperator) else as_matrix(j, square=True))
        r = self.frame_rotation(t)
        return r.conj().T @ k @ r

    def _breakpoints(self, ta: float, tb: float, step_scale: float) -> list[float]:
        pts = []
        for seg in self.controls:
            for b in (seg.start, seg.end):
                if ta < b < tb:
                    pts.append(b)
            if seg.end > ta and seg.start < tb:
                pts.extend(b for b in seg.breakpoints(max(ta, seg.start), min(tb, seg.end),
                                                      step_scale) if ta < b < tb)
        for i, seg in enumerate(self.frame):
            for b in (seg.start, seg.end):
                if ta < b < tb:
                    pts.append(b)
            h = self.sampling_step(i, step_scale)
            if h is not None and seg.end > ta and seg.start < tb:
                lo, hi = max(ta, seg.start), min(tb, seg.end)
                k0 = int(math.floor((lo - seg.start) / h))
                k1 = int(math.ceil((hi - seg.start) / h))
                pts.extend(seg.start + k * h for k in range(k0, k1 + 1)
                           if ta < seg.start + k * h < tb)
        return sorted(set(pts))

    def pieces(self, ta: float, tb: float, step_scale: float = 1.0) -> Iterator[Piece]:
        """Constant-generator pieces covering ``[ta, tb]`` in time order.

        Time-dependent terms are sampled on fixed grids anchored at segment
        starts, so the pieces over a sub-interval are clipped copies of the
        pieces over the whole schedule and propagators compose exactly.
        """
        if tb < ta:
            raise ModelError("pieces needs ta <= tb")
        if tb == ta:
            return
        edges = [ta] + self._breakpoints(ta, tb, step_scale) + [tb]
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a <= 0:
                continue
            mid = 0.5 * (a + b)
            idx = self._frame_index(mid)
            info = self._segment_info(idx)
            ts, cell = self._sample_time(idx, mid, step_scale)
            h = self.control_hamiltonian(mid, step_scale)
            if info["residual_const"]:
                resid, fixed = self._segment_constants(idx)
                if resid is not None:
                    h = h + resid
            else:
                fixed = self._segment_constants(idx)[1]
                h = h + self.residual_hamiltonian(ts)
            decay = self._segment_decay(idx)
            if not info["decay_const"]:
                decay = self._decay_at(ts)
            yield Piece(a, b, h, decay, (idx, cell),
                        functools.partial(self._piece_jumps, idx, ts))

    def _piece_jumps(self, idx: int, ts: float) -> list:
        info = self._segment_info(idx)
        fixed = self._segment_constants(idx)[1]
        out = []
        for j, cov, k_fixed in zip(self.jumps, info["covariant"], fixed):
            if j.rate > 0:
                # covariant jumps only pick up a phase inside the segment
                out.append((j.rate, k_fixed if cov else self.jump_interaction(j, ts)))
        return out

    def _decay_at(self, t: float) -> np.ndarray | None:
        out = None
        for j in self.jumps:
            if j.rate > 0:
                k = self.jump_interaction(j, t)
                term = j.rate * (k.conj().T @ k)
                out = term if out is None else out + term
        return out

    def _segment_decay(self, idx: int) -> np.ndarray | None:
        key = ("segdecay", idx)
        if key not in self._cache:
            self._cache[key] = self._decay_at(self.frame[idx].start)
        return self._cache[key]

    def _segment_constants(self, idx: int):
        key = ("segconst", idx)
        if key not in self._cache:
            seg = self.frame[idx]
            t_ref = seg.start
            resid = None
            if self.static_hamiltonian.any() or seg.blocks.any():
                resid = self.residual_hamiltonian(t_ref)
                if not resid.any():
                    resid = None
            fixed = [self.jump_interaction(j, t_ref) for j in self.jumps]
            self._cache[key] = (resid, fixed)
        return self._cache[key]


# ----------------------------------------------------------------------------
# builders


def _as_frame(frame, d: int, n_c: int, h0: np.ndarray) -> tuple:
    if frame is None or (isinstance(frame, str) and frame == "static"):
        blocks = np.stack([_block(h0, d, n_c, m, m) for m in range(d)])
        return (FrameSegment(0.0, math.inf, blocks),)
    if isinstance(frame, str) and frame in ("none", "lab"):
        return (FrameSegment(0.0, math.inf, np.zeros((d, n_c, n_c), dtype=complex)),)
    if isinstance(frame, FrameSegment):
        return (frame,)
    if isinstance(frame, np.ndarray) or (isinstance(frame, (list, tuple)) and frame
                                         and not isinstance(frame[0], FrameSegment)):
        blocks = np.asarray(frame, dtype=complex)
        if blocks.shape != (d, n_c, n_c):
            raise ModelError("frame blocks must have shape (d, N, N)")
        return (FrameSegment(0.0, math.inf, blocks),)
    return tuple(frame)


def _as_controls(controls, dim: int) -> tuple:
    out = []
    for c in controls or ():
        if isinstance(c, (ControlSegment, SampledControl)):
            out.append(c)
        else:
            start, end, h = c
            h = as_matrix(h, "control segment", square=True)
            if h.shape[0] != dim:
                raise ModelError(f"control Hamiltonian must be {dim}x{dim}")
            out.append(ControlSegment(float(start), float(end), h))
    return tuple(out)


def build_model(d: int, N: int, h0=None, frame=None, controls=(), jumps=(),
                ancilla_energies=None, levels=None,
                max_phase_step: float = MAX_PHASE_STEP) -> SystemModel:
    """Construct and validate a :class:`SystemModel`.

    Parameters
    ----------
    d, N : int
        Ancilla and central dimensions.
    h0 : array_like, optional
        Static Hamiltonian; zero by default.
    frame : None, "static", "none", array (d, N, N) or sequence of FrameSegment
        ``None`` and ``"static"`` use the diagonal blocks of ``h0``.
    controls : sequence
        ``ControlSegment``/``SampledControl`` instances or
        ``(start, end, H)`` tuples, expressed in the interaction picture.
    jumps : sequence
        ``JumpOperator`` instances or ``(K, rate)`` / ``(K, rate, label)``
        tuples.

    Raises
    ------
    ModelError
        On any structural violation (coupling ``H0``, non-Hermitian control,
        non-contiguous schedule, negative rate).
    """
    if int(d) < 1 or int(N) < 1:
        raise ModelError("dimensions must be positive")
    d, N = int(d), int(N)
    dim = d * N
    h0 = np.zeros((dim, dim), dtype=complex) if h0 is None else as_matrix(h0, "H0", square=True)
    if h0.shape[0] != dim:
        raise ModelError(f"H0 must be {dim}x{dim}")
    frame_t = _as_frame(frame, d, N, h0)
    jump_list = []
    for j in jumps or ():
        if isinstance(j, JumpOperator):
            jump_list.append(j)
        else:
            jump_list.append(validate_jump((d, N), *j))
    return SystemModel(d, N, h0, frame_t, _as_controls(controls, dim), tuple(jump_list),
                       None if ancilla_energies is None else np.asarray(ancilla_energies, float),
                       tuple(levels) if levels else (), max_phase_step)


def frame_rotation(model: SystemModel, t: float) -> np.ndarray:
    """Frame rotation ``R(t) = sum_m |m><m| x R_m(t)``.

    ``R_m`` is the ordered product of the segment exponentials
    ``exp(-i H_m (t_k+1 - t_k))`` up to ``t``.
    """
    return model.frame_rotation(t)


def build_pi_control(model: SystemModel, spec: PiControlSpec, t: float) -> np.ndarray:
    """Schrodinger-picture PI control ``R(t) H_c^I R(t)^dagger`` at time ``t``.

    The interaction-picture form is :func:`pi_control_hamiltonian`; this
    builder exists to cross-check scenarios against the lab-frame drive.
    """
    model.check_time(t)
    h_i = pi_control_hamiltonian(spec, model.d, model.N)
    r = model.frame_rotation(t)
    return r @ h_i @ dagger(r)
