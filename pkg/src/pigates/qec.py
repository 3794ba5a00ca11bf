"""Central-system errors on top of PI gates.

A code with a correctable error set ``{E_i}`` is first brought to a
diagonal error basis ``{F_k}`` with ``P0 F_k^dagger F_l P0 = r_k delta_kl P0``.
If every frame Hamiltonian maps each ``F_k`` to a real multiple of itself,
the interaction-picture error is ``F_k`` times an ancilla phase, and block
unitaries built as ``sum_k exp(i phi_k) F_k U0 F_k^dagger / r_k`` make a single
error during the gate equivalent to the same error after the gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dyson import path_operator
from .model import ModelError, SystemModel, destroy
from .numerics import as_matrix, kronecker, operator_distance
from .picert import factorize_no_jump
from .snap import LogicalCode

__all__ = [
    "QecError",
    "KlDiagonalization",
    "CommutatorCertificate",
    "named_error",
    "kl_diagonalize",
    "commutator_condition",
    "build_pi_et_unitary",
    "diagonal_phases",
    "error_timing_equivalence",
]

KL_TOL = 1e-9
COMM_TOL = 1e-9
UNITARY_TOL = 1e-10
OVERLAP_TOL = 1e-9


class QecError(ModelError):
    """Invalid code, error set or certificate."""


def named_error(name: str, N: int) -> np.ndarray:
    """Error operator by name: ``"identity"`` or ``"lowering"``."""
    if name == "identity":
        return np.eye(N, dtype=complex)
    if name == "lowering":
        return destroy(N).astype(complex)
    raise QecError(f"unknown error {name!r}")


def _as_errors(errors, N):
    out = []
    for e in errors:
        op = named_error(e, N) if isinstance(e, str) else as_matrix(e, "error", square=True)
        if op.shape != (N, N):
            raise QecError(f"error operators must be {N}x{N}")
        out.append(op)
    if not out:
        raise QecError("at least one error operator is required")
    return out


# ----------------------------------------------------------------------------
# Knill-Laflamme


@dataclass
class KlDiagonalization:
    """Diagonal error basis of a correctable error set.

    Attributes
    ----------
    errors : list of numpy.ndarray
        Original ``E_i``.
    A : numpy.ndarray
        ``A_ij`` with ``P0 E_i^dagger E_j P0 = A_ij P0``.
    u : numpy.ndarray
        Unitary with ``u^dagger A u = diag(r)``.
    F : list of numpy.ndarray
        ``F_k = sum_i u_ik E_i``; an identity-like error (if any) comes first.
    r : numpy.ndarray
    code : LogicalCode
    """

    errors: list
    A: np.ndarray
    u: np.ndarray
    F: list
    r: np.ndarray
    code: LogicalCode

    @property
    def projector(self) -> np.ndarray:
        return self.code.projector

    def subspace_projectors(self) -> list[np.ndarray]:
        """``P_k = F_k P0 F_k^dagger / r_k`` for every ``r_k > 0``."""
        p0 = self.projector
        return [f @ p0 @ f.conj().T / rk for f, rk in zip(self.F, self.r) if rk > KL_TOL]

    def verify(self) -> float:
        """Worst ``||P0 F_k^dagger F_l P0 - r_k delta_kl P0||_F``."""
        p0 = self.projector
        worst = 0.0
        for k, fk in enumerate(self.F):
            for l, fl in enumerate(self.F):
                target = self.r[k] * p0 if k == l else 0 * p0
                worst = max(worst, float(np.linalg.norm(p0 @ fk.conj().T @ fl @ p0 - target)))
        return worst


def kl_diagonalize(code: LogicalCode, errors) -> KlDiagonalization:
    """Diagonalize the Knill-Laflamme matrix of ``errors`` on ``code``.

    Parameters
    ----------
    errors : sequence
        ``N x N`` matrices or the names ``"identity"`` and ``"lowering"``.

    Raises
    ------
    QecError
        If some ``P0 E_i^dagger E_j P0`` is not proportional to ``P0`` or a
        weight is negative.
    """
    p0 = code.projector
    k_dim = code.dim
    if k_dim < 1 or abs(np.trace(p0).real - k_dim) > 1e-12:
        raise QecError("degenerate code projector")
    es = _as_errors(errors, code.N)
    q = len(es)
    a = np.zeros((q, q), dtype=complex)
    for i, ei in enumerate(es):
        for j, ej in enumerate(es):
            blk = p0 @ ei.conj().T @ ej @ p0
            a[i, j] = np.trace(blk) / k_dim
            dev = np.linalg.norm(blk - a[i, j] * p0)
            if dev > KL_TOL:
                raise QecError(f"Knill-Laflamme condition violated for errors ({i}, {j}) "
                               f"by {dev:.2e}")
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    for k in range(q):
        big = np.argmax(np.abs(v[:, k]))
        v[:, k] *= abs(v[big, k]) / v[big, k]
    if np.any(w < -KL_TOL):
        raise QecError(f"negative Knill-Laflamme weight {w.min():.2e}")
    w = np.clip(w, 0.0, None)
    fs = [sum(v[i, k] * es[i] for i in range(q)) for k in range(q)]
    # identity-like error first
    for k, f in enumerate(fs):
        fp = f @ p0
        c = np.trace(fp) / k_dim
        if abs(c) > KL_TOL and np.linalg.norm(fp - c * p0) <= KL_TOL:
            perm = [k] + [j for j in range(q) if j != k]
            fs = [fs[j] for j in perm]
            w, v = w[perm], v[:, perm]
            break
    return KlDiagonalization(es, a, v, fs, w, code)


# ----------------------------------------------------------------------------
# commutator condition


@dataclass
class CommutatorCertificate:
    """Per-segment coefficients ``c_m`` with ``[H_m, F] = c_m F``.

    Attributes
    ----------
    coefficients : numpy.ndarray, shape (segments, d)
        Projections ``<F, [H_m, F]> / <F, F>`` in rad/us.
    residuals : numpy.ndarray, shape (segments, d)
        ``||[H_m, F] - c_m F||_F / ||F||_F``.
    bounds : list of (float, float)
        Frame segment intervals.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    bounds: list

    @property
    def valid(self) -> bool:
        return (float(np.max(self.residuals, initial=0.0)) <= COMM_TOL
                and float(np.max(np.abs(self.coefficients.imag), initial=0.0)) <= COMM_TOL)

    def phases(self, t: float) -> np.ndarray:
        """``theta_m(t) = int_0^t c_m`` per ancilla level."""
        out = np.zeros(self.coefficients.shape[1])
        for (a, b), c in zip(self.bounds, self.coefficients.real):
            if t > a:
                out += c * (min(t, b) - a)
        return out

    def interaction_error(self, F: np.ndarray, t: float) -> np.ndarray:
        """Predicted ``R^dagger(t) (I x F) R(t) = sum_m exp(i theta_m) |m><m| x F``."""
        return kronecker(np.diag(np.exp(1j * self.phases(t))), F)


def commutator_condition(model: SystemModel, F) -> CommutatorCertificate:
    """Certify that every frame Hamiltonian maps ``F`` to a real multiple.

    ``F`` acts on the central system only (``N x N``).
    """
    F = as_matrix(F, "error", square=True)
    if F.shape[0] != model.N:
        raise QecError(f"error must act on the {model.N}-dimensional central system")
    nf = np.linalg.norm(F)
    if nf == 0:
        raise QecError("error operator is zero")
    n_seg = len(model.frame)
    coef = np.zeros((n_seg, model.d), dtype=complex)
    res = np.zeros((n_seg, model.d))
    for s, seg in enumerate(model.frame):
        for m, h in enumerate(seg.blocks):
            comm = h @ F - F @ h
            c = np.vdot(F, comm) / nf ** 2
            coef[s, m] = c
            res[s, m] = np.linalg.norm(comm - c * F) / nf
    bounds = [(seg.start, seg.end) for seg in model.frame]
    return CommutatorCertificate(coef, res, bounds)


# ----------------------------------------------------------------------------
# block unitaries


def build_pi_et_unitary(kl: KlDiagonalization, U0, phases=None) -> np.ndarray:
    """``U = sum_k exp(i phi_k) F_k U0 F_k^dagger / r_k`` plus identity elsewhere.

    Parameters
    ----------
    U0 : array_like
        Target gate, either ``N x N`` with ``U0 U0^dagger = P0`` or
        ``k x k`` in the code basis.
    phases : sequence of float, optional
        ``phi_k`` per diagonal error; zeros by default.

    Raises
    ------
    QecError
        If ``U0`` is not unitary on the code or two error subspaces overlap.
    """
    code = kl.code
    u0 = as_matrix(U0, "U0", square=True)
    if u0.shape[0] == code.dim and code.dim != code.N:
        u0 = code.basis @ u0 @ code.basis.conj().T
    if u0.shape[0] != code.N:
        raise QecError(f"U0 must be {code.N}x{code.N} or {code.dim}x{code.dim}")
    p0 = code.projector
    if np.linalg.norm(u0 @ u0.conj().T - p0) > UNITARY_TOL:
        raise QecError("U0 must satisfy U0 U0^dagger = P0")
    q = len(kl.F)
    phi = np.zeros(q) if phases is None else np.asarray(phases, dtype=float)
    if phi.shape != (q,):
        raise QecError(f"expected {q} phases")
    keep = [k for k in range(q) if kl.r[k] > KL_TOL]
    projs = [kl.F[k] @ p0 @ kl.F[k].conj().T / kl.r[k] for k in keep]
    for a in range(len(projs)):
        for b in range(a + 1, len(projs)):
            ov = np.linalg.norm(projs[a] @ projs[b])
            if ov > OVERLAP_TOL:
                raise QecError(f"error subspaces {keep[a]} and {keep[b]} overlap ({ov:.2e})")
    u = np.eye(code.N, dtype=complex) - sum(projs)
    for k in keep:
        f = kl.F[k]
        u = u + np.exp(1j * phi[k]) * f @ u0 @ f.conj().T / kl.r[k]
    return u


def diagonal_phases(U, tol: float = 1e-12) -> np.ndarray:
    """Phases of a diagonal unitary, for use as SNAP phases."""
    U = as_matrix(U, "U", square=True)
    if np.max(np.abs(U - np.diag(np.diag(U)))) > tol:
        raise QecError("unitary is not diagonal in the Fock basis")
    d = np.diag(U)
    if np.max(np.abs(np.abs(d) - 1)) > tol:
        raise QecError("unitary has non-unit diagonal entries")
    return np.angle(d)


# ----------------------------------------------------------------------------
# error timing


def error_timing_equivalence(model: SystemModel, code: LogicalCode, F, t1_list,
                             t: float | None = None, i=0, r=None) -> float:
    """Worst deviation between an error during the gate and after it.

    For each ``t1`` the trajectory ``<r| W(t, t1) F^I(t1) W(t1, 0) |i>`` on the
    code is compared with ``F <r| W(t, 0) |i>`` by :func:`operator_distance`.
    The error is a single inserted operator, not a Lindblad rate.

    Raises
    ------
    QecError
        If the no-jump propagator is not in PI form or the commutator
        condition fails for ``F``.
    """
    F = as_matrix(F, "error", square=True)
    t = model.duration if t is None else float(t)
    r = model.d - 1 if r is None else r
    cert = commutator_condition(model, F)
    if not cert.valid:
        raise QecError("commutator condition fails; error timing is not certified")
    if not factorize_no_jump(model).valid:
        raise QecError("no-jump propagator is not in PI form")
    full = kronecker(np.eye(model.d), F)
    ref = F @ path_operator(model, i, [], r, t) @ code.basis
    worst = 0.0
    for t1 in t1_list:
        op = path_operator(model, i, [(full, float(t1))], r, t) @ code.basis
        worst = max(worst, operator_distance(op, ref))
    return worst
