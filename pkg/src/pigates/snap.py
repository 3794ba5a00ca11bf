"""SNAP gates on a dispersively coupled cavity.

Scenarios are built in the interaction picture of the dispersive
Hamiltonian ``H0 = sum_m |m><m| x H_m`` with ``H_g = 0`` and
``H_e = H_f = -chi a^dagger a`` (chi-matched third level), in a frame that
also rotates at the ancilla transition frequencies. The ideal PI control is

    H_c = Omega (|g><x| x S(phi) + h.c.) + delta |x><x|

with ``x = e`` for a two-level ancilla and ``x = f`` for three levels.
Starting in ``|g>``, a ``pi/2`` pulse maps the cavity by ``S(-phi)`` when the
ancilla ends in ``x`` and by the identity when it stays in ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dyson
from ._sectors import find_sectors
from .dyson import ConditionalChannel, conditional_channel
from .model import (
    ControlSegment,
    ModelError,
    SampledControl,
    SystemModel,
    build_model,
    destroy,
    level_projector,
    number,
)
from .numerics import as_matrix, is_unitary, kronecker

__all__ = [
    "SnapConfig",
    "LogicalCode",
    "GateMetrics",
    "snap_operator",
    "binomial_code",
    "t_gate_phases",
    "build_snap_scenario",
    "approximate_control",
    "ideal_control",
    "exact_pair_propagator",
    "pair_coefficients",
    "pair_hamiltonian",
    "gate_metrics",
    "channel_metrics",
    "snap_targets",
    "PRESETS",
    "preset",
    "TWO_PI",
]

TWO_PI = 2 * math.pi
MAX_SAMPLED_STEPS = 2_000_000


def snap_operator(phases, N: int) -> np.ndarray:
    """``S(phi) = diag(exp(i phi_0), ..., exp(i phi_{N-1}))``.

    Shorter phase lists are padded with zeros.
    """
    phi = np.zeros(N)
    p = np.asarray(phases if phases is not None else [], dtype=float).ravel()
    if p.size > N:
        raise ModelError(f"{p.size} phases given for a {N}-level cavity")
    phi[:p.size] = p
    return np.diag(np.exp(1j * phi))


@dataclass(frozen=True, eq=False)
class LogicalCode:
    """Code subspace spanned by orthonormal central-system states.

    Attributes
    ----------
    basis : numpy.ndarray, shape (N, k)
        Code words as columns.
    """

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex)
        if b.ndim != 2 or b.shape[1] < 1:
            raise ModelError("code basis must be an (N, k) array")
        if np.max(np.abs(b.conj().T @ b - np.eye(b.shape[1]))) > 1e-12:
            raise ModelError("code words must be orthonormal")
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def N(self) -> int:
        return self.basis.shape[0]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def restrict(self, op: np.ndarray) -> np.ndarray:
        """Matrix of ``op`` in the code basis, ``V^dagger op V``."""
        return self.basis.conj().T @ op @ self.basis

    @property
    def max_fock(self) -> int:
        nz = np.nonzero(np.any(np.abs(self.basis) > 1e-12, axis=1))[0]
        return int(nz[-1]) if nz.size else 0


def binomial_code(N: int = 10) -> LogicalCode:
    """Simplest binomial code ``{(|0> + |4>)/sqrt 2, |2>}``."""
    if N < 5:
        raise ModelError("the binomial code needs at least 5 Fock levels")
    b = np.zeros((N, 2), dtype=complex)
    b[0, 0] = b[4, 0] = 1 / math.sqrt(2)
    b[2, 1] = 1.0
    return LogicalCode(b)


def t_gate_phases(N: int = 10) -> np.ndarray:
    """SNAP phases acting as a T gate on :func:`binomial_code`."""
    phi = np.zeros(N)
    phi[2] = math.pi / 4
    return phi


@dataclass(frozen=True)
class SnapConfig:
    """Parameters of a SNAP scenario (angular frequencies in rad/us).

    Attributes
    ----------
    levels : int
        2 (drive g-e) or 3 (drive g-f, chi-matched e and f).
    chi, omega, delta : float
        Dispersive shift, Rabi amplitude and drive detuning.
    phases : tuple of float or None
        SNAP phases per Fock level; the binomial T gate by default.
    t_phi : float or None
        Dephasing time in us; ``None`` disables dephasing.
    t1 : float or None
        Relaxation time in us for ``|g><e|`` (2 levels) or ``|e><f|``
        (3 levels).
    t1_ge : float or None
        Extra ``|g><e|`` relaxation time for the 3-level model.
    fock_dim : int
    duration : float or None
        Gate time; ``pi / (2 omega)`` by default.
    control : {"ideal", "approx"}
    dephasing : {"pauli", "projector"}
        ``pauli`` uses unit-square weights ``(1, -1[, -1])``; ``projector``
        uses ``|g><g|``.
    code_max_fock : int
        Largest Fock index the code occupies; sets the truncation headroom.
    max_phase_step : float
        Frame phase budget per sampling step.
    """

    levels: int = 2
    chi: float = TWO_PI * 0.9
    omega: float = TWO_PI * 0.1
    delta: float = 0.0
    phases: tuple | None = None
    t_phi: float | None = None
    t1: float | None = None
    t1_ge: float | None = None
    fock_dim: int = 10
    duration: float | None = None
    control: str = "ideal"
    dephasing: str = "pauli"
    code_max_fock: int = 4
    max_phase_step: float = 0.05

    def __post_init__(self):
        if self.levels not in (2, 3):
            raise ModelError(f"levels must be 2 or 3, got {self.levels}")
        if self.control not in ("ideal", "approx"):
            raise ModelError(f"unknown control {self.control!r}")
        if self.dephasing not in ("pauli", "projector"):
            raise ModelError(f"unknown dephasing convention {self.dephasing!r}")
        if self.fock_dim < self.code_max_fock + 5:
            raise ModelError(f"fock_dim must be at least {self.code_max_fock + 5} "
                             "(code support plus 4 levels of headroom)")
        for name in ("t_phi", "t1", "t1_ge"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ModelError(f"{name} must be positive")
        if not self.gate_time > 0 or not math.isfinite(self.gate_time):
            raise ModelError("duration must be positive and finite")

    @property
    def gate_time(self) -> float:
        if self.duration is not None:
            return float(self.duration)
        if self.omega == 0:
            return math.inf
        return math.pi / (2 * abs(self.omega))

    @property
    def target_level(self) -> int:
        return 1 if self.levels == 2 else 2

    @property
    def phase_vector(self) -> np.ndarray:
        if self.phases is None:
            return t_gate_phases(self.fock_dim)
        phi = np.zeros(self.fock_dim)
        p = np.asarray(self.phases, dtype=float)
        phi[:p.size] = p
        return phi

    def with_(self, **kw) -> "SnapConfig":
        return replace(self, **kw)


def _dispersive_blocks(cfg: SnapConfig) -> np.ndarray:
    n = cfg.fock_dim
    blocks = np.zeros((cfg.levels, n, n), dtype=complex)
    for m in range(1, cfg.levels):
        blocks[m] = -cfg.chi * number(n)
    return blocks


def ideal_control(cfg: SnapConfig) -> np.ndarray:
    """Constant interaction-picture PI control of the scenario."""
    d, n, x = cfg.levels, cfg.fock_dim, cfg.target_level
    drive = cfg.omega * kronecker(level_projector(d, 0, x), snap_operator(cfg.phase_vector, n))
    h = drive + drive.conj().T
    h += cfg.delta * kronecker(level_projector(d, x), np.eye(n))
    return h


def approximate_control(cfg: SnapConfig) -> SampledControl:
    """Multi-tone ancilla-only drive, sampled piecewise-constant.

    The drive ``eps(t) = Omega sum_n exp(i (phi_n - n chi t))`` acts as
    ``eps(t) |g><x| + h.c.``; in the dispersive interaction picture each
    photon-number sector ``n'`` sees ``eps(t) exp(i n' chi t)``. The tone
    ``n = n'`` reproduces the ideal PI control and the others are
    off-resonant by multiples of ``chi``.

    Raises
    ------
    ModelError
        If ``Omega / chi >= 1`` or the step rule needs too many samples.
    """
    if not abs(cfg.omega) < abs(cfg.chi):
        raise ModelError("approximate control needs Omega/chi < 1")
    d, n, x = cfg.levels, cfg.fock_dim, cfg.target_level
    dim = d * n
    phi = cfg.phase_vector
    fock = np.arange(n)
    omega, chi, delta = cfg.omega, cfg.chi, cfg.delta
    rows = fock
    cols = x * n + fock
    diag_x = x * n + fock

    def func(t):
        eps = omega * np.sum(np.exp(1j * (phi - fock * chi * t)))
        c = eps * np.exp(1j * chi * fock * t)
        h = np.zeros((dim, dim), dtype=complex)
        h[rows, cols] = c
        h[cols, rows] = c.conj()
        if delta:
            h[diag_x, diag_x] = delta
        return h

    top = max(n - 1, 1)
    step = cfg.max_phase_step / (top * abs(chi))
    t_gate = cfg.gate_time
    if t_gate / step > MAX_SAMPLED_STEPS:
        raise ModelError("step rule needs more samples than the memory budget allows")
    return SampledControl(0.0, t_gate, func, step)


def build_snap_scenario(cfg: SnapConfig) -> SystemModel:
    """Interaction-picture SNAP model with the configured noise.

    Jumps: dephasing at rate ``1/t_phi``; for two levels an optional
    ``|g><e|`` at ``1/t1``; for three levels ``|e><f|`` at ``1/t1`` and an
    optional ``|g><e|`` at ``1/t1_ge``.
    """
    d, n = cfg.levels, cfg.fock_dim
    blocks = _dispersive_blocks(cfg)
    h0 = np.zeros((d * n, d * n), dtype=complex)
    for m in range(d):
        h0[m * n:(m + 1) * n, m * n:(m + 1) * n] = blocks[m]
    t_gate = cfg.gate_time
    if cfg.control == "ideal":
        controls = [ControlSegment(0.0, t_gate, ideal_control(cfg))]
    else:
        controls = [approximate_control(cfg)]
    eye = np.eye(n)
    jumps = []
    if cfg.t_phi is not None:
        if cfg.dephasing == "pauli":
            w = np.array([1.0] + [-1.0] * (d - 1))
        else:
            w = np.array([1.0] + [0.0] * (d - 1))
        jumps.append((kronecker(np.diag(w), eye), 1.0 / cfg.t_phi, "dephasing"))
    if d == 2 and cfg.t1 is not None:
        jumps.append((kronecker(level_projector(2, 0, 1), eye), 1.0 / cfg.t1, "|g><e|"))
    if d == 3:
        if cfg.t1 is not None:
            jumps.append((kronecker(level_projector(3, 1, 2), eye), 1.0 / cfg.t1, "|e><f|"))
        if cfg.t1_ge is not None:
            jumps.append((kronecker(level_projector(3, 0, 1), eye), 1.0 / cfg.t1_ge, "|g><e|"))
    return build_model(d, n, h0, frame="static", controls=controls, jumps=jumps,
                       levels=("g", "e", "f")[:d], max_phase_step=cfg.max_phase_step)


def snap_targets(cfg: SnapConfig, code: LogicalCode) -> dict:
    """Post-selected targets on the code: ``S(-phi)`` for ``x``, ``I`` for ``g``."""
    s = code.restrict(snap_operator(-cfg.phase_vector, cfg.fock_dim))
    names = ("g", "e", "f")
    return {names[cfg.target_level]: s, "g": np.eye(code.dim, dtype=complex)}


# ----------------------------------------------------------------------------
# closed-form pair propagator


def _cos_sinc(z: complex):
    """``cos(sqrt z)`` and ``sin(sqrt z) / sqrt z``, entire in ``z``."""
    if abs(z) < 1e-2:
        c = s = 0.0
        term_c, term_s = 1.0 + 0j, 1.0 + 0j
        for k in range(12):
            c += term_c
            s += term_s
            term_c *= -z / ((2 * k + 1) * (2 * k + 2))
            term_s *= -z / ((2 * k + 2) * (2 * k + 3))
        return c, s
    r = np.sqrt(complex(z))
    return np.cos(r), np.sin(r) / r


def pair_coefficients(w0: complex, wz: complex, wxy: complex, dt: float):
    """Coefficients ``(xi_mm, xi_nn, xi_mn)`` of the pair propagator.

    ``xi_mn`` multiplies both ``|m><n| x U`` and ``|n><m| x U^dagger``.
    """
    w0, wz, wxy = complex(w0), complex(wz), complex(wxy)
    z = (wxy * wxy + wz * wz) * dt * dt
    c, s = _cos_sinc(z)
    # sinh(i w dt) n = i sin(w dt) (a / w) = i dt sinc * a
    ph = np.exp(-1j * w0 * dt)
    sh_z = 1j * dt * s * wz
    sh_xy = 1j * dt * s * wxy
    return ph * (c + sh_z), ph * (c - sh_z), -ph * sh_xy


def exact_pair_propagator(w0, wz, wxy, U, dt: float) -> np.ndarray:
    """Closed-form ``exp(-i H dt)`` for one driven ancilla pair.

    ``H = w0 I + wz sigma_z + wxy (|m><n| x U + |n><m| x U^dagger)`` with
    ``sigma_z = |n><n| - |m><m|``; all three frequencies may be complex.
    The result is ordered ``(m, n)`` and expressed through
    ``cosh(i w dt)`` and ``sinh(i w dt) / w`` with ``w^2 = wxy^2 + wz^2``,
    evaluated by series near ``w = 0``.
    """
    u = as_matrix(U, "U", square=True)
    if not is_unitary(u, 1e-10):
        raise ModelError("pair unitary must be unitary")
    xmm, xnn, xmn = pair_coefficients(w0, wz, wxy, dt)
    n = u.shape[0]
    eye = np.eye(n)
    out = np.zeros((2 * n, 2 * n), dtype=complex)
    out[:n, :n] = xmm * eye
    out[n:, n:] = xnn * eye
    out[:n, n:] = xmn * u
    out[n:, :n] = xmn * u.conj().T
    return out


def pair_hamiltonian(w0, wz, wxy, U) -> np.ndarray:
    """Generator matching :func:`exact_pair_propagator`."""
    u = np.asarray(U, dtype=complex)
    n = u.shape[0]
    eye = np.eye(n)
    h = np.zeros((2 * n, 2 * n), dtype=complex)
    h[:n, :n] = (w0 - wz) * eye
    h[n:, n:] = (w0 + wz) * eye
    h[:n, n:] = wxy * u
    h[n:, :n] = wxy * u.conj().T
    return h


# ----------------------------------------------------------------------------
# gate metrics


@dataclass
class GateMetrics:
    """Post-selected gate quality for one ancilla outcome.

    Attributes
    ----------
    outcome : str
    population : float
        Probability of the outcome for a maximally mixed code input.
    target : numpy.ndarray
        Target unitary in the code basis.
    process_fidelity : float
        Choi overlap with the target, normalized by the population.
    average_fidelity : float
        ``(k F_pro + 1) / (k + 1)``, i.e. ``(2 F_pro + 1) / 3`` on a qubit.
    weighted_infidelity : float
        ``population * (1 - average_fidelity)``.
    converged : bool
    """

    outcome: str
    population: float
    target: np.ndarray = field(repr=False)
    process_fidelity: float
    average_fidelity: float
    weighted_infidelity: float
    converged: bool = True


def channel_metrics(choi: np.ndarray, target: np.ndarray, outcome: str = "",
                    converged: bool = True) -> GateMetrics:
    """Metrics of a code-restricted Choi matrix against a target unitary."""
    u = np.asarray(target, dtype=complex)
    k = u.shape[0]
    if not is_unitary(u, 1e-9):
        raise ModelError(f"target for outcome {outcome!r} is not unitary on the code")
    p = float(np.trace(choi).real / k)
    omega = u.T.reshape(-1)  # Omega_U[(a, c)] = U[c, a]
    if p <= 0:
        return GateMetrics(outcome, 0.0, u, math.nan, math.nan, 0.0, converged)
    f_pro = float(np.real(omega.conj() @ choi @ omega) / (k * k * p))
    f_avg = (k * f_pro + 1) / (k + 1)
    return GateMetrics(outcome, p, u, f_pro, f_avg, p * (1 - f_avg), converged)


def gate_metrics(model: SystemModel, code: LogicalCode, targets: dict, t: float | None = None,
                 P: int | None = None, initial="g", quad_points: int | None = None,
                 check: bool = True, unconditioned: str | None = None,
                 step_scale: float = 1.0) -> list[GateMetrics]:
    """Per-outcome post-selected metrics of the gate.

    Parameters
    ----------
    model : SystemModel
    code : LogicalCode
    targets : dict
        Outcome level (name or index) to target unitary in the code basis.
    t : float, optional
        Evaluation time; the end of the control schedule by default.
    P : int, optional
        Dyson truncation order. ``None`` uses the full Lindblad propagator
        projected on each ancilla outcome.
    unconditioned : str, optional
        If given, also report the outcome-summed channel against
        ``targets[unconditioned]`` under the name ``"unconditioned"``.
    step_scale : float
        Multiplier on every sampling step (0.5 for step-halving checks).
    """
    if t is None:
        t = model.duration
        if t is None:
            raise ModelError("gate_metrics needs a time for models without controls")
    terms = None
    if P is not None:
        terms = dyson.dyson_terms(model, P, t, quad_points, check=check, step_scale=step_scale)
    out = []
    total = None
    ok_all = True
    for r, target in targets.items():
        ch = conditional_channel(model, initial, r, t, P=P, terms=terms) if P is not None else \
            _master_channel(model, initial, r, t, step_scale)
        j = ch.restrict(code.basis)
        total = j if total is None else total + j
        ok_all &= ch.converged
        name = r if isinstance(r, str) else model.levels[r]
        out.append(channel_metrics(j, target, name, ch.converged))
    if unconditioned is not None:
        out.append(channel_metrics(total, targets[unconditioned], "unconditioned", ok_all))
    return out


def _master_channel(model, initial, r, t, step_scale=1.0) -> ConditionalChannel:
    key = ("master_pairs", float(t), float(step_scale))
    if key not in model._cache:
        model._cache[key] = dyson.master_superoperator(model, t, step_scale)
    sec = find_sectors(model)
    i = model.level_index(initial)
    rr = model.level_index(r)
    choi = dyson.choi_from_superoperator(sec.to_full(model._cache[key]), model.dim, i, rr, model.N)
    return ConditionalChannel(i, rr, None, choi, float(np.trace(choi).real / model.N))


# ----------------------------------------------------------------------------
# presets


PRESETS = {
    "snap2_ideal": dict(levels=2, control="ideal", t_phi=70.0),
    "snap2_approx": dict(levels=2, control="approx", t_phi=70.0),
    "snap3_ideal": dict(levels=3, control="ideal", t_phi=70.0, t1=100.0, t1_ge=100.0),
}


def preset(name: str, **overrides) -> SnapConfig:
    """Named scenario configuration with keyword overrides."""
    if name not in PRESETS:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(PRESETS)}")
    return SnapConfig(**{**PRESETS[name], **overrides})
