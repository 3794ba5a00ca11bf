import numpy as np
import pytest

from pigates.model import (PiControlSpec, PiPair, build_model, level_projector,
                           pi_control_hamiltonian)
from pigates.numerics import kronecker
from pigates.snap import SnapConfig, build_snap_scenario

# one "criterion N: PASS/FAIL ..." line per acceptance criterion, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def random_unitary(rng, n):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_hermitian(rng, n, scale=1.0):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (z + z.conj().T) / 2


def random_density(rng, n, rank=None):
    rank = n if rank is None else rank
    z = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = z @ z.conj().T
    return rho / np.trace(rho)


def pair_generator(w0, wz, wxy, u):
    """Dense pair generator; sigma_z = |n><n| - |m><m| in (m, n) ordering."""
    n = u.shape[0]
    sz = np.diag([-1.0, 1.0])
    sx_u = np.block([[np.zeros((n, n)), u], [u.conj().T, np.zeros((n, n))]])
    return w0 * np.eye(2 * n) + wz * np.kron(sz, np.eye(n)) + wxy * sx_u


def random_pi_model(rng, d=3, N=3, jumps=True, duration=1.0):
    """Random PI design: one driven pair, diagonal frames, ancilla jumps."""
    blocks = np.zeros((d, N, N), dtype=complex)
    for m in range(d):
        blocks[m] = np.diag(rng.uniform(-3, 3, N))
    h0 = np.zeros((d * N, d * N), dtype=complex)
    for m in range(d):
        h0[m * N:(m + 1) * N, m * N:(m + 1) * N] = blocks[m]
    u = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, N)))
    spec = PiControlSpec((PiPair(0, d - 1, u, rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5)),))
    hc = pi_control_hamiltonian(spec, d, N)
    eye = np.eye(N)
    jl = []
    if jumps:
        jl.append((kronecker(np.diag(rng.choice([-1.0, 1.0], d)), eye), rng.uniform(0.01, 0.2)))
        jl.append((kronecker(level_projector(d, 0, 1), eye), rng.uniform(0.01, 0.2)))
    return build_model(d, N, h0, controls=[(0.0, duration, hc)], jumps=jl)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def snap2_dephasing():
    return build_snap_scenario(SnapConfig(levels=2, t_phi=70.0))


@pytest.fixture(scope="session")
def snap2_relax():
    return build_snap_scenario(SnapConfig(levels=2, t_phi=70.0, t1=20.0, fock_dim=5,
                                          code_max_fock=0))


@pytest.fixture(scope="session")
def snap3_small():
    return build_snap_scenario(SnapConfig(levels=3, t_phi=70.0, t1=100.0, t1_ge=100.0,
                                          fock_dim=5, code_max_fock=0))

