import numpy as np
import pytest
import scipy.linalg

from pigates.model import (FrameSegment, ModelError, PiControlSpec, PiPair, SampledControl,
                           SpecError, build_model, build_pi_control, destroy, frame_rotation,
                           level_projector, number, pi_control_hamiltonian, validate_jump)
from pigates.numerics import is_hermitian, is_unitary, kronecker, matrix_exponential
from pigates.snap import snap_operator

from conftest import random_hermitian, random_unitary

TWO_PI = 2 * np.pi


def dispersive_h0(N, w_ge, chi):
    e = level_projector(2, 1)
    return kronecker(e, w_ge * np.eye(N) - chi * number(N))


class TestBuildModel:
    def test_trivial_rabi_model(self):
        hc = np.array([[0, 1], [1, 0]], dtype=complex)
        m = build_model(2, 1, controls=[(0.0, 1.0, hc)])
        assert m.dim == 2
        assert m.duration == 1.0
        assert m.jumps == ()

    def test_dispersive_model(self):
        h0 = dispersive_h0(10, TWO_PI * 5.0, TWO_PI * 0.9)
        m = build_model(2, 10, h0)
        assert m.N == 10
        off = m.static_hamiltonian[:10, 10:]
        assert np.linalg.norm(off) == 0

    def test_coupling_h0_rejected(self):
        h0 = np.zeros((4, 4), dtype=complex)
        h0[0, 2] = h0[2, 0] = 1.0
        with pytest.raises(ModelError, match="couples"):
            build_model(2, 2, h0)

    def test_non_hermitian_control_rejected(self):
        hc = np.array([[0, 1], [0, 0]], dtype=complex)
        with pytest.raises(ModelError, match="Hermitian"):
            build_model(2, 1, controls=[(0.0, 1.0, hc)])

    def test_gapped_schedule_rejected(self):
        hc = np.zeros((2, 2))
        with pytest.raises(ModelError, match="contiguous"):
            build_model(2, 1, controls=[(0.0, 1.0, hc), (1.5, 2.0, hc)])

    def test_negative_rate_rejected(self):
        with pytest.raises(ModelError):
            build_model(2, 1, jumps=[(np.eye(2), -1.0)])

    def test_level_names(self):
        m = build_model(3, 1)
        assert m.levels == ("g", "e", "f")
        assert m.level_index("f") == 2
        with pytest.raises(ModelError):
            m.level_index("x")

    def test_time_outside_schedule(self):
        m = build_model(2, 1, controls=[(0.0, 1.0, np.zeros((2, 2)))])
        with pytest.raises(ModelError):
            m.check_time(1.5)


class TestFrameRotation:
    def test_zero_frame(self):
        m = build_model(2, 3, frame="none")
        np.testing.assert_allclose(frame_rotation(m, 0.7), np.eye(6), atol=1e-15)

    def test_diagonal_generator(self):
        N, w, t = 4, 1.3, 0.9
        blocks = np.stack([w * number(N), np.zeros((N, N))])
        m = build_model(2, N, frame=blocks)
        r = frame_rotation(m, t)
        np.testing.assert_allclose(r[:N, :N], np.diag(np.exp(-1j * w * np.arange(N) * t)),
                                   atol=1e-14)

    def test_two_segment_product_oracle(self, rng):
        d, N = 2, 3
        b1 = np.stack([random_hermitian(rng, N) for _ in range(d)])
        b2 = np.stack([random_hermitian(rng, N) for _ in range(d)])
        frame = [FrameSegment(0.0, 0.4, b1), FrameSegment(0.4, np.inf, b2)]
        m = build_model(d, N, frame=frame)
        t = 1.0
        steps = 10_000
        dt = t / steps
        step1 = scipy.linalg.block_diag(*matrix_exponential(-1j * b1 * dt))
        step2 = scipy.linalg.block_diag(*matrix_exponential(-1j * b2 * dt))
        ref = np.eye(d * N, dtype=complex)
        for k in range(steps):
            ref = (step1 if (k + 0.5) * dt < 0.4 else step2) @ ref
        assert np.max(np.abs(frame_rotation(m, t) - ref)) <= 1e-10
        # order matters for non-commuting segments
        swapped = scipy.linalg.block_diag(*matrix_exponential(-1j * b1 * 0.4)) @ \
            scipy.linalg.block_diag(*matrix_exponential(-1j * b2 * 0.6))
        assert np.max(np.abs(frame_rotation(m, t) - swapped)) > 1e-3

    def test_rotation_unitary(self, rng):
        blocks = np.stack([random_hermitian(rng, 4) for _ in range(3)])
        m = build_model(3, 4, frame=blocks)
        for t in rng.uniform(0, 5, 10):
            assert is_unitary(frame_rotation(m, t), 1e-10)


class TestValidateJump:
    def test_relaxation(self):
        k = kronecker(level_projector(2, 0, 1), np.eye(3))
        j = validate_jump((2, 3), k, 0.1)
        assert j.kind == "relaxation"
        assert j.levels == (0, 1)
        assert j.transitions == [(1, 0)]

    def test_dephasing_weights(self):
        cg, ce = 0.3, -1.2
        k = kronecker(np.diag([cg, ce]), np.eye(3))
        j = validate_jump((2, 3), k, 0.1)
        assert j.kind == "dephasing"
        np.testing.assert_allclose(j.weights, [cg, ce])

    def test_general_polar_form(self):
        d, N = 4, 2
        k_anc = (level_projector(d, 0, 1) + level_projector(d, 2, 3)) / np.sqrt(2)
        op = kronecker(k_anc, np.eye(N))
        j = validate_jump((d, N), op, 0.5)
        assert j.kind == "general"
        assert j.pi_compatible
        recon = j.unitary @ scipy.linalg.sqrtm(k_anc.conj().T @ k_anc)
        assert np.max(np.abs(recon - k_anc)) <= 1e-10
        np.testing.assert_allclose(j.lambdas, [0, 0.5, 0, 0.5], atol=1e-12)

    def test_non_pi_compatible_is_flagged(self):
        d, N = 2, 3
        op = kronecker(level_projector(d, 0, 1), destroy(N)) + kronecker(np.eye(2), np.eye(N))
        j = validate_jump((d, N), op, 0.1)
        assert j.kind == "general"
        assert not j.pi_compatible

    def test_rejects_wrong_dimension(self):
        with pytest.raises(ValueError):
            validate_jump((2, 3), np.eye(4), 0.1)


class TestPiControl:
    def test_identity_unitary_is_rabi(self):
        spec = PiControlSpec((PiPair(0, 1, np.eye(2), 0.7),))
        h = pi_control_hamiltonian(spec, 2, 2)
        ref = 0.7 * kronecker(np.array([[0, 1], [1, 0]]), np.eye(2))
        np.testing.assert_allclose(h, ref, atol=1e-15)

    def test_two_disjoint_pairs(self, rng):
        d, N = 4, 3
        u1, u2 = random_unitary(rng, N), random_unitary(rng, N)
        spec = PiControlSpec((PiPair(0, 1, u1, 0.5, 0.1, -0.2), PiPair(2, 3, u2, 1.5)))
        h = pi_control_hamiltonian(spec, d, N)
        ref = np.zeros((d * N, d * N), dtype=complex)
        ref[0:N, N:2 * N] = 0.5 * u1
        ref[N:2 * N, 0:N] = 0.5 * u1.conj().T
        ref[0:N, 0:N] = 0.1 * np.eye(N)
        ref[N:2 * N, N:2 * N] = -0.2 * np.eye(N)
        ref[2 * N:3 * N, 3 * N:] = 1.5 * u2
        ref[3 * N:, 2 * N:3 * N] = 1.5 * u2.conj().T
        np.testing.assert_allclose(h, ref, atol=1e-15)
        assert is_hermitian(h, 1e-12)

    def test_overlapping_pairs_rejected(self):
        with pytest.raises(SpecError, match="overlapping"):
            PiControlSpec((PiPair(0, 1, np.eye(2), 1.0), PiPair(1, 2, np.eye(2), 1.0)))

    def test_non_unitary_rejected(self):
        with pytest.raises(SpecError):
            PiControlSpec((PiPair(0, 1, 2 * np.eye(2), 1.0),))

    def test_schrodinger_picture_snap_drive(self):
        N, w_ge, chi, omega = 5, TWO_PI * 4.0, TWO_PI * 0.9, TWO_PI * 0.1
        phi = np.array([0.0, 0.3, 1.1, -0.4, 2.0])
        h0 = dispersive_h0(N, w_ge, chi)
        spec = PiControlSpec((PiPair(0, 1, snap_operator(phi, N), omega),))
        hi = pi_control_hamiltonian(spec, 2, N)
        m = build_model(2, N, h0, controls=[(0.0, 3.0, hi)])
        for t in (0.0, 0.37, 1.9):
            h = build_pi_control(m, spec, t)
            assert is_hermitian(h, 1e-12)
            n = np.arange(N)
            expected = omega * np.exp(1j * ((w_ge - n * chi) * t + phi))
            np.testing.assert_allclose(np.diag(h[:N, N:]), expected, atol=1e-10)
            assert np.max(np.abs(h[:N, N:] - np.diag(np.diag(h[:N, N:])))) <= 1e-12


class TestSampledControl:
    def test_grid_and_midpoints(self):
        calls = []

        def func(t):
            calls.append(t)
            return np.zeros((2, 2))

        c = SampledControl(0.0, 1.0, func, 0.3)
        assert c.n_steps == 4
        assert c.grid_step() == pytest.approx(0.25)
        c.value(0.6)
        assert calls[-1] == pytest.approx(0.625)
        assert c.grid_step(0.5) == pytest.approx(1 / 7)

    def test_pieces_cover_interval(self):
        def func(t):
            return np.array([[0, t], [t, 0]], dtype=complex)

        m = build_model(2, 1, controls=[SampledControl(0.0, 1.0, func, 0.1)])
        pieces = list(m.pieces(0.0, 1.0))
        assert len(pieces) == 10
        assert sum(p.duration for p in pieces) == pytest.approx(1.0)
        assert pieces[3].hamiltonian[0, 1] == pytest.approx(0.35)
