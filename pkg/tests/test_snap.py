import numpy as np
import pytest
import scipy.linalg

from pigates.dyson import evolve_master
from pigates.model import ModelError
from pigates.numerics import unitary_distance
from pigates.picert import detect_nas
from pigates.snap import (PRESETS, LogicalCode, SnapConfig, approximate_control, binomial_code,
                          build_snap_scenario, channel_metrics, exact_pair_propagator,
                          gate_metrics, ideal_control, pair_coefficients, preset, snap_operator,
                          snap_targets, t_gate_phases)

from conftest import pair_generator, random_unitary

TWO_PI = 2 * np.pi


class TestSnapOperator:
    def test_zero_phases(self):
        np.testing.assert_array_equal(snap_operator(np.zeros(4), 4), np.eye(4))

    def test_padding(self):
        s = snap_operator([0.5], 3)
        np.testing.assert_allclose(np.diag(s), [np.exp(0.5j), 1, 1])

    def test_too_many_phases(self):
        with pytest.raises(ModelError):
            snap_operator(np.zeros(5), 4)

    def test_inverse(self, rng):
        phi = rng.uniform(0, TWO_PI, 6)
        np.testing.assert_allclose(snap_operator(phi, 6) @ snap_operator(-phi, 6), np.eye(6),
                                   atol=1e-15)

    def test_t_gate_on_binomial_code(self):
        code = binomial_code(10)
        s = code.restrict(snap_operator(t_gate_phases(10), 10))
        assert unitary_distance(s, np.diag([1, np.exp(1j * np.pi / 4)])) <= 1e-14
        np.testing.assert_allclose(s, np.diag([1, np.exp(1j * np.pi / 4)]), atol=1e-15)


class TestLogicalCode:
    def test_binomial_code(self):
        code = binomial_code(9)
        p = code.projector
        np.testing.assert_allclose(p @ p, p, atol=1e-15)
        assert code.dim == 2 and code.N == 9 and code.max_fock == 4

    def test_binomial_needs_room(self):
        with pytest.raises(ModelError):
            binomial_code(4)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ModelError):
            LogicalCode(np.array([[1.0, 1.0], [0.0, 1.0]]))


class TestScenario:
    def test_two_level_structure(self, snap2_dephasing):
        m = snap2_dephasing
        assert m.levels == ("g", "e")
        assert [j.kind for j in m.jumps] == ["dephasing"]
        assert detect_nas(m).groups == [[0], [1]]
        assert m.duration == pytest.approx(2.5)

    def test_three_level_jumps(self, snap3_small):
        labels = [j.label for j in snap3_small.jumps]
        assert labels == ["dephasing", "|e><f|", "|g><e|"]
        np.testing.assert_allclose(snap3_small.jumps[0].weights, [1, -1, -1])

    def test_ideal_control_matrix(self):
        cfg = SnapConfig(levels=3, fock_dim=9, delta=0.3)
        n = cfg.fock_dim
        h = ideal_control(cfg)
        s = snap_operator(cfg.phase_vector, n)
        np.testing.assert_allclose(h[:n, 2 * n:], cfg.omega * s, atol=1e-15)
        np.testing.assert_allclose(h[2 * n:, 2 * n:], 0.3 * np.eye(n), atol=1e-15)
        assert np.all(h[n:2 * n] == 0)

    def test_no_drive_no_noise_is_identity(self):
        m = build_snap_scenario(SnapConfig(omega=0.0, duration=3.0, fock_dim=5, code_max_fock=0))
        rho = np.zeros((m.dim, m.dim), complex)
        rho[:5, :5] = 0.2
        np.testing.assert_allclose(evolve_master(m, rho, 3.0), rho, atol=1e-14)

    def test_invalid_configs(self):
        with pytest.raises(ModelError):
            SnapConfig(levels=4)
        with pytest.raises(ModelError):
            SnapConfig(fock_dim=6)
        with pytest.raises(ModelError):
            SnapConfig(t_phi=-1.0)

    def test_presets(self):
        assert set(PRESETS) == {"snap2_ideal", "snap2_approx", "snap3_ideal"}
        cfg = preset("snap3_ideal", t1=50.0)
        assert cfg.levels == 3 and cfg.t1 == 50.0 and cfg.t_phi == 70.0
        with pytest.raises(KeyError):
            preset("snap4")


class TestApproximateControl:
    def test_resonant_tone_per_sector(self):
        cfg = SnapConfig(levels=2, control="approx", fock_dim=5, code_max_fock=0,
                         phases=(0.0, 0.3, 1.1, -0.4, 2.0))
        ctl = approximate_control(cfg)
        n = cfg.fock_dim
        period = TWO_PI / cfg.chi
        ts = np.linspace(0, period, 400, endpoint=False)
        avg = np.mean([ctl.func(t)[np.arange(n), n + np.arange(n)] for t in ts], axis=0)
        # off-resonant tones average out over one period
        np.testing.assert_allclose(avg, cfg.omega * np.exp(1j * cfg.phase_vector), atol=1e-12)

    def test_single_tone_is_rabi(self):
        cfg = SnapConfig(levels=2, control="approx", fock_dim=5, code_max_fock=0)
        ctl = approximate_control(cfg)
        h = ctl.func(0.123)
        # sector 0 sees the n = 0 tone plus tones detuned by multiples of chi
        comb = cfg.omega * np.sum(np.exp(1j * (cfg.phase_vector - np.arange(5) * cfg.chi * 0.123)))
        assert h[0, 5] == pytest.approx(comb)

    def test_strong_drive_rejected(self):
        with pytest.raises(ModelError):
            approximate_control(SnapConfig(control="approx", omega=TWO_PI))

    def test_step_halving(self):
        cfg = SnapConfig(levels=2, control="approx", t_phi=70.0, fock_dim=5, code_max_fock=0,
                         phases=(0.0, 0.3, 1.1, -0.4, 2.0), max_phase_step=0.003)
        m = build_snap_scenario(cfg)
        assert m.is_time_dependent()
        rho = np.zeros((m.dim, m.dim), complex)
        rho[:5, :5] = 0.2
        a = evolve_master(m, rho, m.duration)
        b = evolve_master(m, rho, m.duration, step_scale=0.5)
        assert np.max(np.abs(a - b)) <= 1e-8

    def test_second_order_sampling(self):
        cfg = SnapConfig(levels=2, control="approx", t_phi=70.0, fock_dim=5, code_max_fock=0)
        m = build_snap_scenario(cfg)
        rho = np.zeros((m.dim, m.dim), complex)
        rho[:5, :5] = 0.2
        a, b, c = (evolve_master(m, rho, m.duration, step_scale=s) for s in (1.0, 0.5, 0.25))
        ratio = np.max(np.abs(a - b)) / np.max(np.abs(b - c))
        assert ratio == pytest.approx(4.0, rel=0.1)


class TestPairPropagator:
    def test_half_turn(self, rng):
        u = random_unitary(rng, 3)
        omega = 0.8
        w = exact_pair_propagator(0, 0, omega, u, np.pi / (2 * omega))
        expected = -1j * np.block([[np.zeros((3, 3)), u], [u.conj().T, np.zeros((3, 3))]])
        np.testing.assert_allclose(w, expected, atol=1e-14)

    def test_no_coupling(self, rng):
        u = random_unitary(rng, 2)
        xmm, xnn, xmn = pair_coefficients(0.3, 0.7 - 0.1j, 0.0, 1.3)
        assert xmn == 0
        w = exact_pair_propagator(0.3, 0.7 - 0.1j, 0.0, u, 1.3)
        assert np.all(w[:2, 2:] == 0)
        assert xmm == pytest.approx(np.exp(-1j * (0.3 - 0.7 + 0.1j) * 1.3))

    def test_random_draws(self, rng):
        worst = 0.0
        for _ in range(1000):
            w0, wz, wxy = rng.normal(size=3) + 1j * rng.uniform(-0.5, 0, 3)
            dt = rng.uniform(0, 3)
            u = random_unitary(rng, 2)
            ref = scipy.linalg.expm(-1j * pair_generator(w0, wz, wxy, u) * dt)
            worst = max(worst, np.max(np.abs(exact_pair_propagator(w0, wz, wxy, u, dt) - ref)))
        assert worst <= 1e-10

    @pytest.mark.parametrize("wz,wxy", [(0.0, 0.0), (1j, 1.0), (1e-9, 1e-9j)])
    def test_degenerate_frequency(self, rng, wz, wxy):
        # w^2 = wxy^2 + wz^2 = 0 including the nilpotent case
        u = random_unitary(rng, 2)
        ref = scipy.linalg.expm(-1j * pair_generator(0.2, wz, wxy, u) * 1.7)
        np.testing.assert_allclose(exact_pair_propagator(0.2, wz, wxy, u, 1.7), ref, atol=1e-12)

    def test_non_unitary_rejected(self):
        with pytest.raises(ModelError):
            exact_pair_propagator(0, 0, 1, 2 * np.eye(2), 1.0)


class TestGateMetrics:
    def test_noiseless_ideal(self):
        cfg = SnapConfig(levels=2)
        m = build_snap_scenario(cfg)
        code = binomial_code(cfg.fock_dim)
        (e,) = gate_metrics(m, code, {"e": snap_targets(cfg, code)["e"]}, P=0)
        assert e.average_fidelity == pytest.approx(1.0, abs=1e-12)
        assert e.population == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("t_phi", [10.0, 30.0, 70.0, 100.0])
    def test_dephasing_independence(self, t_phi):
        cfg = SnapConfig(levels=2, t_phi=t_phi)
        m = build_snap_scenario(cfg)
        code = binomial_code(cfg.fock_dim)
        out = gate_metrics(m, code, snap_targets(cfg, code))
        e = next(x for x in out if x.outcome == "e")
        assert e.average_fidelity >= 1 - 1e-8
        assert e.weighted_infidelity <= 1e-6

    def test_relaxation_detected(self):
        cfg = SnapConfig(levels=2, t1=50.0)
        assert cfg.gate_time / cfg.t1 == pytest.approx(0.05)
        m = build_snap_scenario(cfg)
        code = binomial_code(cfg.fock_dim)
        (g,) = gate_metrics(m, code, {"g": np.eye(2)})
        assert g.average_fidelity < 1 - 1e-3

    def test_three_level_first_order_paths(self):
        cfg = SnapConfig(levels=3, t1=100.0)
        m = build_snap_scenario(cfg)
        code = binomial_code(cfg.fock_dim)
        # from f the single |e><f| path carries the identity
        (e_from_f,) = gate_metrics(m, code, {"e": np.eye(2)}, P=1, initial="f")
        assert e_from_f.average_fidelity >= 1 - 1e-8
        # from g the drive imprints the SNAP before the jump
        (e_from_g,) = gate_metrics(m, code, {"e": snap_targets(cfg, code)["f"]}, P=1)
        assert e_from_g.average_fidelity >= 1 - 1e-8

    def test_populations_sum_to_one(self, snap3_small):
        code = LogicalCode(np.eye(5)[:, :2])
        targets = {k: np.eye(2) for k in ("g", "e", "f")}
        out = gate_metrics(snap3_small, code, targets)
        assert sum(x.population for x in out) == pytest.approx(1.0, abs=1e-6)
        for x in out:
            assert 0 <= x.process_fidelity <= 1 + 1e-9

    def test_dyson_and_master_routes_agree(self, snap2_dephasing):
        cfg = SnapConfig(levels=2, t_phi=70.0)
        code = binomial_code(cfg.fock_dim)
        targets = snap_targets(cfg, code)
        a = gate_metrics(snap2_dephasing, code, targets, P=3)
        b = gate_metrics(snap2_dephasing, code, targets)
        tail = (snap2_dephasing.duration / cfg.t_phi) ** 4  # first omitted Dyson order
        for x, y in zip(a, b):
            assert x.population == pytest.approx(y.population, abs=tail)
            assert x.average_fidelity == pytest.approx(y.average_fidelity, abs=tail)

    def test_unconditioned(self, snap2_dephasing):
        cfg = SnapConfig(levels=2, t_phi=70.0)
        code = binomial_code(cfg.fock_dim)
        out = gate_metrics(snap2_dephasing, code, snap_targets(cfg, code), unconditioned="e")
        unc = out[-1]
        assert unc.outcome == "unconditioned"
        assert unc.population == pytest.approx(1.0, abs=1e-9)
        e = next(x for x in out if x.outcome == "e")
        assert unc.weighted_infidelity > 10 * e.weighted_infidelity

    def test_non_unitary_target(self):
        with pytest.raises(ModelError):
            channel_metrics(np.eye(4), np.diag([1.0, 0.5]))

    def test_qubit_average_fidelity_formula(self):
        u = np.diag([1, 1j])
        omega = u.T.reshape(-1)
        m = channel_metrics(np.outer(omega, omega.conj()), np.eye(2))
        # F_pro = |tr U|^2 / 4 = 1/2 -> F_avg = 2/3
        assert m.process_fidelity == pytest.approx(0.5)
        assert m.average_fidelity == pytest.approx(2 / 3)
