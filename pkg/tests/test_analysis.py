import numpy as np
import pytest

from dicert import qcore
from dicert.analysis import (
    attack_expected_value,
    bell_extraction_report,
    completeness_sweep,
    exact_weighted_mean,
    extraction_loglog_slope,
    gap_study,
    gap_study_summary,
    gap_study_to_csv,
    pauli_isometry,
    soundness_sweep,
    swap_isometry,
    swap_isometry_unitary,
    transpose_attack_experiment,
    verify_extraction,
)
from dicert.network import IdealStrategy, NetworkModel, TransposedStrategy
from dicert.observables import (
    braiding_pair_spec,
    build_observable,
    random_basis_overlap_spec,
)


class TestSwapIsometry:
    def test_isometry_property(self):
        rng = np.random.default_rng(0)
        v = pauli_isometry()
        assert np.abs(v.conj().T @ v - np.eye(2)).max() < 1e-10
        # also for unitarized random Hermitian inputs
        mats = []
        for _ in range(3):
            a = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            mats.append(qcore.unitarize(a + a.conj().T))
        v2 = swap_isometry(*mats)
        assert np.abs(v2.conj().T @ v2 - np.eye(2)).max() < 1e-10

    def test_rejects_non_unitary(self):
        with pytest.raises(ValueError):
            swap_isometry(np.diag([2.0, 1.0]), qcore.PAULI_X, qcore.PAULI_Y)

    def test_ideal_bell_extraction(self):
        rep = bell_extraction_report(0.0)
        assert rep.fidelity >= 1 - 1e-10
        assert rep.intertwining_residual < 1e-10

    def test_intertwining_marks_conjugation_register(self):
        v = pauli_isometry()
        phi = qcore.bell_state().amplitudes
        both = np.kron(v, v)
        for lab in ("X", "Y", "Z"):
            pauli = qcore.PAULI_BY_LABEL[lab]
            lhs = np.kron(v @ pauli, v) @ phi
            mark = np.kron(pauli, qcore.PAULI_Z if lab == "Y" else np.eye(2))
            rhs = np.kron(np.kron(np.eye(2), mark), np.eye(8)) @ (both @ phi)
            assert np.linalg.norm(lhs - rhs) < 1e-10

    def test_depolarizing_robustness_slope(self):
        grid = [1e-4, 1e-3, 1e-2, 5e-2]
        slope = extraction_loglog_slope(grid)
        assert 0.3 <= slope <= 0.7

    def test_deficit_tracks_fidelity(self):
        rep = bell_extraction_report(0.02)
        assert rep.fidelity == pytest.approx(1 - 0.75 * 0.02, abs=1e-9)
        assert rep.deficit == pytest.approx(np.sqrt(0.75 * 0.02), abs=1e-6)


class TestExtractionChannel:
    def test_ideal_two_party(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(2))
        model = NetworkModel(2, psi, 0.0)
        rep = verify_extraction(model, random_basis_overlap_spec(psi.amplitudes))
        assert rep.flag_mass >= 1 - 1e-9
        assert rep.deviation <= 1e-9

    def test_ideal_single_party(self):
        psi = qcore.haar_random_state(1, np.random.default_rng(3))
        model = NetworkModel(1, psi, 0.0)
        rep = verify_extraction(model, random_basis_overlap_spec(psi.amplitudes))
        assert rep.flag_mass >= 1 - 1e-9
        assert rep.deviation <= 1e-9

    def test_noisy_pairs_keep_flag_mass(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(4))
        model = NetworkModel(2, psi, 0.01)
        rep = verify_extraction(model, random_basis_overlap_spec(psi.amplitudes))
        assert rep.flag_mass >= 0.9

    def test_deviation_monotone_in_noise(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(5))
        spec = random_basis_overlap_spec(psi.amplitudes)
        devs = []
        for p in (0.0, 0.005, 0.01, 0.02):
            rep = verify_extraction(NetworkModel(2, psi, p), spec)
            devs.append(rep.deviation)
        assert all(a <= b + 1e-12 for a, b in zip(devs, devs[1:]))

    def test_misaligned_conjugation_collapses_flags(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(6))
        spec = random_basis_overlap_spec(psi.amplitudes)
        one = NetworkModel(2, psi, 0.0, [TransposedStrategy(), IdealStrategy()])
        assert verify_extraction(one, spec).flag_mass < 1e-9
        both = NetworkModel(2, psi, 0.0, [TransposedStrategy()] * 2)
        rep = verify_extraction(both, spec)
        assert rep.flag_mass >= 1 - 1e-9
        assert rep.deviation <= 1e-9

    def test_three_parties_rejected(self):
        psi = qcore.haar_random_state(3, np.random.default_rng(7))
        model = NetworkModel(3, psi, 0.0)
        with pytest.raises(ValueError):
            verify_extraction(model, random_basis_overlap_spec(psi.amplitudes))

    def test_exact_weighted_mean_matches_dense(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(8))
        model = NetworkModel(2, psi, 0.0)
        spec = braiding_pair_spec()
        got = exact_weighted_mean(model, spec)
        target = np.vdot(psi.amplitudes, build_observable(spec) @ psi.amplitudes).real
        assert got == pytest.approx(target, abs=1e-12)


class TestAttackExperiment:
    def test_no_flip_baseline(self):
        rng = np.random.default_rng(9)
        rows = transpose_attack_experiment(3, set(), 20000, rng)
        for row in rows:
            assert abs(row["v_II"] - 0.0) < 4 * max(row["stderr"], 1e-9)

    def test_single_flip_straddles_first_link(self):
        rng = np.random.default_rng(10)
        rows = transpose_attack_experiment(3, {0}, 20000, rng)
        assert rows[0]["v_II"] >= 2 / 3 - 0.05
        assert abs(rows[1]["v_II"]) < 4 * max(rows[1]["stderr"], 1e-9)
        assert attack_expected_value(3, {0}, 0) == pytest.approx(2 / 3)
        assert attack_expected_value(3, {0}, 1) == 0.0

    def test_aligned_pair_is_blind(self):
        rng = np.random.default_rng(11)
        rows = transpose_attack_experiment(3, {0, 1}, 20000, rng)
        assert abs(rows[0]["v_II"]) < 4 * max(rows[0]["stderr"], 1e-9)
        assert rows[1]["v_II"] >= 2 / 3 - 0.05

    def test_default_round_planner(self):
        rng = np.random.default_rng(12)
        rows = transpose_attack_experiment(2, set(), None, rng)
        assert rows[0]["samples"] == 7369  # hoeffding_samples(2, 0.05, 0.01)

    def test_single_party_rejected(self):
        with pytest.raises(ValueError):
            transpose_attack_experiment(1, set(), 10, np.random.default_rng(0))


class TestSweeps:
    def test_completeness_and_soundness_endpoints(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(13)).amplitudes
        comp = completeness_sweep(
            psi, [0.0], eps_prime=0.45, delta=0.1, repetitions=4, rounds=150000, seed=5
        )
        assert comp.rates[0] >= 0.75
        sound = soundness_sweep(
            psi, [1.0], eps_prime=0.3, delta=0.1, repetitions=4, rounds=60000, seed=6
        )
        assert sound.rates[0] == 0.0

    def test_reproducible_and_csv(self, tmp_path):
        psi = qcore.haar_random_state(2, np.random.default_rng(14)).amplitudes
        a = completeness_sweep(psi, [0.0, 0.05], 0.45, 0.1, 2, 40000, seed=9)
        b = completeness_sweep(psi, [0.0, 0.05], 0.45, 0.1, 2, 40000, seed=9)
        assert a.rates == b.rates and a.mean_v_III == b.mean_v_III
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        a.to_csv(pa)
        b.to_csv(pb)
        assert pa.read_bytes() == pb.read_bytes()
        header = pa.read_text().splitlines()[0]
        assert header == "param,rate,stderr,mean_vI,mean_vII,mean_vIII,N,seed"

    def test_threaded_matches_sequential(self):
        psi = qcore.haar_random_state(2, np.random.default_rng(15)).amplitudes
        a = completeness_sweep(psi, [0.0, 0.1], 0.45, 0.1, 2, 30000, seed=4)
        b = completeness_sweep(psi, [0.0, 0.1], 0.45, 0.1, 2, 30000, seed=4, threads=2)
        assert a.rates == b.rates and a.mean_v_I == b.mean_v_I


class TestGapStudy:
    def test_rows_and_summary(self, tmp_path):
        rng = np.random.default_rng(16)
        rows = gap_study([2, 3], trials=5, rng=rng)
        assert len(rows) == 10
        for row in rows:
            assert row.eigvec_residual < 1e-10
            assert row.gap_overlap > 0
        summary = gap_study_summary(rows)
        assert summary[2]["min_gap_L_n2"] > 0
        path = tmp_path / "gaps.csv"
        gap_study_to_csv(rows, path, seed=16)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("n,trial,gap_L")
        assert len(lines) == 11

    def test_sampled_mode_keeps_unit_eigenvector(self):
        rng = np.random.default_rng(17)
        rows = gap_study([5], trials=2, rng=rng, exact_cap=4, samples=20)
        for row in rows:
            assert row.eigvec_residual < 1e-10
