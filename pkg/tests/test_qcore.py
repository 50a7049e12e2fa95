import numpy as np
import pytest

from dicert import qcore
from dicert.qcore import (
    PAULI_I,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DensityOperator,
    PureState,
    bell_state,
    bsm_projectors,
    depolarize,
    eigh,
    fidelity,
    haar_random_state,
    measure,
    partial_trace,
    partial_transpose,
    trace_distance,
    unitarize,
)

SQ2 = 1 / np.sqrt(2)


def expectation(op, vec):
    return np.vdot(vec, op @ vec).real


class TestBellState:
    def test_amplitudes(self):
        phi = bell_state()
        assert phi.amplitudes[0] == pytest.approx(SQ2)
        assert phi.amplitudes[3] == pytest.approx(SQ2)
        assert abs(phi.amplitudes[1]) == 0 and abs(phi.amplitudes[2]) == 0

    def test_stabilizers(self):
        phi = bell_state().amplitudes
        assert expectation(np.kron(PAULI_X, PAULI_X), phi) == pytest.approx(1.0)
        assert expectation(np.kron(PAULI_Y, PAULI_Y), phi) == pytest.approx(-1.0)
        assert expectation(np.kron(PAULI_Z, PAULI_Z), phi) == pytest.approx(1.0)


class TestBsmProjectors:
    def test_completeness(self):
        total = sum(bsm_projectors())
        assert np.abs(total - np.eye(4)).max() < 1e-12

    def test_bell_state_gives_outcome_zero(self):
        phi = bell_state().amplitudes
        probs = [expectation(p, phi) for p in bsm_projectors()]
        assert probs[0] == pytest.approx(1.0, abs=1e-12)
        assert sum(probs[1:]) == pytest.approx(0.0, abs=1e-12)

    def test_projectors_are_rank_one_orthonormal(self):
        projs = bsm_projectors()
        for i, p in enumerate(projs):
            assert np.allclose(p @ p, p, atol=1e-12)
            for q in projs[i + 1 :]:
                assert np.abs(p @ q).max() < 1e-12


def anticommutes(a: np.ndarray, b: np.ndarray) -> bool:
    return np.abs(a @ b + b @ a).max() < 1e-12


def teleport_corrected_distribution(tau: np.ndarray, label: str) -> np.ndarray:
    """Exact 3-qubit oracle: teleport tau through phi+, measure P raw, flip
    the bit when the recovery unitary anticommutes with P (matrix check)."""
    rho = np.kron(tau, bell_state().density().matrix)
    pauli = qcore.PAULI_BY_LABEL[label]
    dist = np.zeros(2)
    for a_idx, bsm in enumerate(bsm_projectors()):
        a0, a1 = a_idx >> 1, a_idx & 1
        flip = 1 if anticommutes(pauli, qcore.pauli_correction(a0, a1)) else 0
        for b, meas in enumerate(qcore.pauli_projectors(label)):
            op = np.kron(bsm, meas)
            p = np.trace(op @ rho).real
            dist[b ^ flip] += p
    return dist


class TestTeleportationIdentity:
    def test_plus_state_z_measurement(self):
        plus = np.array([SQ2, SQ2])
        tau = np.outer(plus, plus.conj())
        dist = teleport_corrected_distribution(tau, "Z")
        assert np.abs(dist - 0.5).max() < 1e-12

    def test_random_states_all_paulis(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            psi = haar_random_state(1, rng)
            tau = psi.density().matrix
            for label in ("X", "Y", "Z"):
                direct = np.array(
                    [np.trace(p @ tau).real for p in qcore.pauli_projectors(label)]
                )
                corrected = teleport_corrected_distribution(tau, label)
                assert np.abs(direct - corrected).max() < 1e-12


class TestMeasure:
    def test_z_on_zero_is_deterministic(self):
        rng = np.random.default_rng(0)
        zero = PureState(1, [1, 0])
        outcome, post = measure(zero, qcore.pauli_projectors("Z"), [0], rng)
        assert outcome == 0
        assert np.allclose(post.amplitudes, [1, 0])

    def test_x_on_zero_is_fair(self):
        rng = np.random.default_rng(11)
        projs = qcore.pauli_projectors("X")
        trials = 10**5
        # sample the branch index directly from Born probabilities
        hits = sum(measure(PureState(1, [1, 0]), projs, [0], rng)[0] for _ in range(trials))
        freq = 1 - hits / trials
        sigma = 0.5 / np.sqrt(trials)
        assert abs(freq - 0.5) < 4 * sigma

    def test_bell_pair_z_outcomes_agree(self):
        rng = np.random.default_rng(3)
        projs = qcore.pauli_projectors("Z")
        for _ in range(200):
            o0, post = measure(bell_state(), projs, [0], rng)
            o1, _ = measure(post, projs, [1], rng)
            assert o0 == o1

    def test_density_operator_input(self):
        rng = np.random.default_rng(5)
        rho = depolarize(PureState(1, [1, 0]).density(), 0.5, [0])
        counts = [0, 0]
        for _ in range(2000):
            o, post = measure(rho, qcore.pauli_projectors("Z"), [0], rng)
            counts[o] += 1
            assert isinstance(post, DensityOperator)
        assert counts[0] > counts[1]


class TestUnitarize:
    def test_pauli_is_fixed(self):
        assert np.abs(unitarize(PAULI_Z) - PAULI_Z).max() < 1e-12

    def test_sign_map(self):
        out = unitarize(np.diag([2.0, -3.0]).astype(complex))
        assert np.abs(out - np.diag([1.0, -1.0])).max() < 1e-12

    def test_zero_maps_to_one(self):
        out = unitarize(np.diag([0.0, 0.5]).astype(complex))
        assert np.abs(out - np.eye(2)).max() < 1e-12

    def test_squares_to_identity(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
            h = a + a.conj().T
            u = unitarize(h)
            assert np.abs(u @ u - np.eye(8)).max() < 1e-10


def k_matrix():
    return (
        np.kron(PAULI_X, PAULI_X)
        - np.kron(PAULI_Y, PAULI_Y)
        + np.kron(PAULI_Z, PAULI_Z)
    )


class TestPartialTranspose:
    def test_braiding_operator_partial_transpose_top_eigenvalue(self):
        kt = partial_transpose(k_matrix(), [0])
        evals = np.linalg.eigvalsh(kt)
        assert evals[-1] == pytest.approx(1.0, abs=1e-12)

    def test_empty_subset_is_identity(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        assert np.abs(partial_transpose(m, []) - m).max() == 0

    def test_all_qubits_equals_transpose(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        assert np.abs(partial_transpose(m, [0, 1, 2]) - m.T).max() < 1e-14

    def test_involution_on_any_subset(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        for subset in ([0], [1, 3], [0, 2], [1]):
            twice = partial_transpose(partial_transpose(m, subset), subset)
            assert np.abs(twice - m).max() < 1e-14

    def test_out_of_range_raises(self):
        with pytest.raises(ValueError):
            partial_transpose(np.eye(4), [2])


class TestEighAndDistances:
    def test_eigh_reconstruction(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        h = a + a.conj().T
        evals, evecs = eigh(h)
        recon = (evecs * evals) @ evecs.conj().T
        assert np.abs(recon - h).max() < 1e-10

    def test_eigh_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_trace_distance_self_is_zero(self):
        rng = np.random.default_rng(9)
        psi = haar_random_state(2, rng)
        assert trace_distance(psi.density(), psi.density()) == pytest.approx(0.0, abs=1e-12)

    def test_fidelity_bell(self):
        assert fidelity(bell_state().density(), bell_state()) == pytest.approx(1.0)

    def test_trace_distance_orthogonal_pure(self):
        a = PureState(1, [1, 0]).density()
        b = PureState(1, [0, 1]).density()
        assert trace_distance(a, b) == pytest.approx(1.0)


class TestDepolarizeAndHaar:
    def test_full_depolarization(self):
        rho = depolarize(PureState(1, [1, 0]).density(), 1.0, [0])
        assert np.abs(rho.matrix - np.eye(2) / 2).max() < 1e-12

    def test_partial_target(self):
        rho = depolarize(bell_state().density(), 1.0, [0])
        expected = np.kron(np.eye(2) / 2, partial_trace(bell_state().density().matrix, [1]))
        assert np.abs(rho.matrix - expected).max() < 1e-12

    @pytest.mark.parametrize("n,expected", [(2, 0.8), (3, 2 / 3)])
    def test_haar_marginal_purity(self, n, expected):
        # one-qubit marginal of an n-qubit Haar state:
        # E[tr(rho_A^2)] = (d_A + d_B)/(d_A d_B + 1) with d_A = 2, d_B = 2^(n-1)
        rng = np.random.default_rng(12)
        total = 0.0
        samples = 10**4
        for _ in range(samples):
            psi = haar_random_state(n, rng)
            red = partial_trace(psi.density().matrix, [0])
            total += np.trace(red @ red).real
        mean = total / samples
        assert abs(mean - expected) < 0.005

    def test_depolarized_bell_weights_match_dense(self):
        p = 0.3
        weights = qcore.depolarized_bell_weights(p)
        rho = depolarize(bell_state().density(), p, [0, 1]).matrix
        rebuilt = sum(
            w * np.outer(v, v.conj())
            for w, v in zip(weights, qcore.bell_basis_vectors())
        )
        assert np.abs(rho - rebuilt).max() < 1e-12


class TestTypeInvariants:
    def test_pure_state_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            PureState(1, [1, 1])

    def test_pure_state_rejects_bad_length(self):
        with pytest.raises(ValueError):
            PureState(2, [1, 0])

    def test_density_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            DensityOperator(1, np.array([[0.5, 0.5], [0.0, 0.5]]))

    def test_density_rejects_negative(self):
        with pytest.raises(ValueError):
            DensityOperator(1, np.array([[1.5, 0], [0, -0.5]]))

    def test_pauli_projectors_complete(self):
        for label in ("X", "Y", "Z"):
            total = sum(qcore.pauli_projectors(label))
            assert np.abs(total - np.eye(2)).max() < 1e-12
