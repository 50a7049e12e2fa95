"""Dense complex linear algebra for small multi-qubit registers.

Everything here is plain numpy on state vectors (length 2^n) and square
matrices (2^n x 2^n).  Qubit 0 is the most significant bit of the basis
index, i.e. basis state |b_0 b_1 ... b_{n-1}> has index sum_l b_l 2^(n-1-l).
Dense representations only; the configurable cap keeps register sizes at
desk scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DENSE_QUBIT_CAP = 24

NORM_ATOL = 1e-12
HERM_ATOL = 1e-10
EIG_ZERO_ATOL = 1e-10

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

PAULI_LABELS = ("X", "Y", "Z")
PAULI_BY_LABEL = {"X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}

# Eigenbasis columns of each Pauli: column b is the (-1)^b eigenvector, so
# measuring P with outcome b projects onto column b.
_SQ2 = 1.0 / np.sqrt(2.0)
PAULI_EIGENBASIS = {
    "X": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "Y": np.array([[_SQ2, _SQ2], [1j * _SQ2, -1j * _SQ2]], dtype=complex),
    "Z": np.array([[1, 0], [0, 1]], dtype=complex),
}


def num_qubits_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class PureState:
    """Normalized complex amplitude vector over 2^num_qubits basis states."""

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.num_qubits:
            raise ValueError("amplitude length does not match qubit count")
        if self.num_qubits > DENSE_QUBIT_CAP:
            raise ValueError(f"qubit count {self.num_qubits} above dense cap")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state norm {norm} is not 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "PureState":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        return cls(num_qubits_of(vec.shape[0]), vec)

    def density(self) -> "DensityOperator":
        return DensityOperator(self.num_qubits, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian, unit-trace, positive-semidefinite matrix on 2^num_qubits."""

    num_qubits: int
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        dim = 2**self.num_qubits
        if mat.shape != (dim, dim):
            raise ValueError("matrix shape does not match qubit count")
        if not np.allclose(mat, mat.conj().T, atol=HERM_ATOL):
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > 1e-8:
            raise ValueError(f"trace {tr} is not 1")
        evals = np.linalg.eigvalsh(mat)
        if evals.min() < -1e-8:
            raise ValueError(f"negative eigenvalue {evals.min()}")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "DensityOperator":
        mat = np.asarray(mat, dtype=complex)
        return cls(num_qubits_of(mat.shape[0]), mat)

    def eigen_ensemble(self, tol: float = 1e-12) -> list[tuple[float, np.ndarray]]:
        """Decompose into pure components (weight, vector), dropping tiny weights."""
        evals, evecs = np.linalg.eigh(self.matrix)
        out = []
        for w, v in zip(evals[::-1], evecs.T[::-1]):
            if w > tol:
                out.append((float(w), np.ascontiguousarray(v)))
        total = sum(w for w, _ in out)
        return [(w / total, v) for w, v in out]


@dataclass(frozen=True)
class HermitianOperator:
    dimension: int
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.dimension, self.dimension):
            raise ValueError("matrix shape does not match dimension")
        if not np.allclose(mat, mat.conj().T, atol=HERM_ATOL):
            raise ValueError("operator is not Hermitian")
        object.__setattr__(self, "matrix", mat)


def as_vector(state) -> np.ndarray:
    if isinstance(state, PureState):
        return state.amplitudes
    return np.asarray(state, dtype=complex).reshape(-1)


def as_density_matrix(state) -> np.ndarray:
    if isinstance(state, PureState):
        v = state.amplitudes
        return np.outer(v, v.conj())
    if isinstance(state, DensityOperator):
        return state.matrix
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    return arr


def kron_all(*ops: np.ndarray) -> np.ndarray:
    out = np.array([[1.0 + 0.0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def basis_state(n: int, index: int) -> np.ndarray:
    vec = np.zeros(2**n, dtype=complex)
    vec[index] = 1.0
    return vec


def bell_state() -> PureState:
    """Two-qubit (|00> + |11>)/sqrt(2)."""
    return PureState(2, np.array([_SQ2, 0, 0, _SQ2], dtype=complex))


def pauli_correction(a0: int, a1: int) -> np.ndarray:
    """Recovery unitary X^a0 Z^a1 for two-bit entangling-measurement outcome."""
    return np.linalg.matrix_power(PAULI_X, a0) @ np.linalg.matrix_power(PAULI_Z, a1)


def bsm_projectors() -> list[np.ndarray]:
    """Rank-1 projectors of the Bell-basis measurement, indexed by a = 2*a0 + a1.

    Outcome a = (a0, a1) projects onto (X^a0 Z^a1 x I)|phi+>, the labeling
    under which the classical correction rule reproduces a direct Pauli
    measurement after teleportation.
    """
    phi = bell_state().amplitudes
    projs = []
    for a0 in (0, 1):
        for a1 in (0, 1):
            v = np.kron(pauli_correction(a0, a1), PAULI_I) @ phi
            projs.append(np.outer(v, v.conj()))
    return projs


def apply_unitary(vec: np.ndarray, op: np.ndarray, targets: list[int], n: int) -> np.ndarray:
    """Apply a 2^k x 2^k operator to the listed qubits of an n-qubit vector."""
    k = len(targets)
    if op.shape != (2**k, 2**k):
        raise ValueError("operator shape does not match target count")
    psi = vec.reshape([2] * n)
    psi = np.moveaxis(psi, targets, range(k))
    shape = psi.shape
    psi = op @ psi.reshape(2**k, -1)
    psi = psi.reshape(shape)
    psi = np.moveaxis(psi, range(k), targets)
    return np.ascontiguousarray(psi.reshape(-1))


def embed_operator(op: np.ndarray, targets: list[int], n: int) -> np.ndarray:
    """Expand a k-qubit operator to the full 2^n space (identity elsewhere)."""
    dim = 2**n
    full = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        full[:, col] = apply_unitary(basis_state(n, col), op, targets, n)
    return full


def measure(state, projectors: list[np.ndarray], targets: list[int], rng: np.random.Generator):
    """Sample a projective measurement outcome by Born's rule.

    Returns (outcome index, post-measurement state of the same type as the
    input).  Branch norms below 1e-14 are treated as probability zero.
    """
    if isinstance(state, DensityOperator) or (
        not isinstance(state, PureState) and np.asarray(state).ndim == 2
    ):
        rho = as_density_matrix(state)
        n = num_qubits_of(rho.shape[0])
        probs, branches = [], []
        for proj in projectors:
            full = embed_operator(proj, targets, n)
            branch = full @ rho @ full.conj().T
            p = np.trace(branch).real
            probs.append(max(p, 0.0))
            branches.append(branch)
        probs = np.array(probs)
        probs[probs < 1e-14] = 0.0
        probs = probs / probs.sum()
        outcome = int(rng.choice(len(projectors), p=probs))
        post = branches[outcome] / np.trace(branches[outcome]).real
        if isinstance(state, DensityOperator):
            return outcome, DensityOperator(n, post)
        return outcome, post

    vec = as_vector(state)
    n = num_qubits_of(vec.shape[0])
    branches = [apply_unitary(vec, proj, targets, n) for proj in projectors]
    probs = np.array([np.vdot(b, b).real for b in branches])
    probs[probs < 1e-14] = 0.0
    probs = probs / probs.sum()
    outcome = int(rng.choice(len(projectors), p=probs))
    post = branches[outcome] / np.linalg.norm(branches[outcome])
    if isinstance(state, PureState):
        return outcome, PureState(n, post)
    return outcome, post


def pauli_projectors(label: str) -> list[np.ndarray]:
    basis = PAULI_EIGENBASIS[label]
    return [np.outer(basis[:, b], basis[:, b].conj()) for b in (0, 1)]


def eigh(mat: np.ndarray):
    """Ascending eigenvalues and orthonormal eigenvectors of a Hermitian matrix."""
    mat = np.asarray(mat, dtype=complex)
    defect = np.abs(mat - mat.conj().T).max()
    if defect > 1e-8:
        raise ValueError(f"matrix is not Hermitian (defect {defect})")
    return np.linalg.eigh(mat)


def unitarize(mat: np.ndarray) -> np.ndarray:
    """Map a Hermitian operator to the unitary with sign(eigenvalue) spectrum.

    Eigenvalues within EIG_ZERO_ATOL of zero are sent to +1.
    """
    evals, evecs = eigh(mat)
    signs = np.where(evals < -EIG_ZERO_ATOL, -1.0, 1.0)
    return (evecs * signs) @ evecs.conj().T


def partial_transpose(mat: np.ndarray, qubits, n: int | None = None) -> np.ndarray:
    """Transpose the listed tensor factors of a 2^n x 2^n matrix."""
    mat = np.asarray(mat)
    if n is None:
        n = num_qubits_of(mat.shape[0])
    qubits = list(qubits)
    if any(q < 0 or q >= n for q in qubits):
        raise ValueError("qubit index out of range")
    t = mat.reshape([2] * (2 * n))
    for q in qubits:
        t = np.swapaxes(t, q, n + q)
    return t.reshape(mat.shape)


def tensor(*states: np.ndarray) -> np.ndarray:
    out = np.array([1.0 + 0.0j])
    for s in states:
        out = np.kron(out, np.asarray(s, dtype=complex))
    return out


def partial_trace(rho: np.ndarray, keep: list[int], n: int | None = None) -> np.ndarray:
    """Trace out all qubits except `keep` (result ordered as listed)."""
    rho = np.asarray(rho)
    if n is None:
        n = num_qubits_of(rho.shape[0])
    keep = list(keep)
    drop = [q for q in range(n) if q not in keep]
    t = rho.reshape([2] * (2 * n))
    perm = keep + drop + [n + q for q in keep] + [n + q for q in drop]
    t = t.transpose(perm)
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    t = t.reshape(dk, dd, dk, dd)
    return np.trace(t, axis1=1, axis2=3)


def trace_distance(rho, sigma) -> float:
    diff = as_density_matrix(rho) - as_density_matrix(sigma)
    evals = np.linalg.eigvalsh(diff)
    return float(0.5 * np.abs(evals).sum())


def fidelity(rho, psi) -> float:
    """Overlap <psi|rho|psi> of a state with a pure target."""
    vec = as_vector(psi)
    mat = as_density_matrix(rho)
    val = np.vdot(vec, mat @ vec).real
    return float(min(max(val, 0.0), 1.0))


def haar_random_state(n: int, rng: np.random.Generator) -> PureState:
    """Haar sample via a normalized complex Gaussian vector."""
    dim = 2**n
    vec = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return PureState(n, vec / np.linalg.norm(vec))


def depolarize(rho, p: float, targets: list[int]) -> DensityOperator:
    """Replace the target marginal by the maximally mixed state with weight p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("depolarizing parameter outside [0, 1]")
    mat = as_density_matrix(rho)
    n = num_qubits_of(mat.shape[0])
    keep = [q for q in range(n) if q not in targets]
    k = len(targets)
    if keep:
        rest = partial_trace(mat, keep, n)
        mixed_part = np.kron(np.eye(2**k) / 2**k, rest)
        # reorder (targets..., keep...) back to the original qubit order
        order = list(targets) + keep
        perm = [order.index(q) for q in range(n)]
        mixed_part = _permute_qubits(mixed_part, perm)
    else:
        mixed_part = np.eye(2**k, dtype=complex) / 2**k
    return DensityOperator(n, (1.0 - p) * mat + p * mixed_part)


def _permute_qubits(mat: np.ndarray, perm: list[int]) -> np.ndarray:
    """Reorder qubits of a matrix: output qubit i is input qubit perm[i]."""
    n = len(perm)
    t = mat.reshape([2] * (2 * n))
    t = t.transpose(list(perm) + [n + q for q in perm])
    return t.reshape(mat.shape)


def depolarized_bell_weights(p: float) -> np.ndarray:
    """Bell-basis mixture weights of a pair-depolarized Bell state.

    (1-p) phi+ + p I/4 is Bell-diagonal with weight 1-3p/4 on phi+ and p/4
    on each of the other three Bell states (Bell index a = 2*a0 + a1).
    """
    return np.array([1.0 - 0.75 * p, 0.25 * p, 0.25 * p, 0.25 * p])


def bell_basis_vectors() -> list[np.ndarray]:
    phi = bell_state().amplitudes
    return [
        np.kron(pauli_correction(a0, a1), PAULI_I) @ phi
        for a0 in (0, 1)
        for a1 in (0, 1)
    ]
