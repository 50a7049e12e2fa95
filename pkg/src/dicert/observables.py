"""Certification observables built from randomized Pauli measurement schemes.

An observable is specified by a distribution over Pauli basis strings plus a
bounded weighting of the outcomes; `build_observable` materializes it as a
dense Hermitian matrix.  The shadow-overlap family (per-target-state fidelity
witnesses and their basis-rotated/basis-averaged variants) is constructed
here as well.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dicert import qcore
from dicert.qcore import PAULI_EIGENBASIS, PAULI_LABELS, as_vector

DENSE_OBSERVABLE_CAP = 10
PROB_ATOL = 1e-12
ZERO_BRANCH_ATOL = 1e-14
GAP_DEGENERACY_TOL = 1e-9

PauliString = tuple[str, ...]


def _check_labels(labels: Sequence[str]) -> PauliString:
    labels = tuple(labels)
    for lab in labels:
        if lab not in PAULI_LABELS:
            raise ValueError(f"unknown Pauli label {lab!r}")
    return labels


@dataclass(frozen=True)
class PauliBasisString:
    labels: PauliString

    def __post_init__(self):
        object.__setattr__(self, "labels", _check_labels(self.labels))

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class ProductDistribution:
    """Independent per-party marginals over (X, Y, Z), shape (n, 3)."""

    marginals: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.marginals, dtype=float)
        if m.ndim != 2 or m.shape[1] != 3:
            raise ValueError("marginals must have shape (n, 3)")
        if (m < -PROB_ATOL).any():
            raise ValueError("negative marginal probability")
        if np.abs(m.sum(axis=1) - 1.0).max() > PROB_ATOL:
            raise ValueError("marginals must sum to 1")
        m = np.clip(m, 0.0, None)
        m.setflags(write=False)
        object.__setattr__(self, "marginals", m)

    @property
    def n(self) -> int:
        return self.marginals.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "ProductDistribution":
        return cls(np.full((n, 3), 1.0 / 3.0))

    def support(self):
        for idx in np.ndindex(*([3] * self.n)):
            prob = float(np.prod([self.marginals[l, i] for l, i in enumerate(idx)]))
            if prob > 0.0:
                yield tuple(PAULI_LABELS[i] for i in idx), prob

    def sample(self, rng: np.random.Generator) -> PauliString:
        return tuple(
            PAULI_LABELS[rng.choice(3, p=self.marginals[l])] for l in range(self.n)
        )


@dataclass(frozen=True)
class ExplicitDistribution:
    """Arbitrary (possibly correlated) table over basis strings."""

    strings: tuple[PauliString, ...]
    probs: np.ndarray

    def __post_init__(self):
        strings = tuple(_check_labels(s) for s in self.strings)
        probs = np.asarray(self.probs, dtype=float)
        if len(strings) != probs.shape[0]:
            raise ValueError("strings/probs length mismatch")
        if len({len(s) for s in strings}) > 1:
            raise ValueError("strings must share one length")
        if (probs < -PROB_ATOL).any():
            raise ValueError("negative probability")
        if abs(probs.sum() - 1.0) > PROB_ATOL:
            raise ValueError("probabilities must sum to 1")
        probs = np.clip(probs, 0.0, None)
        probs.setflags(write=False)
        object.__setattr__(self, "strings", strings)
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return len(self.strings[0])

    def support(self):
        for s, p in zip(self.strings, self.probs):
            if p > 0.0:
                yield s, float(p)

    def sample(self, rng: np.random.Generator) -> PauliString:
        return self.strings[rng.choice(len(self.strings), p=self.probs)]


@dataclass(frozen=True)
class GeneratorDistribution:
    """Sampler callback; not enumerable, so dense observables are unavailable."""

    n: int
    sampler: Callable[[np.random.Generator], PauliString]

    def sample(self, rng: np.random.Generator) -> PauliString:
        return _check_labels(self.sampler(rng))


@dataclass(frozen=True)
class WeightingFunction:
    """Outcome weighting omega(bits | basis string) with a declared bound."""

    evaluator: Callable[[tuple[int, ...], PauliString], float]
    bound: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, bits: Sequence[int], labels: Sequence[str]) -> float:
        return float(self.evaluator(tuple(bits), tuple(labels)))

    def table(self, labels: PauliString) -> np.ndarray:
        """All 2^n weights for one basis string, outcome bits as the index."""
        labels = tuple(labels)
        cached = self._cache.get(labels)
        if cached is None:
            n = len(labels)
            cached = np.array(
                [
                    self.evaluator(tuple((idx >> (n - 1 - l)) & 1 for l in range(n)), labels)
                    for idx in range(2**n)
                ],
                dtype=float,
            )
            self._cache[labels] = cached
        return cached

    def validate_bound(self, distribution, max_entries: int = 10**6) -> None:
        """Exhaustively spot-check |omega| <= bound over an enumerable space."""
        if not hasattr(distribution, "support"):
            return
        entries = 0
        for labels, _ in distribution.support():
            entries += 2 ** len(labels)
            if entries > max_entries:
                return
            if np.abs(self.table(labels)).max() > self.bound + 1e-9:
                raise ValueError("weight exceeds the declared bound")


@dataclass(frozen=True)
class ObservableSpec:
    n: int
    distribution: ProductDistribution | ExplicitDistribution | GeneratorDistribution
    weight: WeightingFunction

    def __post_init__(self):
        dist_n = getattr(self.distribution, "n", None)
        if dist_n is not None and dist_n != self.n:
            raise ValueError("distribution party count does not match spec")
        if self.weight.bound <= 0:
            raise ValueError("weight bound must be positive")


def basis_unitary(labels: Sequence[str]) -> np.ndarray:
    """Tensor product of per-qubit eigenbases; column b is outcome string b."""
    return qcore.kron_all(*(PAULI_EIGENBASIS[lab] for lab in labels))


def basis_probabilities(state, labels: Sequence[str]) -> np.ndarray:
    """Born probabilities of all 2^n outcomes for a product Pauli measurement."""
    u = basis_unitary(labels)
    if isinstance(state, qcore.DensityOperator) or (
        not isinstance(state, qcore.PureState) and np.asarray(state).ndim == 2
    ):
        rho = qcore.as_density_matrix(state)
        probs = np.einsum("ij,jk,ki->i", u.conj().T, rho, u).real
    else:
        probs = np.abs(u.conj().T @ as_vector(state)) ** 2
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def build_observable(spec: ObservableSpec, cap: int = DENSE_OBSERVABLE_CAP) -> np.ndarray:
    """Dense matrix E_P[ sum_b omega(b|P) proj(b, P) ] of a measurement scheme."""
    if spec.n > cap:
        raise ValueError(f"party count {spec.n} above dense cap {cap}")
    if not hasattr(spec.distribution, "support"):
        raise ValueError("distribution is not enumerable")
    dim = 2**spec.n
    out = np.zeros((dim, dim), dtype=complex)
    for labels, prob in spec.distribution.support():
        u = basis_unitary(labels)
        w = spec.weight.table(labels)
        out += prob * ((u * w) @ u.conj().T)
    return 0.5 * (out + out.conj().T)


def braiding_check_operator() -> np.ndarray:
    """Two-qubit XX - YY + ZZ; top eigenvalue 3 on the Bell pair, and 1 after
    a single-sided partial transpose, the gap behind the braiding test."""
    return (
        np.kron(qcore.PAULI_X, qcore.PAULI_X)
        - np.kron(qcore.PAULI_Y, qcore.PAULI_Y)
        + np.kron(qcore.PAULI_Z, qcore.PAULI_Z)
    )


def braiding_weight() -> WeightingFunction:
    """Pair weighting 1 - (-1)^[P=Y] (-1)^(b0+b1); with the uniform
    {XX, YY, ZZ} distribution it builds I - (XX - YY + ZZ)/3."""

    def evaluator(bits, labels):
        sign = -1.0 if labels[0] == "Y" else 1.0
        return 1.0 - sign * (-1.0) ** (bits[0] + bits[1])

    return WeightingFunction(evaluator, bound=2.0)


def braiding_pair_spec() -> ObservableSpec:
    dist = ExplicitDistribution(
        (("X", "X"), ("Y", "Y"), ("Z", "Z")), np.array([1, 1, 1]) / 3.0
    )
    return ObservableSpec(2, dist, braiding_weight())


def conditional_state(psi, k: int, bits: Sequence[int], labels: Sequence[str]):
    """Normalized single-qubit state of qubit k after projecting the others.

    Projects `psi` onto the product eigenstate |bits, labels> of the
    remaining qubits.  Returns (vector, flag); flag is False and the vector
    zero when the projection norm is below 1e-14 ("0 otherwise" rule).
    """
    vec = as_vector(psi)
    n = qcore.num_qubits_of(vec.shape[0])
    bits, labels = tuple(bits), tuple(labels)
    if len(bits) != n - 1 or len(labels) != n - 1:
        raise ValueError("need one bit and one label per non-target qubit")
    others = [q for q in range(n) if q != k]
    psi_t = np.moveaxis(vec.reshape([2] * n), k, n - 1)
    for bit, lab in zip(bits, labels):
        e = PAULI_EIGENBASIS[lab][:, bit].conj()
        psi_t = np.tensordot(e, psi_t, axes=([0], [0]))
    sub = psi_t.reshape(2)
    norm = np.linalg.norm(sub)
    if norm < ZERO_BRANCH_ATOL:
        return np.zeros(2, dtype=complex), False
    return sub / norm, True


def shadow_weight_single(psi, k: int, bits: Sequence[int], labels: Sequence[str]) -> float:
    """Single-qubit shadow weight for target qubit k.

    <c|(3 (I + (-1)^(b_k) sigma_P)/2 - I)|c> on the conditional state c of
    qubit k, always in [-1, 2]; zero-norm branches contribute 0.
    """
    bits, labels = tuple(bits), tuple(labels)
    rest_bits = bits[:k] + bits[k + 1 :]
    rest_labels = labels[:k] + labels[k + 1 :]
    cond, ok = conditional_state(psi, k, rest_bits, rest_labels)
    if not ok:
        return 0.0
    e = PAULI_EIGENBASIS[labels[k]][:, bits[k]]
    overlap = abs(np.vdot(e, cond)) ** 2
    return float(3.0 * overlap - 1.0)


def shadow_weight_average(psi, bits: Sequence[int], labels: Sequence[str]) -> float:
    """Mean of the per-qubit shadow weights; bound 2."""
    n = len(tuple(labels))
    return float(np.mean([shadow_weight_single(psi, k, bits, labels) for k in range(n)]))


def averaged_shadow_weighting(psi) -> WeightingFunction:
    vec = as_vector(psi).copy()
    return WeightingFunction(lambda bits, labels: shadow_weight_average(vec, bits, labels), bound=2.0)


def random_basis_overlap_spec(psi) -> ObservableSpec:
    """Uniform product basis distribution + averaged shadow weights.

    The induced observable is the basis-averaged overlap witness for `psi`;
    product form makes it runnable with local randomness only.
    """
    vec = as_vector(psi)
    n = qcore.num_qubits_of(vec.shape[0])
    return ObservableSpec(n, ProductDistribution.uniform(n), averaged_shadow_weighting(vec))


def shadow_overlap_spec(psi) -> ObservableSpec:
    """Correlated scheme that probes one uniformly chosen qubit in a random
    basis while the rest are read in Z; needs shared randomness."""
    vec = as_vector(psi)
    n = qcore.num_qubits_of(vec.shape[0])
    strings: list[PauliString] = [tuple("Z") * n]
    probs = [1.0 / 3.0]
    for k in range(n):
        for lab in ("X", "Y"):
            s = ["Z"] * n
            s[k] = lab
            strings.append(tuple(s))
            probs.append(1.0 / (3.0 * n))

    def evaluator(bits, labels):
        non_z = [l for l, lab in enumerate(labels) if lab != "Z"]
        if len(non_z) == 1:
            return shadow_weight_single(vec, non_z[0], bits, labels)
        if len(non_z) == 0:
            return shadow_weight_average(vec, bits, labels)
        raise ValueError("string outside the shadow-overlap support")

    dist = ExplicitDistribution(tuple(strings), np.array(probs))
    return ObservableSpec(n, dist, WeightingFunction(evaluator, bound=2.0))


def rotated_shadow_overlap(psi, labels: Sequence[str]) -> np.ndarray:
    """Overlap witness of `psi` in a fixed product basis.

    Mean over target qubits k of the projector onto
    span{ |b, labels^(k)> (x) |conditional state of k> }.  Top eigenvector is
    psi with eigenvalue 1; all eigenvalues lie in [0, 1].
    """
    vec = as_vector(psi)
    n = qcore.num_qubits_of(vec.shape[0])
    labels = tuple(labels)
    if len(labels) != n:
        raise ValueError("need one label per qubit")
    u = basis_unitary(labels)
    rotated = (u.conj().T @ vec).reshape([2] * n)
    dim = 2**n
    accum = np.zeros((dim, dim), dtype=complex)
    for k in range(n):
        # amplitudes grouped as (other-qubit outcomes, qubit k)
        m = np.moveaxis(rotated, k, n - 1).reshape(-1, 2)
        norms = np.linalg.norm(m, axis=1)
        ok = norms >= ZERO_BRANCH_ATOL
        conds = np.zeros_like(m)
        conds[ok] = m[ok] / norms[ok, None]
        # block term |b><b| (x) |cond_b><cond_b| on (others, k), then k back
        blocks = np.einsum("bi,bj->bij", conds, conds.conj())
        op = np.zeros((dim // 2, 2, dim // 2, 2), dtype=complex)
        idx = np.arange(dim // 2)
        op[idx, :, idx, :] = blocks
        op = op.reshape([2] * (2 * n))
        op = np.moveaxis(op, n - 1, k)
        op = np.moveaxis(op, 2 * n - 1, n + k)
        accum += op.reshape(dim, dim)
    accum /= n
    return u @ accum @ u.conj().T


def shadow_overlap_observable(psi) -> np.ndarray:
    """All-Z-basis overlap witness (the default-basis special case)."""
    n = qcore.num_qubits_of(as_vector(psi).shape[0])
    return rotated_shadow_overlap(psi, ("Z",) * n)


def averaged_overlap_observable(
    psi,
    mode: str = "exact",
    samples: int | None = None,
    rng: np.random.Generator | None = None,
    exact_cap: int = 6,
) -> tuple[np.ndarray, float]:
    """Basis-averaged overlap witness; returns (matrix, standard error).

    "exact" sums all 3^n rotated witnesses (n <= exact_cap); "sampled"
    averages `samples` uniformly drawn basis strings and reports the
    entrywise-mean standard error of that Monte-Carlo average.
    """
    vec = as_vector(psi)
    n = qcore.num_qubits_of(vec.shape[0])
    dim = 2**n
    if mode == "exact":
        if n > exact_cap:
            raise ValueError(f"exact mode capped at {exact_cap} qubits")
        out = np.zeros((dim, dim), dtype=complex)
        for idx in np.ndindex(*([3] * n)):
            labels = tuple(PAULI_LABELS[i] for i in idx)
            out += rotated_shadow_overlap(vec, labels)
        return out / 3**n, 0.0
    if mode == "sampled":
        if not samples or samples < 2:
            raise ValueError("sampled mode needs samples >= 2")
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        acc = np.zeros((dim, dim), dtype=complex)
        acc_sq = np.zeros((dim, dim), dtype=float)
        for _ in range(samples):
            labels = tuple(PAULI_LABELS[i] for i in rng.integers(0, 3, size=n))
            term = rotated_shadow_overlap(vec, labels)
            acc += term
            acc_sq += np.abs(term) ** 2
        mean = acc / samples
        var = acc_sq / samples - np.abs(mean) ** 2
        stderr = float(np.sqrt(np.clip(var, 0.0, None).mean() / samples))
        return mean, stderr
    raise ValueError(f"unknown mode {mode!r}")


def spectral_gap(mat: np.ndarray, degeneracy_tol: float = GAP_DEGENERACY_TOL) -> float:
    """Top eigenvalue minus the largest eigenvalue strictly below it.

    Eigenvalues within `degeneracy_tol` of the top are collapsed into it; a
    fully degenerate spectrum has gap 0 by convention.
    """
    evals, _ = qcore.eigh(mat)
    if evals.shape[0] < 2:
        raise ValueError("spectral gap needs dimension >= 2")
    top = evals[-1]
    below = evals[evals < top - degeneracy_tol]
    if below.shape[0] == 0:
        return 0.0
    return float(top - below[-1])


def export_matrix_csv(mat: np.ndarray, path) -> None:
    """Row-major CSV with alternating re,im cells for external cross-checks."""
    mat = np.asarray(mat, dtype=complex)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in mat:
            cells = []
            for val in row:
                cells.append(repr(float(val.real)))
                cells.append(repr(float(val.imag)))
            writer.writerow(cells)


def import_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = []
        for rec in csv.reader(fh):
            vals = [float(x) for x in rec]
            rows.append([complex(re, im) for re, im in zip(vals[::2], vals[1::2])])
    return np.array(rows, dtype=complex)
