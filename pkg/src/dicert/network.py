"""Physical-experiment model: registers, resource states, device strategies.

The reference network for n parties holds an n-qubit target spread over
registers T_l, a Bell pair (S_l, B_l) per party, and a Bell pair between
neighboring link registers (RR_l, RL_{l+1}).  Main-party settings select a
local observable on S_l (settings 0-5) or an entangling two-register
measurement (SWAP_RIGHT / SWAP_LEFT on a link register and S_l, TELEPORT on
T_l and S_l); auxiliary parties measure X, Y or Z.

Two round engines are provided: `full` builds the global state and measures
it (any strategy, including adaptive), `factored` decomposes a round into
independent resource clusters and treats teleportation algebraically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dicert import qcore
from dicert.qcore import (
    PAULI_I,
    PAULI_LABELS,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DensityOperator,
    PureState,
    as_density_matrix,
)

# main-party settings: 0..5 select a CHSH observable on S_l
SWAP_RIGHT = 6
SWAP_LEFT = 7
TELEPORT = 8
MAIN_SETTINGS = tuple(range(9))
SETTING_NAMES = {SWAP_RIGHT: "swap_right", SWAP_LEFT: "swap_left", TELEPORT: "teleport"}

# antic[a][p]: 1 iff the recovery unitary X^a0 Z^a1 (a = 2*a0 + a1)
# anticommutes with Pauli p (0=X, 1=Y, 2=Z)
ANTICOMMUTES = np.array(
    [[0, 0, 0], [1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=np.int8
)

FULL_ENGINE_QUBIT_CAP = qcore.DENSE_QUBIT_CAP


class ConfigError(ValueError):
    """Raised on malformed model / run configurations; names the bad key."""


def chsh_observable(x: int) -> np.ndarray:
    """Ideal main-party observable for settings 0..5."""
    s = (-1.0) ** x
    if x in (0, 1):
        return (PAULI_X + s * PAULI_Z) / np.sqrt(2)
    if x in (2, 3):
        return (PAULI_X + s * PAULI_Y) / np.sqrt(2)
    if x in (4, 5):
        return (PAULI_Z + s * PAULI_Y) / np.sqrt(2)
    raise ValueError(f"setting {x} has no single-qubit observable")


def observable_projectors(obs: np.ndarray) -> list[np.ndarray]:
    """(I +/- O)/2 for a +-1-valued observable; outcome b has eigenvalue (-1)^b."""
    return [(np.eye(obs.shape[0]) + s * obs) / 2.0 for s in (1.0, -1.0)]


def aux_pauli_projectors(y: int) -> list[np.ndarray]:
    return qcore.pauli_projectors(PAULI_LABELS[y])


@dataclass(frozen=True)
class IdealStrategy:
    kind: str = field(default="ideal", init=False)

    def main_elements(self, x: int) -> list[np.ndarray]:
        if x < 6:
            return observable_projectors(chsh_observable(x))
        return qcore.bsm_projectors()

    def aux_elements(self, y: int) -> list[np.ndarray]:
        return aux_pauli_projectors(y)


@dataclass(frozen=True)
class TransposedStrategy:
    """Local conjugation of every device operator (the Y-sign attack).

    CHSH statistics are untouched because the pair state and the Bell
    projectors are real, but any braiding link into an unconjugated
    neighbor flips the YY correlator.
    """

    kind: str = field(default="transposed", init=False)

    def main_elements(self, x: int) -> list[np.ndarray]:
        return [e.conj() for e in IdealStrategy().main_elements(x)]

    def aux_elements(self, y: int) -> list[np.ndarray]:
        return [e.conj() for e in aux_pauli_projectors(y)]


@dataclass(frozen=True)
class RotatedStrategy:
    """Auxiliary measurements tilted by a fixed rotation about Y."""

    angle: float
    kind: str = field(default="rotated", init=False)

    def _rotation(self) -> np.ndarray:
        c, s = np.cos(self.angle / 2), np.sin(self.angle / 2)
        return np.array([[c, -s], [s, c]], dtype=complex)

    def main_elements(self, x: int) -> list[np.ndarray]:
        return IdealStrategy().main_elements(x)

    def aux_elements(self, y: int) -> list[np.ndarray]:
        r = self._rotation()
        return [r @ e @ r.conj().T for e in aux_pauli_projectors(y)]


@dataclass(frozen=True)
class GarbageStrategy:
    """Arbitrary fixed POVMs, each complete on the setting's registers."""

    main_povms: dict
    aux_povms: dict
    kind: str = field(default="garbage", init=False)

    def __post_init__(self):
        for x, elems in self.main_povms.items():
            _check_povm(elems, 4 if x >= 6 else 2)
        for _, elems in self.aux_povms.items():
            _check_povm(elems, 2)

    def main_elements(self, x: int) -> list[np.ndarray]:
        if x in self.main_povms:
            return [np.asarray(e, dtype=complex) for e in self.main_povms[x]]
        return IdealStrategy().main_elements(x)

    def aux_elements(self, y: int) -> list[np.ndarray]:
        if y in self.aux_povms:
            return [np.asarray(e, dtype=complex) for e in self.aux_povms[y]]
        return aux_pauli_projectors(y)


@dataclass(frozen=True)
class AdaptiveStrategy:
    """Transcript-dependent devices; full engine only, sequential rounds.

    `selector(history, party, role, setting)` returns the POVM elements to
    use this round on the setting's designated register ("main" role gets
    the main setting, "aux" the auxiliary one).
    """

    selector: Callable
    name: str = "custom"
    kind: str = field(default="adaptive", init=False)

    def main_elements(self, x: int, history=()) -> list[np.ndarray]:
        elems = self.selector(history, "main", x)
        return elems if elems is not None else IdealStrategy().main_elements(x)

    def aux_elements(self, y: int, history=()) -> list[np.ndarray]:
        elems = self.selector(history, "aux", y)
        return elems if elems is not None else aux_pauli_projectors(y)


def _check_povm(elems, dim: int) -> None:
    total = np.zeros((dim, dim), dtype=complex)
    for e in elems:
        e = np.asarray(e, dtype=complex)
        if e.shape != (dim, dim):
            raise ValueError("POVM element has the wrong dimension")
        if np.abs(e - e.conj().T).max() > 1e-10:
            raise ValueError("POVM element is not Hermitian")
        if np.linalg.eigvalsh(e).min() < -1e-10:
            raise ValueError("POVM element is not positive")
        total += e
    if np.abs(total - np.eye(dim)).max() > 1e-10:
        raise ValueError("POVM does not sum to identity")


def alternating_conjugation_selector(history, role, setting):
    """Built-in adaptive adversary: conjugate all devices on odd rounds."""
    if len(history) % 2 == 0:
        return None
    if role == "main":
        return TransposedStrategy().main_elements(setting)
    return TransposedStrategy().aux_elements(setting)


ADAPTIVE_PRESETS = {"alternating_conjugation": alternating_conjugation_selector}

PROJECTIVE_KINDS = ("ideal", "transposed", "rotated")


class SystemLayout:
    """Global qubit indices: T_0..T_{n-1}, then (S_l, B_l) pairs, then link
    pairs (RR_l, RL_{l+1}); boundary parties carry a single link register."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("need at least one party")
        self.n = n
        self.total_qubits = 3 * n + 2 * max(n - 1, 0)

    def t(self, l: int) -> int:
        return l

    def s(self, l: int) -> int:
        return self.n + 2 * l

    def b(self, l: int) -> int:
        return self.n + 2 * l + 1

    def link_right(self, l: int) -> int:
        if not 0 <= l < self.n - 1:
            raise ValueError(f"party {l} has no right link register")
        return 3 * self.n + 2 * l

    def link_left(self, l: int) -> int:
        if not 1 <= l <= self.n - 1:
            raise ValueError(f"party {l} has no left link register")
        return 3 * self.n + 2 * (l - 1) + 1

    def pair_count(self) -> int:
        return 2 * self.n - 1 if self.n > 1 else 1

    def main_registers(self, l: int, x: int):
        """Qubits measured by main party l under setting x; None marks a
        missing boundary link register (completed by a |0> ancilla)."""
        if x < 6:
            return [self.s(l)]
        if x == TELEPORT:
            return [self.t(l), self.s(l)]
        if x == SWAP_RIGHT:
            first = self.link_right(l) if l < self.n - 1 else None
        else:
            first = self.link_left(l) if l > 0 else None
        return [first, self.s(l)]


@dataclass
class NetworkModel:
    """Resource layout plus per-party device assignment."""

    n: int
    target: DensityOperator
    bell_noise: np.ndarray
    strategies: list

    def __init__(self, n, target, bell_noise=0.0, strategies=None):
        if n < 1:
            raise ValueError("need at least one party")
        self.n = n
        self.layout = SystemLayout(n)
        if isinstance(target, PureState):
            target = target.density()
        if target.num_qubits != n:
            raise ValueError("target qubit count must equal the party count")
        self.target = target
        pairs = 2 * n - 1 if n > 1 else 1
        noise = np.asarray(bell_noise, dtype=float)
        if noise.ndim == 0:
            noise = np.full(pairs, float(noise))
        if noise.shape != (pairs,):
            raise ValueError(f"bell_noise needs 1 or {pairs} entries")
        if (noise < 0).any() or (noise > 1).any():
            raise ValueError("depolarizing parameters must lie in [0, 1]")
        self.bell_noise = noise
        if strategies is None:
            strategies = [IdealStrategy() for _ in range(n)]
        if len(strategies) != n:
            raise ValueError("need one strategy per party")
        self.strategies = list(strategies)

    def pair_noise(self, l: int) -> float:
        """Depolarizing parameter of the (S_l, B_l) pair."""
        return float(self.bell_noise[l])

    def link_noise(self, l: int) -> float:
        """Depolarizing parameter of the link pair between parties l, l+1."""
        return float(self.bell_noise[self.n + l])

    def is_adaptive(self) -> bool:
        return any(s.kind == "adaptive" for s in self.strategies)

    def has_ideal_entangling_measurements(self) -> bool:
        """True when every BSM-type measurement is the (possibly conjugated)
        Bell-basis family, enabling the teleportation fast path."""
        for s in self.strategies:
            if s.kind in ("ideal", "transposed", "rotated"):
                continue
            if s.kind == "garbage" and not any(x >= 6 for x in s.main_povms):
                continue
            return False
        return True

    def aux_pauli_flips(self) -> np.ndarray | None:
        """Per-party outcome-flip mask for Y when the aux devices measure
        exact (possibly conjugated) Paulis; None when they do not."""
        flips = np.zeros(self.n, dtype=np.int8)
        for l, s in enumerate(self.strategies):
            if s.kind == "ideal":
                continue
            if s.kind == "transposed":
                flips[l] = 1
            elif s.kind == "garbage" and not s.aux_povms:
                continue
            else:
                return None
        return flips


@dataclass(frozen=True)
class RoundTranscript:
    """Settings and outcomes of one round; entangling settings carry
    two-bit outcomes encoded as a = 2*a0 + a1."""

    x: tuple[int, ...]
    y: tuple[int, ...]
    a: tuple[int, ...]
    b: tuple[int, ...]

    def __post_init__(self):
        for xl, al in zip(self.x, self.a):
            limit = 4 if xl >= 6 else 2
            if not 0 <= al < limit:
                raise ValueError(f"outcome {al} out of range for setting {xl}")
        for bl in self.b:
            if bl not in (0, 1):
                raise ValueError("auxiliary outcomes are single bits")


def _main_elements(model: NetworkModel, l: int, x: int, history=()):
    strat = model.strategies[l]
    if strat.kind == "adaptive":
        return strat.main_elements(x, history)
    return strat.main_elements(x)


def _aux_elements(model: NetworkModel, l: int, y: int, history=()):
    strat = model.strategies[l]
    if strat.kind == "adaptive":
        return strat.aux_elements(y, history)
    return strat.aux_elements(y)


def _ancilla_completed_elements(elems: list[np.ndarray]) -> list[np.ndarray]:
    """Contract a two-register POVM with a |0> ancilla on the first register."""
    out = []
    for e in elems:
        e = np.asarray(e, dtype=complex).reshape(2, 2, 2, 2)
        out.append(np.ascontiguousarray(e[0, :, 0, :]))
    return out


# ---------------------------------------------------------------------------
# full engine: explicit global state


def resource_ensemble(model: NetworkModel):
    """Pure components (weight, vector) of the global resource state."""
    lay = model.layout
    n = model.n
    bell_vecs = qcore.bell_basis_vectors()
    pair_specs = []
    for l in range(n):
        pair_specs.append(((lay.s(l), lay.b(l)), model.pair_noise(l)))
    for l in range(n - 1):
        pair_specs.append(((lay.link_right(l), lay.link_left(l + 1)), model.link_noise(l)))

    target_parts = model.target.eigen_ensemble()

    def components(idx=0, weight=1.0, choices=()):
        if idx == len(pair_specs):
            yield weight, choices
            return
        wts = qcore.depolarized_bell_weights(pair_specs[idx][1])
        for c, w in enumerate(wts):
            if w > 0:
                yield from components(idx + 1, weight * w, choices + (c,))

    for t_w, t_vec in target_parts:
        for w, choices in components():
            vec = np.zeros(2**lay.total_qubits, dtype=complex)
            # assemble |target> (x) product of chosen Bell components
            parts = [(list(range(n)), t_vec)]
            for (qubits, _), c in zip(pair_specs, choices):
                parts.append((list(qubits), bell_vecs[c]))
            vec = _assemble(parts, lay.total_qubits)
            yield t_w * w, vec


def _assemble(parts, total: int) -> np.ndarray:
    order = []
    vec = np.array([1.0 + 0.0j])
    for qubits, v in parts:
        vec = np.kron(vec, v)
        order.extend(qubits)
    psi = vec.reshape([2] * total)
    psi = np.moveaxis(psi, range(total), [order.index(q) for q in range(total)])
    return np.ascontiguousarray(psi.reshape(-1))


def _party_measurements(model: NetworkModel, x, y, history=()):
    """(registers, POVM elements) per measuring party, mains then auxes."""
    lay = model.layout
    out = []
    for l in range(model.n):
        regs = lay.main_registers(l, x[l])
        elems = _main_elements(model, l, x[l], history)
        if regs[0] is None:
            elems = _ancilla_completed_elements(elems)
            regs = regs[1:]
        out.append((regs, elems))
    for l in range(model.n):
        out.append(([lay.b(l)], _aux_elements(model, l, y[l], history)))
    return out


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T


def run_round_full(model: NetworkModel, x, y, rng: np.random.Generator, history=()):
    lay = model.layout
    if lay.total_qubits > FULL_ENGINE_QUBIT_CAP:
        raise ValueError("full engine register count above the dense cap")
    comps = list(resource_ensemble(model))
    weights = np.array([w for w, _ in comps])
    psi = comps[rng.choice(len(comps), p=weights / weights.sum())][1]

    measurements = _party_measurements(model, x, y, history)
    outcomes = []
    for regs, elems in measurements:
        projective = all(
            np.abs(e @ e - e).max() < 1e-10 for e in elems
        )
        kraus = elems if projective else [_psd_sqrt(e) for e in elems]
        branches = [qcore.apply_unitary(psi, k, list(regs), lay.total_qubits) for k in kraus]
        probs = np.array([np.vdot(b, b).real for b in branches])
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum()
        o = int(rng.choice(len(elems), p=probs))
        outcomes.append(o)
        psi = branches[o] / np.linalg.norm(branches[o])
    a = tuple(outcomes[: model.n])
    b = tuple(outcomes[model.n :])
    return RoundTranscript(tuple(x), tuple(y), a, b)


def transcript_distribution_full(model: NetworkModel, x, y, history=()):
    """Exact joint outcome distribution of one round under the full engine."""
    lay = model.layout
    measurements = _party_measurements(model, x, y, history)
    dist: dict[tuple, float] = {}
    for weight, psi in resource_ensemble(model):
        stack = [((), psi)]
        for regs, elems in measurements:
            new_stack = []
            for prefix, vec in stack:
                for o, e in enumerate(elems):
                    branch = qcore.apply_unitary(vec, e, list(regs), lay.total_qubits)
                    # POVM elements only shrink norms, so dead branches stay dead
                    if np.vdot(branch, branch).real > 1e-18:
                        new_stack.append((prefix + (o,), branch))
            stack = new_stack
        for prefix, vec in stack:
            p = np.vdot(psi, vec).real
            if p > 0:
                key = (prefix[: model.n], prefix[model.n :])
                dist[key] = dist.get(key, 0.0) + weight * p
    return dist


# ---------------------------------------------------------------------------
# factored engine: independent resource clusters


def round_clusters(model: NetworkModel, x):
    """Partition a round into independent clusters by consumed registers."""
    n = model.n
    clusters = []
    teleporting = [l for l in range(n) if x[l] == TELEPORT]
    braided = set()
    for l in range(n - 1):
        if x[l] == SWAP_RIGHT and x[l + 1] == SWAP_LEFT:
            clusters.append(("braid", l))
            braided.update((l, l + 1))
    for l in range(n):
        if x[l] < 6:
            clusters.append(("chsh", l))
        elif x[l] in (SWAP_RIGHT, SWAP_LEFT) and l not in braided:
            clusters.append(("dangle", l))
    if teleporting:
        clusters.append(("teleport", tuple(teleporting)))
    return clusters


def _noisy_pair_matrix(p: float) -> np.ndarray:
    phi = qcore.bell_state().density().matrix
    return (1.0 - p) * phi + p * np.eye(4) / 4.0


def _chsh_cluster_distribution(model: NetworkModel, l: int, x: int, y: int):
    """4-outcome (a, b) table of one CHSH pair, exact."""
    sigma = _noisy_pair_matrix(model.pair_noise(l))
    a_elems = _main_elements(model, l, x)
    b_elems = _aux_elements(model, l, y)
    table = np.empty((len(a_elems), len(b_elems)))
    for i, ea in enumerate(a_elems):
        for j, eb in enumerate(b_elems):
            table[i, j] = np.trace(np.kron(ea, eb) @ sigma).real
    return np.clip(table, 0.0, None)


def _dangle_cluster_distribution(model: NetworkModel, l: int, x: int, y: int):
    """Unmatched link BSM: (a in 0..3, b) joint table, exact.

    Interior case pairs the BSM with a maximally mixed link half; boundary
    case completes the missing register with a |0> ancilla.
    """
    boundary = (x == SWAP_RIGHT and l == model.n - 1) or (x == SWAP_LEFT and l == 0)
    sigma = _noisy_pair_matrix(model.pair_noise(l))
    a_elems = _main_elements(model, l, x)
    b_elems = _aux_elements(model, l, y)
    if boundary:
        a_eff = _ancilla_completed_elements(a_elems)
        table = np.empty((4, len(b_elems)))
        for i, ea in enumerate(a_eff):
            for j, eb in enumerate(b_elems):
                table[i, j] = np.trace(np.kron(ea, eb) @ sigma).real
    else:
        # cluster (link half = I/2) (x) (S_l, B_l) pair
        state = np.kron(np.eye(2) / 2.0, sigma)
        table = np.empty((4, len(b_elems)))
        for i, ea in enumerate(a_elems):
            for j, eb in enumerate(b_elems):
                table[i, j] = np.trace(np.kron(ea, eb) @ state).real
    return np.clip(table, 0.0, None)


def _pauli_of_y(y: int) -> np.ndarray:
    return (PAULI_X, PAULI_Y, PAULI_Z)[y]


def _braid_cluster_distribution(model: NetworkModel, l: int, y_l: int, y_r: int):
    """Joint (a_l, a_r, b_l, b_r) table of a matched link swap, exact.

    BSM outcomes are uniform; the link pair lands on (B_l, B_{l+1}) with the
    outcome- and noise-dependent Pauli on each side, then the auxiliary
    devices measure it.
    """
    w_pair_l = qcore.depolarized_bell_weights(model.pair_noise(l))
    w_pair_r = qcore.depolarized_bell_weights(model.pair_noise(l + 1))
    w_link = qcore.depolarized_bell_weights(model.link_noise(l))
    corrections = [qcore.pauli_correction(a >> 1, a & 1) for a in range(4)]
    bl_elems = _aux_elements(model, l, y_l)
    br_elems = _aux_elements(model, l + 1, y_r)
    phi = qcore.bell_state().amplitudes
    table = np.zeros((4, 4, 2, 2))
    for a_l in range(4):
        for a_r in range(4):
            rho = np.zeros((4, 4), dtype=complex)
            for c_l in range(4):
                if w_pair_l[c_l] == 0:
                    continue
                for c_r in range(4):
                    if w_pair_r[c_r] == 0:
                        continue
                    for d in range(4):
                        w = w_pair_l[c_l] * w_pair_r[c_r] * w_link[d]
                        if w == 0:
                            continue
                        left = corrections[c_l].T @ corrections[a_l].conj().T @ corrections[d]
                        right = corrections[c_r].T @ corrections[a_r].conj().T
                        vec = np.kron(left, right) @ phi
                        rho += w * np.outer(vec, vec.conj())
            for i, ei in enumerate(bl_elems):
                for j, ej in enumerate(br_elems):
                    table[a_l, a_r, i, j] = np.trace(np.kron(ei, ej) @ rho).real / 16.0
    return np.clip(table, 0.0, None)


def _teleport_cluster_distribution_explicit(model: NetworkModel, parties, y):
    """Dense fallback for the teleport cluster: target plus the teleporting
    parties' pairs, simulated outright (small clusters only)."""
    n, m = model.n, len(parties)
    total = n + 2 * m
    if total > 16:
        raise ValueError("explicit teleport cluster too large; use ideal BSMs")
    rho = model.target.matrix
    for l in parties:
        rho = np.kron(rho, _noisy_pair_matrix(model.pair_noise(l)))
    dist: dict[tuple, float] = {}
    # left-multiply POVM elements (disjoint registers commute) and take the
    # trace at the end: tr(E_k ... E_1 rho) is the joint probability
    stack = [((), rho)]
    for pos, l in enumerate(parties):
        regs = [l, n + 2 * pos]
        elems = _main_elements(model, l, TELEPORT)
        new = []
        for prefix, mat in stack:
            for o, e in enumerate(elems):
                branch = qcore.embed_operator(e, regs, total) @ mat
                if abs(np.trace(branch)) > 1e-18:
                    new.append((prefix + (o,), branch))
        stack = new
    for pos, l in enumerate(parties):
        reg = [n + 2 * pos + 1]
        elems = _aux_elements(model, l, y[l])
        new = []
        for prefix, mat in stack:
            for o, e in enumerate(elems):
                new.append((prefix + (o,), qcore.embed_operator(e, reg, total) @ mat))
        stack = new
    for prefix, mat in stack:
        p = np.trace(mat).real
        if p > 0:
            key = (prefix[:m], prefix[m:])
            dist[key] = dist.get(key, 0.0) + p
    return dist


def _teleport_cluster_distribution(model: NetworkModel, parties, y):
    """Joint (a over parties, b over parties) distribution for teleport
    settings on `parties`, by the exact teleportation algebra."""
    flips_y = model.aux_pauli_flips()
    if not model.has_ideal_entangling_measurements() or flips_y is None:
        return _teleport_cluster_distribution_explicit(model, parties, y)
    m = len(parties)
    rho = qcore.partial_trace(model.target.matrix, list(parties)) if m < model.n else model.target.matrix
    labels = tuple(PAULI_LABELS[y[l]] for l in parties)
    from dicert.observables import basis_probabilities

    ideal = basis_probabilities(rho, labels)
    noise_weights = [qcore.depolarized_bell_weights(model.pair_noise(l)) for l in parties]

    dist: dict[tuple, float] = {}
    for a_idx in np.ndindex(*([4] * m)):
        base = 0.25**m
        # mix over pair-noise components; each adds outcome flips
        def accumulate(pos, weight, flip_bits):
            if pos == m:
                for b_idx in range(2**m):
                    bits = [(b_idx >> (m - 1 - i)) & 1 for i in range(m)]
                    flipped = [bits[i] ^ flip_bits[i] for i in range(m)]
                    # map corrected index: ideal prob of the unflipped string
                    p = ideal[int("".join(map(str, flipped)), 2)]
                    if p > 0:
                        key = (tuple(a_idx), tuple(bits))
                        dist[key] = dist.get(key, 0.0) + base * weight * p
                return
            l = parties[pos]
            pl = y[l]
            for c in range(4):
                w = noise_weights[pos][c]
                if w == 0:
                    continue
                fl = (
                    ANTICOMMUTES[c][pl]
                    ^ ANTICOMMUTES[a_idx[pos]][pl]
                    ^ (flips_y[l] if pl == 1 else 0)
                )
                accumulate(pos + 1, weight * w, flip_bits + (int(fl),))

        accumulate(0, 1.0, ())
    return dist


def transcript_distribution_factored(model: NetworkModel, x, y):
    """Exact transcript distribution as a product over round clusters."""
    if model.is_adaptive():
        raise ValueError("factored engine cannot serve adaptive strategies")
    n = model.n
    parts = []  # list of (main parties, aux parties, dict outcome->prob)
    for cluster in round_clusters(model, x):
        kind = cluster[0]
        if kind == "chsh":
            l = cluster[1]
            table = _chsh_cluster_distribution(model, l, x[l], y[l])
            d = {
                ((i,), (j,)): table[i, j]
                for i in range(table.shape[0])
                for j in range(table.shape[1])
                if table[i, j] > 0
            }
            parts.append(((l,), (l,), d))
        elif kind == "dangle":
            l = cluster[1]
            table = _dangle_cluster_distribution(model, l, x[l], y[l])
            d = {
                ((i,), (j,)): table[i, j]
                for i in range(4)
                for j in range(table.shape[1])
                if table[i, j] > 0
            }
            parts.append(((l,), (l,), d))
        elif kind == "braid":
            l = cluster[1]
            table = _braid_cluster_distribution(model, l, y[l], y[l + 1])
            d = {}
            for al in range(4):
                for ar in range(4):
                    for i in range(2):
                        for j in range(2):
                            p = table[al, ar, i, j]
                            if p > 0:
                                d[((al, ar), (i, j))] = p
            parts.append(((l, l + 1), (l, l + 1), d))
        else:
            parties = cluster[1]
            d = _teleport_cluster_distribution(model, parties, y)
            parts.append((parties, parties, d))

    # fold cluster distributions into full transcripts
    full: dict[tuple, float] = {((), ()): 1.0}
    a_slots: list[int] = []
    b_slots: list[int] = []
    for mains, auxes, d in parts:
        new: dict[tuple, float] = {}
        for (a_acc, b_acc), p0 in full.items():
            for (a_out, b_out), p in d.items():
                new[(a_acc + a_out, b_acc + b_out)] = new.get(
                    (a_acc + a_out, b_acc + b_out), 0.0
                ) + p0 * p
        full = new
        a_slots.extend(mains)
        b_slots.extend(auxes)

    out: dict[tuple, float] = {}
    for (a_acc, b_acc), p in full.items():
        a = [0] * n
        b = [0] * n
        for party, val in zip(a_slots, a_acc):
            a[party] = val
        for party, val in zip(b_slots, b_acc):
            b[party] = val
        key = (tuple(a), tuple(b))
        out[key] = out.get(key, 0.0) + p
    return out


def run_round_factored(model: NetworkModel, x, y, rng: np.random.Generator):
    dist = transcript_distribution_factored(model, x, y)
    keys = list(dist.keys())
    probs = np.array([dist[k] for k in keys])
    probs = probs / probs.sum()
    a, b = keys[rng.choice(len(keys), p=probs)]
    return RoundTranscript(tuple(x), tuple(y), a, b)


def run_round(model: NetworkModel, settings, engine: str, rng: np.random.Generator, history=()):
    """One protocol round.  `settings` is an (x, y) pair of per-party tuples."""
    x, y = settings
    if engine == "full":
        return run_round_full(model, x, y, rng, history)
    if engine == "factored":
        if model.is_adaptive():
            raise ValueError("factored engine cannot serve adaptive strategies")
        return run_round_factored(model, x, y, rng)
    raise ValueError(f"unknown engine {engine!r}")


# ---------------------------------------------------------------------------
# imperfection measures


def state_preparation_error(model: NetworkModel) -> float:
    """Trace distance between the prepared resources and the reference
    (actual reduced target (x) ideal Bell pairs).

    With per-pair depolarized Bells everything is diagonal in the product
    Bell basis, giving 1 - prod_i (1 - 3 p_i / 4) exactly; reported as an
    upper bound on the unrestricted minimum.
    """
    survive = 1.0
    for p in model.bell_noise:
        survive *= 1.0 - 0.75 * p
    return 1.0 - survive


def _measurement_channel_choi(elems: list[np.ndarray]) -> np.ndarray:
    """Normalized Choi matrix of rho -> sum_o tr(rho E_o)|o><o|."""
    d = elems[0].shape[0]
    k = len(elems)
    choi = np.zeros((k * d, k * d), dtype=complex)
    for o, e in enumerate(elems):
        block = e.T / d
        choi[o * d : (o + 1) * d, o * d : (o + 1) * d] = block
    return choi


def measurement_error_bound(strategy, setting_role: str, setting: int) -> float:
    """Upper bound on the diamond distance between the implemented and ideal
    measurement channels: input dimension times the trace distance of their
    normalized Choi operators (documented surrogate)."""
    ideal = IdealStrategy()
    if setting_role == "main":
        impl = strategy.main_elements(setting)
        ref = ideal.main_elements(setting)
    elif setting_role == "aux":
        impl = strategy.aux_elements(setting)
        ref = ideal.aux_elements(setting)
    else:
        raise ValueError(f"unknown role {setting_role!r}")
    if impl[0].shape != ref[0].shape:
        raise ValueError("implemented and reference dimensions differ")
    d = ref[0].shape[0]
    return d * qcore.trace_distance(
        _measurement_channel_choi(impl), _measurement_channel_choi(ref)
    )


def model_measurement_error(model: NetworkModel) -> float:
    """Max of the per-setting Choi bounds over all parties and settings."""
    worst = 0.0
    for strat in model.strategies:
        if strat.kind == "adaptive":
            raise ValueError("adaptive strategies have no fixed channel")
        for x in MAIN_SETTINGS:
            worst = max(worst, measurement_error_bound(strat, "main", x))
        for y in range(3):
            worst = max(worst, measurement_error_bound(strat, "aux", y))
    return worst


# ---------------------------------------------------------------------------
# JSON serialization


def _require(cfg: dict, key: str, ctx: str):
    if key not in cfg:
        raise ConfigError(f"missing required key '{key}' in {ctx}")
    return cfg[key]


def _reject_unknown(cfg: dict, allowed, ctx: str):
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {ctx}")


def target_from_json(cfg, n: int) -> DensityOperator:
    if not isinstance(cfg, dict):
        raise ConfigError("'target' must be an object")
    kind = _require(cfg, "kind", "target")
    if kind == "zero":
        _reject_unknown(cfg, {"kind"}, "target")
        return PureState(n, qcore.basis_state(n, 0)).density()
    if kind == "ghz":
        _reject_unknown(cfg, {"kind"}, "target")
        vec = np.zeros(2**n, dtype=complex)
        vec[0] = vec[-1] = 1 / np.sqrt(2)
        return PureState(n, vec).density()
    if kind == "haar":
        _reject_unknown(cfg, {"kind", "seed"}, "target")
        seed = int(cfg.get("seed", 0))
        return qcore.haar_random_state(n, np.random.default_rng(seed)).density()
    if kind == "maximally_mixed":
        _reject_unknown(cfg, {"kind"}, "target")
        return DensityOperator(n, np.eye(2**n) / 2**n)
    if kind == "amplitudes":
        _reject_unknown(cfg, {"kind", "re", "im"}, "target")
        re = np.asarray(_require(cfg, "re", "target"), dtype=float)
        im = np.asarray(cfg.get("im", np.zeros_like(re)), dtype=float)
        vec = re + 1j * im
        vec = vec / np.linalg.norm(vec)
        return PureState(n, vec).density()
    if kind == "matrix":
        _reject_unknown(cfg, {"kind", "re", "im"}, "target")
        re = np.asarray(_require(cfg, "re", "target"), dtype=float)
        im = np.asarray(cfg.get("im", np.zeros_like(re)), dtype=float)
        return DensityOperator(n, re + 1j * im)
    raise ConfigError(f"unknown target kind '{kind}'")


def target_to_json(target: DensityOperator) -> dict:
    return {
        "kind": "matrix",
        "re": target.matrix.real.tolist(),
        "im": target.matrix.imag.tolist(),
    }


def strategy_from_json(cfg) -> object:
    if not isinstance(cfg, dict):
        raise ConfigError("strategy entries must be objects")
    kind = _require(cfg, "kind", "strategy")
    if kind == "ideal":
        _reject_unknown(cfg, {"kind"}, "strategy")
        return IdealStrategy()
    if kind == "transposed":
        _reject_unknown(cfg, {"kind"}, "strategy")
        return TransposedStrategy()
    if kind == "rotated":
        _reject_unknown(cfg, {"kind", "angle"}, "strategy")
        return RotatedStrategy(float(_require(cfg, "angle", "strategy")))
    if kind == "adaptive":
        _reject_unknown(cfg, {"kind", "name"}, "strategy")
        name = _require(cfg, "name", "strategy")
        if name not in ADAPTIVE_PRESETS:
            raise ConfigError(f"unknown adaptive preset '{name}'")
        return AdaptiveStrategy(ADAPTIVE_PRESETS[name], name=name)
    raise ConfigError(f"unknown strategy kind '{kind}'")


def strategy_to_json(strategy) -> dict:
    if strategy.kind == "rotated":
        return {"kind": "rotated", "angle": strategy.angle}
    if strategy.kind == "adaptive":
        return {"kind": "adaptive", "name": strategy.name}
    if strategy.kind == "garbage":
        raise ConfigError("garbage strategies are not JSON-serializable")
    return {"kind": strategy.kind}


def model_from_json(cfg: dict) -> NetworkModel:
    if not isinstance(cfg, dict):
        raise ConfigError("model configuration must be an object")
    _reject_unknown(cfg, {"n", "target", "bell_noise", "strategies"}, "model")
    n = _require(cfg, "n", "model")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("key 'n' must be a positive integer")
    target = target_from_json(_require(cfg, "target", "model"), n)
    noise = cfg.get("bell_noise", 0.0)
    strategies_cfg = cfg.get("strategies")
    if strategies_cfg is None:
        strategies = None
    else:
        if len(strategies_cfg) != n:
            raise ConfigError("key 'strategies' must list one entry per party")
        strategies = [strategy_from_json(s) for s in strategies_cfg]
    try:
        return NetworkModel(n, target, noise, strategies)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def model_to_json(model: NetworkModel) -> dict:
    return {
        "n": model.n,
        "target": target_to_json(model.target),
        "bell_noise": [float(p) for p in model.bell_noise],
        "strategies": [strategy_to_json(s) for s in model.strategies],
    }


def model_from_json_str(text: str) -> NetworkModel:
    return model_from_json(json.loads(text))
