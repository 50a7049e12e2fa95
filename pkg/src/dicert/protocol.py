"""Round-based certification protocols over a network model.

A protocol run samples measurement settings for N rounds (independently per
party, or jointly from shared randomness), collects outcomes from the round
engine, accumulates per-test tallies, and finalizes three estimators:

  v_I   per-pair CHSH deficit from the quantum maximum 2*sqrt(2),
  v_II  per-link deviation of the braiding correlator from its extremum,
  v_III weighted mean of corrected teleported-measurement outcomes.

Certification fails when the CHSH or braiding deficits exceed their
precision-derived thresholds.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from dicert import qcore, stats
from dicert.network import (
    ANTICOMMUTES,
    SWAP_LEFT,
    SWAP_RIGHT,
    TELEPORT,
    NetworkModel,
    RoundTranscript,
    run_round,
)
from dicert.observables import (
    ExplicitDistribution,
    ObservableSpec,
    ProductDistribution,
    averaged_overlap_observable,
    random_basis_overlap_spec,
    shadow_overlap_observable,
    shadow_overlap_spec,
    spectral_gap,
)

SQRT8 = 2.0 * np.sqrt(2.0)

# the three CHSH tests: (x(0,k), x(1,k), y(0,k), y(1,k))
CHSH_INPUTS = ((0, 1, 0, 2), (3, 2, 0, 1), (5, 4, 2, 1))

# x in 0..5 -> which test k it belongs to and which slot i it fills
K_OF_X = np.array([0, 0, 1, 1, 2, 2], dtype=np.int64)
I_OF_X = np.array([0, 1, 1, 0, 1, 0], dtype=np.int64)
# J_OF_KY[k][y] -> slot j, or -1 when y does not appear in test k
J_OF_KY = np.full((3, 3), -1, dtype=np.int64)
for _k, (_x0, _x1, _y0, _y1) in enumerate(CHSH_INPUTS):
    J_OF_KY[_k, _y0] = 0
    J_OF_KY[_k, _y1] = 1

PAULI_INDEX = {"X": 0, "Y": 1, "Z": 2}


def correction_flip(b: int, pauli, a) -> int:
    """Corrected teleportation outcome: flip b when the recovery unitary
    X^a0 Z^a1 anticommutes with the measured Pauli."""
    p = PAULI_INDEX[pauli] if isinstance(pauli, str) else int(pauli)
    if isinstance(a, (tuple, list)):
        a = 2 * a[0] + a[1]
    return int(b) ^ int(ANTICOMMUTES[a][p])


@dataclass
class CounterBank:
    """Protocol tallies; e_II carries the minus sign so v_II = 1 + mean."""

    n: int
    n_I: np.ndarray = field(init=False)
    e_I: np.ndarray = field(init=False)
    n_II: np.ndarray = field(init=False)
    e_II: np.ndarray = field(init=False)
    n_III: int = 0
    e_III: float = 0.0

    def __post_init__(self):
        self.n_I = np.zeros((self.n, 3, 2, 2), dtype=np.int64)
        self.e_I = np.zeros((self.n, 3, 2, 2), dtype=np.int64)
        links = max(self.n - 1, 0)
        self.n_II = np.zeros(links, dtype=np.int64)
        self.e_II = np.zeros(links, dtype=np.int64)

    def merge(self, other: "CounterBank") -> "CounterBank":
        if other.n != self.n:
            raise ValueError("cannot merge banks of different sizes")
        self.n_I += other.n_I
        self.e_I += other.e_I
        self.n_II += other.n_II
        self.e_II += other.e_II
        self.n_III += other.n_III
        self.e_III += other.e_III
        return self

    def validate(self, weight_bound: float) -> None:
        if (self.n_I < 0).any() or (self.n_II < 0).any() or self.n_III < 0:
            raise ValueError("negative counter")
        if (np.abs(self.e_I) > self.n_I).any():
            raise ValueError("CHSH tally out of range")
        if (np.abs(self.e_II) > self.n_II).any():
            raise ValueError("braiding tally out of range")
        if abs(self.e_III) > weight_bound * self.n_III + 1e-9:
            raise ValueError("weighted tally exceeds the bound")


@dataclass(frozen=True)
class ProtocolConfig:
    variant: str  # "local" | "shared"
    N: int
    epsilon: float
    delta: float
    spec: ObservableSpec
    c: float = 1.0
    marginal_floor: float = 0.05

    def __post_init__(self):
        if self.variant not in ("local", "shared"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.N < 0:
            raise ValueError("round count must be nonnegative")
        if self.variant == "local":
            dist = self.spec.distribution
            if not isinstance(dist, ProductDistribution):
                raise ValueError("local variant needs a product basis distribution")
            if dist.marginals.min() < self.marginal_floor:
                raise ValueError(
                    f"marginal below the configured floor {self.marginal_floor}"
                )


@dataclass(frozen=True)
class CertificationReport:
    v_I: float
    v_II: float
    v_III: float
    s_hat: np.ndarray  # per (l, k) CHSH values
    v_I_per_test: np.ndarray
    v_II_per_link: np.ndarray
    verdict: str
    threshold_I: float
    threshold_II: float
    seed: int | None
    rounds: int
    counters: CounterBank

    def to_json_dict(self) -> dict:
        return {
            "v_I": self.v_I,
            "v_II": self.v_II,
            "v_III": self.v_III,
            "s_hat": [[float(v) for v in row] for row in self.s_hat],
            "v_I_per_test": [[float(v) for v in row] for row in self.v_I_per_test],
            "v_II_per_link": [float(v) for v in self.v_II_per_link],
            "verdict": self.verdict,
            "threshold_I": self.threshold_I,
            "threshold_II": self.threshold_II,
            "seed": self.seed,
            "rounds": self.rounds,
            "counters": {
                "n_I": self.counters.n_I.tolist(),
                "e_I": self.counters.e_I.tolist(),
                "n_II": self.counters.n_II.tolist(),
                "e_II": self.counters.e_II.tolist(),
                "n_III": self.counters.n_III,
                "e_III": self.counters.e_III,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=1)


def export_counters_csv(bank: CounterBank, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "l", "k", "i", "j", "n", "e"])
        for l in range(bank.n):
            for k in range(3):
                for i in range(2):
                    for j in range(2):
                        writer.writerow(
                            ["I", l, k, i, j, int(bank.n_I[l, k, i, j]), int(bank.e_I[l, k, i, j])]
                        )
        for l in range(bank.n - 1):
            writer.writerow(["II", l, "", "", "", int(bank.n_II[l]), int(bank.e_II[l])])
        writer.writerow(["III", "", "", "", "", bank.n_III, repr(float(bank.e_III))])


# ---------------------------------------------------------------------------
# setting samplers


def sample_settings_local(n: int, dist: ProductDistribution, rng: np.random.Generator):
    """Independent per-party choices: teleport with probability 1 - 1/n,
    each of the 8 other settings with probability 1/(8n); auxiliary bases
    from the target distribution's marginals."""
    x = []
    for _ in range(n):
        u = rng.random()
        if u < 1.0 - 1.0 / n:
            x.append(TELEPORT)
        else:
            rest = int((u - (1.0 - 1.0 / n)) * 8 * n)
            x.append(min(rest, 7))
    y = tuple(int(rng.choice(3, p=dist.marginals[l])) for l in range(n))
    return tuple(x), y


def sample_settings_shared(n: int, distribution, rng: np.random.Generator):
    """Jointly pick one of the three test types with probability 1/3 each."""
    t = int(rng.integers(0, 3))
    if t == 0:
        x, y = [], []
        for _ in range(n):
            k = int(rng.integers(0, 3))
            i = int(rng.integers(0, 2))
            j = int(rng.integers(0, 2))
            x0, x1, y0, y1 = CHSH_INPUTS[k]
            x.append((x0, x1)[i])
            y.append((y0, y1)[j])
        return tuple(x), tuple(y)
    if t == 1:
        s = int(rng.integers(0, 2))
        yv = int(rng.integers(0, 3))
        # unpaired parties fall back to uniform CHSH-type settings
        x = [int(rng.integers(0, 6)) for _ in range(n)]
        y = [int(rng.integers(0, 3)) for _ in range(n)]
        for l in range(n - 1):
            if l % 2 == s:
                x[l], x[l + 1] = SWAP_RIGHT, SWAP_LEFT
                y[l] = y[l + 1] = yv
        return tuple(x), tuple(y)
    labels = distribution.sample(rng)
    y = tuple(PAULI_INDEX[lab] for lab in labels)
    return (TELEPORT,) * n, y


def braid_acceptance(dist: ProductDistribution, l: int) -> np.ndarray:
    """Rejection-sampling acceptance probabilities per braiding basis."""
    joint = dist.marginals[l] * dist.marginals[l + 1]
    return joint.min() / joint


# ---------------------------------------------------------------------------
# counter updates (single round)


def update_counters(
    bank: CounterBank,
    transcript: RoundTranscript,
    config: ProtocolConfig,
    rng: np.random.Generator,
) -> CounterBank:
    """Apply the per-round tally rules for every matching setting pattern."""
    n = bank.n
    x, y, a, b = transcript.x, transcript.y, transcript.a, transcript.b
    for l in range(n):
        if x[l] < 6:
            k = K_OF_X[x[l]]
            i = I_OF_X[x[l]]
            j = J_OF_KY[k, y[l]]
            if j >= 0:
                bank.n_I[l, k, i, j] += 1
                bank.e_I[l, k, i, j] += (-1) ** (a[l] + b[l])
    for l in range(n - 1):
        if x[l] == SWAP_RIGHT and x[l + 1] == SWAP_LEFT and y[l] == y[l + 1]:
            if config.variant == "local":
                accept = braid_acceptance(config.spec.distribution, l)[y[l]]
                if rng.random() >= accept:
                    continue
            p = y[l]
            f_l = correction_flip(b[l], p, a[l])
            f_r = correction_flip(b[l + 1], p, a[l + 1])
            sign = (-1) ** (1 if p == 1 else 0) * (-1) ** (f_l + f_r)
            bank.n_II[l] += 1
            bank.e_II[l] -= sign
    if all(xl == TELEPORT for xl in x):
        labels = tuple(qcore.PAULI_LABELS[yl] for yl in y)
        corrected = tuple(correction_flip(b[l], y[l], a[l]) for l in range(n))
        bank.n_III += 1
        bank.e_III += config.spec.weight(corrected, labels)
    return bank


# ---------------------------------------------------------------------------
# finalization


def finalize(bank: CounterBank, config: ProtocolConfig, seed=None, rounds=None) -> CertificationReport:
    """Compute the estimators with the zero-denominator-to-zero rule and
    apply the certification thresholds."""
    bank.validate(config.spec.weight.bound)
    n = bank.n
    with np.errstate(divide="ignore", invalid="ignore"):
        c_hat = np.where(bank.n_I > 0, bank.e_I / np.maximum(bank.n_I, 1), 0.0)
    signs = np.array([[1.0, 1.0], [1.0, -1.0]])
    s_hat = (c_hat * signs).sum(axis=(2, 3))
    v_I_per_test = SQRT8 - s_hat
    v_I = SQRT8 - s_hat.sum() / (3 * n)
    if n > 1:
        ratios = np.where(bank.n_II > 0, bank.e_II / np.maximum(bank.n_II, 1), 0.0)
        v_II_per_link = 1.0 + ratios
        v_II = 1.0 + ratios.sum() / (n - 1)
    else:
        v_II_per_link = np.zeros(0)
        v_II = 0.0  # no links to test
    v_III = bank.e_III / bank.n_III if bank.n_III > 0 else 0.0

    w = config.spec.weight.bound
    threshold_I = config.epsilon**2 / (n**2 * w**2)
    threshold_II = config.epsilon / (n * w)
    failed = v_I > threshold_I or v_II > threshold_II
    return CertificationReport(
        v_I=float(v_I),
        v_II=float(v_II),
        v_III=float(v_III),
        s_hat=s_hat,
        v_I_per_test=v_I_per_test,
        v_II_per_link=v_II_per_link,
        verdict="FAILED" if failed else "CERTIFIED",
        threshold_I=float(threshold_I),
        threshold_II=float(threshold_II),
        seed=seed,
        rounds=int(rounds if rounds is not None else config.N),
        counters=bank,
    )


# ---------------------------------------------------------------------------
# protocol drivers


def _as_rng_and_seed(seed):
    if isinstance(seed, np.random.Generator):
        return seed, None
    return np.random.default_rng(seed), int(seed)


def run_protocol(model: NetworkModel, config: ProtocolConfig, seed) -> CertificationReport:
    """Run N rounds of sample -> measure -> tally, then finalize.

    Uses the vectorized factored backend whenever the model supports it;
    adaptive models run sequentially on the full engine.
    """
    from dicert import batch

    rng, seed_val = _as_rng_and_seed(seed)
    if config.spec.n != model.n:
        raise ValueError("observable spec and model disagree on the party count")
    config.spec.weight.validate_bound(config.spec.distribution)

    if batch.supports(model) and not model.is_adaptive():
        bank = batch.run_rounds(model, config, rng)
        return finalize(bank, config, seed=seed_val)

    bank = CounterBank(model.n)
    engine = "full" if model.is_adaptive() else "factored"
    history: list[RoundTranscript] = []
    for _ in range(config.N):
        if config.variant == "local":
            settings = sample_settings_local(model.n, config.spec.distribution, rng)
        else:
            settings = sample_settings_shared(model.n, config.spec.distribution, rng)
        transcript = run_round(model, settings, engine, rng, history=tuple(history))
        if model.is_adaptive():
            history.append(transcript)
        update_counters(bank, transcript, config, rng)
    return finalize(bank, config, seed=seed_val)


@dataclass(frozen=True)
class StateSelfTestReport:
    verdict: str
    omega_hat: float
    omega_threshold: float
    gap: float
    protocol_report: CertificationReport

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "omega_hat": self.omega_hat,
            "omega_threshold": self.omega_threshold,
            "gap": self.gap,
            "protocol": self.protocol_report.to_json_dict(),
        }


def run_state_selftest(
    psi,
    variant: str,
    eps_prime: float,
    delta: float,
    model: NetworkModel,
    seed,
    c: float = 1.0,
    N: int | None = None,
    observable: np.ndarray | None = None,
) -> StateSelfTestReport:
    """Self-test a pure target state through the matching observable scheme.

    The local variant runs the basis-averaged overlap witness, the shared
    variant the shadow-overlap witness.  Fails when the underlying protocol
    fails or the weighted mean drops below 1 - gap * eps_prime^2.
    """
    vec = qcore.as_vector(psi)
    n = qcore.num_qubits_of(vec.shape[0])
    if variant == "local":
        spec = random_basis_overlap_spec(vec)
        if observable is None:
            observable, _ = averaged_overlap_observable(
                vec, "exact" if n <= 6 else "sampled",
                samples=None if n <= 6 else 200,
                rng=np.random.default_rng(0) if n > 6 else None,
            )
    elif variant == "shared":
        spec = shadow_overlap_spec(vec)
        if observable is None:
            observable = shadow_overlap_observable(vec)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    gap = spectral_gap(observable)
    if gap <= 0:
        raise ValueError("certification observable has zero spectral gap")
    if N is None:
        N = stats.plan_N(
            variant,
            stats.PlanInputs(W=spec.weight.bound, n=n, epsilon=eps_prime, delta=delta, c=c),
        )
    config = ProtocolConfig(variant, N, eps_prime, delta, spec, c=c)
    report = run_protocol(model, config, seed)
    threshold = 1.0 - gap * eps_prime**2
    failed = report.verdict == "FAILED" or report.v_III < threshold
    return StateSelfTestReport(
        verdict="FAILED" if failed else "CERTIFIED",
        omega_hat=report.v_III,
        omega_threshold=float(threshold),
        gap=float(gap),
        protocol_report=report,
    )
