"""Vectorized round generation for non-adaptive product-resource models.

Supports depolarized Bell resources, arbitrary targets, and strategies whose
entangling measurements are the (possibly conjugated) Bell family and whose
auxiliary devices measure exact or sign-flipped Paulis; arbitrary projective
CHSH-side observables are folded into per-setting outcome tables.  Under
these conditions every tally the protocol needs reduces to categorical
tables and bit algebra, so rounds are processed in large numpy chunks.
"""
from __future__ import annotations

import numpy as np

from dicert import qcore
from dicert.network import (
    ANTICOMMUTES,
    SWAP_LEFT,
    SWAP_RIGHT,
    TELEPORT,
    NetworkModel,
    _chsh_cluster_distribution,
)
from dicert.observables import (
    ExplicitDistribution,
    ProductDistribution,
    basis_probabilities,
    basis_unitary,
)

CHUNK_ROUNDS = 1 << 19

# sign of conjugating Pauli p by the Bell label c (+1 commute / -1 anticommute)
CONJ_SIGN = 1.0 - 2.0 * ANTICOMMUTES.astype(np.float64)
# <P (x) P> on the ideal Bell pair, indexed by p
PAIR_CORR = np.array([1.0, -1.0, 1.0])


def supports(model: NetworkModel) -> bool:
    """Fast path needs Bell-family entangling measurements and Pauli-type
    auxiliary devices; CHSH-side observables may be anything projective."""
    if model.is_adaptive():
        return False
    if not model.has_ideal_entangling_measurements():
        return False
    return model.aux_pauli_flips() is not None


class FastTables:
    """Per-model lookup tables consumed by the chunked tally loop."""

    def __init__(self, model: NetworkModel):
        self.model = model
        n = model.n
        # P(a == b | x, y) for every CHSH setting pair, per party
        self.chsh_even = np.empty((n, 6, 3))
        for l in range(n):
            for x in range(6):
                for y in range(3):
                    table = _chsh_cluster_distribution(model, l, x, y)
                    self.chsh_even[l, x, y] = table[0, 0] + table[1, 1]
        self.aux_flips = model.aux_pauli_flips()
        # cumulative Bell-component weights per pair / link
        self.pair_cum = np.stack(
            [np.cumsum(qcore.depolarized_bell_weights(model.pair_noise(l))) for l in range(n)]
        )
        if n > 1:
            self.link_cum = np.stack(
                [
                    np.cumsum(qcore.depolarized_bell_weights(model.link_noise(l)))
                    for l in range(n - 1)
                ]
            )
        self.pair_noisy = np.array([model.pair_noise(l) > 0 for l in range(n)])
        self._teleport_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        ensemble = model.target.eigen_ensemble()
        self._target_vec = ensemble[0][1] if len(ensemble) == 1 else None

    def teleport_tables(self, y_key: tuple[int, ...], weight) -> tuple[np.ndarray, np.ndarray]:
        """(cumulative ideal outcome distribution, weight table) for one basis."""
        cached = self._teleport_cache.get(y_key)
        if cached is None:
            labels = tuple(qcore.PAULI_LABELS[y] for y in y_key)
            if self._target_vec is not None:
                amps = basis_unitary(labels).conj().T @ self._target_vec
                probs = np.abs(amps) ** 2
                probs /= probs.sum()
            else:
                probs = basis_probabilities(self.model.target.matrix, labels)
            cached = (np.cumsum(probs), weight.table(labels))
            self._teleport_cache[y_key] = cached
        return cached


def _sample_cat(cum: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    return np.searchsorted(cum, rng.random(size), side="right").astype(np.int64)


def sample_main_settings_local(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    teleport = rng.random((m, n)) < 1.0 - 1.0 / n
    rest = rng.integers(0, 8, size=(m, n))
    return np.where(teleport, TELEPORT, rest)


def sample_aux_settings_local(
    dist: ProductDistribution, m: int, rng: np.random.Generator
) -> np.ndarray:
    n = dist.n
    out = np.empty((m, n), dtype=np.int64)
    for l in range(n):
        out[:, l] = _sample_cat(np.cumsum(dist.marginals[l]), rng, m)
    return out


def sample_settings_shared_batch(n: int, distribution, m: int, rng: np.random.Generator):
    """Vectorized three-type setting sampler for the shared variant."""
    x = np.empty((m, n), dtype=np.int64)
    y = np.empty((m, n), dtype=np.int64)
    types = rng.integers(0, 3, size=m)

    rows1 = np.nonzero(types == 0)[0]
    if rows1.size:
        from dicert.protocol import CHSH_INPUTS

        xt = np.array([[xi[0], xi[1]] for xi in CHSH_INPUTS])
        yt = np.array([[xi[2], xi[3]] for xi in CHSH_INPUTS])
        k = rng.integers(0, 3, size=(rows1.size, n))
        i = rng.integers(0, 2, size=(rows1.size, n))
        j = rng.integers(0, 2, size=(rows1.size, n))
        x[rows1] = xt[k, i]
        y[rows1] = yt[k, j]

    rows2 = np.nonzero(types == 1)[0]
    if rows2.size:
        s = rng.integers(0, 2, size=rows2.size)
        yv = rng.integers(0, 3, size=rows2.size)
        x[rows2] = rng.integers(0, 6, size=(rows2.size, n))
        y[rows2] = rng.integers(0, 3, size=(rows2.size, n))
        for l in range(n - 1):
            hit = rows2[s == l % 2]
            x[hit, l] = SWAP_RIGHT
            x[hit, l + 1] = SWAP_LEFT
            y[hit, l] = yv[s == l % 2]
            y[hit, l + 1] = yv[s == l % 2]

    rows3 = np.nonzero(types == 2)[0]
    if rows3.size:
        x[rows3] = TELEPORT
        if isinstance(distribution, ProductDistribution):
            for l in range(n):
                y[rows3, l] = _sample_cat(np.cumsum(distribution.marginals[l]), rng, rows3.size)
        elif isinstance(distribution, ExplicitDistribution):
            idx = _sample_cat(np.cumsum(distribution.probs), rng, rows3.size)
            table = np.array(
                [[qcore.PAULI_LABELS.index(lab) for lab in s] for s in distribution.strings],
                dtype=np.int64,
            )
            y[rows3] = table[idx]
        else:
            for pos, r in enumerate(rows3):
                labels = distribution.sample(rng)
                y[r] = [qcore.PAULI_LABELS.index(lab) for lab in labels]
    return x, y


def tally_chunk(tables: FastTables, config, bank, x: np.ndarray, y: np.ndarray, rng):
    """Accumulate all counter updates of a settings chunk into the bank."""
    from dicert.protocol import J_OF_KY, K_OF_X, I_OF_X, braid_acceptance

    model = tables.model
    n = model.n
    m = x.shape[0]

    for l in range(n):
        mask = x[:, l] < 6
        if not mask.any():
            continue
        xv = x[mask, l]
        yv = y[mask, l]
        k = K_OF_X[xv]
        j = J_OF_KY[k, yv]
        ok = j >= 0
        if not ok.any():
            continue
        xv, yv, k, j = xv[ok], yv[ok], k[ok], j[ok]
        i = I_OF_X[xv]
        even = rng.random(xv.size) < tables.chsh_even[l, xv, yv]
        flat = (k * 2 + i) * 2 + j
        np.add.at(bank.n_I[l].reshape(-1), flat, 1)
        np.add.at(bank.e_I[l].reshape(-1), flat, np.where(even, 1, -1))

    for l in range(n - 1):
        mask = (x[:, l] == SWAP_RIGHT) & (x[:, l + 1] == SWAP_LEFT) & (y[:, l] == y[:, l + 1])
        if not mask.any():
            continue
        p = y[mask, l]
        if config.variant == "local":
            acc = braid_acceptance(config.spec.distribution, l)
            keep = rng.random(p.size) < acc[p]
            p = p[keep]
        if p.size == 0:
            continue
        c_l = _sample_cat(tables.pair_cum[l], rng, p.size)
        c_r = _sample_cat(tables.pair_cum[l + 1], rng, p.size)
        d = _sample_cat(tables.link_cum[l], rng, p.size)
        sign = CONJ_SIGN[c_l, p] * CONJ_SIGN[c_r, p] * CONJ_SIGN[d, p] * PAIR_CORR[p]
        if tables.aux_flips[l]:
            sign = np.where(p == 1, -sign, sign)
        if tables.aux_flips[l + 1]:
            sign = np.where(p == 1, -sign, sign)
        # tally -(-1)^[P=Y] * corrected parity sign
        inc = np.where(p == 1, sign, -sign)
        bank.n_II[l] += p.size
        bank.e_II[l] += int(np.rint(inc.sum()))

    mask = (x == TELEPORT).all(axis=1)
    if mask.any():
        ym = y[mask]
        weights = teleport_weight_samples(tables, config.spec.weight, ym, rng)
        bank.n_III += ym.shape[0]
        bank.e_III += float(weights.sum())
    return bank


def teleport_weight_samples(
    tables: FastTables, weight, ym: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Corrected-outcome weights for a block of all-teleport rounds.

    Per round: ideal basis outcomes from the target's Born table, XOR the
    pair-noise anticommutation flips and any auxiliary Y-sign flips (the
    teleportation corrections themselves cancel exactly).
    """
    model = tables.model
    n = model.n
    out = np.empty(ym.shape[0])
    keys = ym @ (3 ** np.arange(n - 1, -1, -1))
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    boundaries = np.nonzero(np.diff(sorted_keys))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [sorted_keys.size]))
    for s0, e0 in zip(starts, ends):
        rows = order[s0:e0]
        y_key = tuple(int(v) for v in ym[rows[0]])
        cum, wtable = tables.teleport_tables(y_key, weight)
        idx = _sample_cat(cum, rng, rows.size)
        flip = np.zeros(rows.size, dtype=np.int64)
        for l in range(n):
            bitval = 1 << (n - 1 - l)
            if tables.pair_noisy[l]:
                c = _sample_cat(tables.pair_cum[l], rng, rows.size)
                flip ^= bitval * ANTICOMMUTES[c, y_key[l]].astype(np.int64)
            if tables.aux_flips[l] and y_key[l] == 1:
                flip ^= bitval
        out[rows] = wtable[idx ^ flip]
    return out


def run_rounds(model: NetworkModel, config, rng: np.random.Generator):
    """Chunked tally loop over config.N rounds; returns the counter bank."""
    from dicert.protocol import CounterBank

    tables = FastTables(model)
    bank = CounterBank(model.n)
    remaining = config.N
    while remaining > 0:
        m = min(remaining, CHUNK_ROUNDS)
        if config.variant == "local":
            x = sample_main_settings_local(model.n, m, rng)
            y = sample_aux_settings_local(config.spec.distribution, m, rng)
        else:
            x, y = sample_settings_shared_batch(model.n, config.spec.distribution, m, rng)
        tally_chunk(tables, config, bank, x, y, rng)
        remaining -= m
    return bank


def weight_stream(model: NetworkModel, spec, rounds: int, rng: np.random.Generator) -> np.ndarray:
    """Weights from `rounds` consecutive all-teleport rounds with bases drawn
    from the spec's distribution (the contributing-round estimator stream)."""
    if not supports(model):
        raise ValueError("weight stream needs a fast-path model")
    tables = FastTables(model)
    out = np.empty(rounds)
    done = 0
    while done < rounds:
        m = min(rounds - done, CHUNK_ROUNDS)
        if isinstance(spec.distribution, ProductDistribution):
            ym = sample_aux_settings_local(spec.distribution, m, rng)
        elif isinstance(spec.distribution, ExplicitDistribution):
            idx = _sample_cat(np.cumsum(spec.distribution.probs), rng, m)
            table = np.array(
                [[qcore.PAULI_LABELS.index(lab) for lab in s] for s in spec.distribution.strings],
                dtype=np.int64,
            )
            ym = table[idx]
        else:
            ym = np.array(
                [
                    [qcore.PAULI_LABELS.index(lab) for lab in spec.distribution.sample(rng)]
                    for _ in range(m)
                ],
                dtype=np.int64,
            )
        out[done : done + m] = teleport_weight_samples(tables, spec.weight, ym, rng)
        done += m
    return out
