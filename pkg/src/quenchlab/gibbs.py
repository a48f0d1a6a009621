"""Gibbs expectations by exhaustive enumeration or by Markov chain Monte Carlo.

:class:`ExactEngine` keeps the full table of Boltzmann log-weights over the
2**N configurations and serves as the oracle. :class:`McmcEngine` runs
single-spin Metropolis with parallel tempering on bit-packed states and is
validated against the oracle in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from . import bits
from .errors import CapacityError, ContractViolation, DomainError
from .model import BaseMeasure, FeatureFamily, QuenchedRealization
from .rng import make_rng

ENUM_CAP = 24
N_BATCHES = 20
_BOUND_SLACK = 1e-12


# ---------------------------------------------------------------------------
# replica functionals
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ReplicaFunctional:
    """A bounded function of ``arity`` replicas.

    ``fn`` receives spins of shape (B, arity, N), or (B, arity, 2, N) when
    ``coupled`` (index 0 is the replica of system 1, index 1 of system 2), and
    returns B values. ``xor_table`` is an optional shortcut for arity-2
    single-system (arity-1 coupled) functionals that depend only on the XOR of
    the two configurations: it maps N to the length-2**N table of values.
    """

    arity: int
    fn: Callable
    bound: float = 1.0
    coupled: bool = False
    xor_table: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if self.arity < 1:
            raise DomainError("arity must be >= 1")
        if not (self.bound >= 0):
            raise DomainError("sup-norm bound must be nonnegative")

    def __call__(self, replicas) -> np.ndarray:
        replicas = np.asarray(replicas)
        want = 4 if self.coupled else 3
        if replicas.ndim != want or replicas.shape[1] < self.arity:
            raise ContractViolation(
                f"{self.name or 'functional'} needs arity {self.arity}, got replica array {replicas.shape}"
            )
        vals = np.asarray(self.fn(replicas[:, : self.arity]), dtype=float)
        vals = np.broadcast_to(vals, (replicas.shape[0],))
        if np.any(np.abs(vals) > self.bound * (1 + _BOUND_SLACK) + _BOUND_SLACK):
            raise ContractViolation(f"{self.name or 'functional'} exceeded its declared bound {self.bound}")
        return vals


# ---------------------------------------------------------------------------
# exact engine
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ExactEngine:
    """Boltzmann log-weights over all configurations plus log Z."""

    n_spins: int
    log_weights: np.ndarray
    log_z: float
    family: FeatureFamily | None = None
    y: np.ndarray | None = None
    model_kind: str = ""
    _probs: np.ndarray = field(default=None, repr=False)

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def partition_function(self) -> float:
        return math.exp(self.log_z)

    def expect(self, table) -> float:
        """<g> for a single-replica table g over all configurations."""
        return float(np.dot(self._probs, table))

    def spin_means(self) -> np.ndarray:
        return self._probs @ bits.all_configs(self.n_spins).astype(float)

    def pair_correlations(self) -> np.ndarray:
        s = bits.all_configs(self.n_spins).astype(float)
        return (s * self._probs[:, None]).T @ s

    def perturbed(self, e: int, x: float) -> "ExactEngine":
        """Engine with the single disorder entry ``y_e`` replaced by ``x``."""
        if self.family is None or self.y is None:
            raise ContractViolation("engine was not built from a family and realization")
        gamma = self.family.gamma_of(e)
        shift = gamma * (x - self.y[e]) * self.family.feature_table(e)
        y = self.y.copy()
        y[e] = x
        return _from_log_weights(self.n_spins, self.log_weights + shift, self.family, y, self.model_kind)


def _from_log_weights(n, logw, family=None, y=None, kind=""):
    top = float(np.max(logw))
    w = np.exp(logw - top)
    total = float(np.sum(w))
    log_z = top + math.log(total)
    return ExactEngine(n, logw, log_z, family, y, kind, w / total)


def build_exact(
    family: FeatureFamily,
    realization,
    base: BaseMeasure | None = None,
    base_log_weights=None,
    model_kind: str = "",
) -> ExactEngine:
    """Enumerate every configuration; log-domain with max subtraction."""
    n = family.n_spins
    if n > ENUM_CAP:
        raise CapacityError(f"exact enumeration limited to N <= {ENUM_CAP}, got {n}")
    y = np.asarray(getattr(realization, "values", realization), dtype=float)
    if y.shape != (family.size,):
        raise ContractViolation(f"realization has {y.shape[0]} values, family has {family.size}")
    if any(b.order == 0 for b in family.blocks):
        logw = np.zeros(1 << n)
        configs = bits.all_configs(n)
        for start in range(0, len(configs), 1 << 14):
            logw[start : start + (1 << 14)] = family.energy(y, configs[start : start + (1 << 14)])
    else:
        logw = bits.fwht(family.multilinear(y, dense=True))
    if base is not None:
        if base.n_spins != n:
            raise ContractViolation("base measure and family disagree on N")
        logw = logw + base.table()
    if base_log_weights is not None:
        logw = logw + np.asarray(base_log_weights, dtype=float)
    return _from_log_weights(n, logw, family, y, model_kind)


def _engines(engines):
    if isinstance(engines, ExactEngine):
        return (engines,)
    engines = tuple(engines)
    if len(engines) not in (1, 2):
        raise ContractViolation("pass one engine or a pair of engines")
    if len(engines) == 2 and engines[0].n_spins != engines[1].n_spins:
        raise ContractViolation("coupled engines must share N")
    return engines


def exact_average(engines, L: ReplicaFunctional, cap: int = ENUM_CAP) -> float:
    """Exact <L> under the product of i.i.d. replica Gibbs measures."""
    engines = _engines(engines)
    coupled = len(engines) == 2
    if coupled != L.coupled:
        raise ContractViolation("functional coupling does not match the number of engines")
    n = engines[0].n_spins
    if L.xor_table is not None and L.arity == (1 if coupled else 2):
        p1 = engines[0].probs
        p2 = engines[-1].probs
        size = 1 << n
        corr = bits.fwht(bits.fwht(p1) * bits.fwht(p2)) / size
        return float(np.dot(corr, L.xor_table(n)))
    per_replica = len(engines)
    total_bits = L.arity * per_replica * n
    if total_bits > cap:
        raise CapacityError(f"joint enumeration over 2^{total_bits} tuples exceeds cap 2^{cap}")
    configs = bits.all_configs(n)
    slots = L.arity * per_replica
    probs = [engines[j % per_replica].probs for j in range(slots)]
    total = 0.0
    mask = (1 << n) - 1
    chunk = 1 << 16
    for start in range(0, 1 << total_bits, chunk):
        flat = np.arange(start, min(start + chunk, 1 << total_bits), dtype=np.int64)
        idx = [(flat >> (n * j)) & mask for j in range(slots)]
        w = np.ones(len(flat))
        for j in range(slots):
            w *= probs[j][idx[j]]
        spins = np.stack([configs[i] for i in idx], axis=1)
        if coupled:
            spins = spins.reshape(len(flat), L.arity, 2, n)
        total += float(np.dot(w, L(spins)))
    return total


def sample_codes(engine: ExactEngine, seed: int, count: int, stream: int | tuple = 0) -> np.ndarray:
    """Inverse-CDF draws of configuration codes from the exact Gibbs table."""
    stream = stream if isinstance(stream, tuple) else (stream,)
    rng = make_rng(seed, *stream)
    cdf = np.cumsum(engine.probs)
    cdf /= cdf[-1]
    u = rng.random(count)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1).astype(np.uint64)


def sample_exact(engine: ExactEngine, seed: int, count: int, stream: int | tuple = 0) -> np.ndarray:
    """``count`` i.i.d. configurations, shape (count, N), int8 spins."""
    return bits.decode_many(sample_codes(engine, seed, count, stream), engine.n_spins)


def batch_stderr(values, n_batches: int = N_BATCHES) -> float:
    """Batch-means standard error of the mean of a correlated series."""
    values = np.asarray(values, dtype=float)
    m = len(values) // n_batches
    if m < 1:
        raise DomainError(f"need at least {n_batches} samples for batch means")
    means = values[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def _iid_estimate(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(np.std(values, ddof=1) / math.sqrt(len(values)))


# ---------------------------------------------------------------------------
# MCMC engine
# ---------------------------------------------------------------------------
@numba.njit(cache=True)
def _parity(x):
    x ^= x >> np.uint64(32)
    x ^= x >> np.uint64(16)
    x ^= x >> np.uint64(8)
    x ^= x >> np.uint64(4)
    x ^= x >> np.uint64(2)
    x ^= x >> np.uint64(1)
    return x & np.uint64(1)


@numba.njit(cache=True)
def _energy_of(state, masks, coefs):
    total = 0.0
    for j in range(masks.shape[0]):
        if _parity(state & masks[j]):
            total -= coefs[j]
        else:
            total += coefs[j]
    return total


@numba.njit(cache=True, nogil=True)
def _pt_block(states, energies, lambdas, ptr, smasks, scoefs, orders, u_flip, u_swap,
              accepted, swapped, record, out, out_start, exchange):
    """Run ``orders.shape[0]`` sweeps in place.

    states/energies: (R, K) chains for R replicas at K rungs; rung 0 is the target.
    Records the rung-0 state of each replica after sweep s if record[s].
    """
    n_rep, n_rung = states.shape
    n_sweeps, _, n_sites = orders.shape
    row = out_start
    for s in range(n_sweeps):
        for r in range(n_rep):
            for k in range(n_sites):
                i = orders[s, r, k]
                bit = np.uint64(1) << np.uint64(i)
                for c in range(n_rung):
                    st = states[r, c]
                    local = 0.0
                    for j in range(ptr[i], ptr[i + 1]):
                        if _parity(st & smasks[j]):
                            local -= scoefs[j]
                        else:
                            local += scoefs[j]
                    delta = -2.0 * local
                    lam = lambdas[c]
                    if lam * delta >= 0.0 or u_flip[s, k, r, c] < math.exp(lam * delta):
                        states[r, c] = st ^ bit
                        energies[r, c] += delta
                        accepted[c] += 1
        if exchange:
            for r in range(n_rep):
                for c in range(n_rung - 1):
                    arg = (lambdas[c] - lambdas[c + 1]) * (energies[r, c + 1] - energies[r, c])
                    if arg >= 0.0 or u_swap[s, r, c] < math.exp(arg):
                        tmp = states[r, c]
                        states[r, c] = states[r, c + 1]
                        states[r, c + 1] = tmp
                        e = energies[r, c]
                        energies[r, c] = energies[r, c + 1]
                        energies[r, c + 1] = e
                        swapped[c] += 1
        if record[s]:
            for r in range(n_rep):
                out[row, r] = states[r, 0]
            row += 1
    return row


def geometric_ladder(size: int = 8, ratio: float = 1.25) -> np.ndarray:
    """Inverse-temperature multipliers 1, 1/ratio, ..., target first."""
    return ratio ** -np.arange(size, dtype=float)


@dataclass
class McmcRun:
    """Recorded target-rung states and sampler diagnostics."""

    n_spins: int
    codes: np.ndarray  # (n_kept, n_replicas) uint64
    acceptance: np.ndarray  # per rung
    exchange: np.ndarray  # per adjacent rung pair
    sweeps: int
    burn_in: int
    thinning: int

    def replicas(self) -> np.ndarray:
        """Spins of shape (n_kept, n_replicas, N)."""
        return bits.decode_many(self.codes, self.n_spins)

    def series(self, L: ReplicaFunctional) -> np.ndarray:
        if L.coupled:
            raise ContractViolation("use CoupledRun for two-system functionals")
        return L(self.replicas())

    def estimate(self, L: ReplicaFunctional) -> tuple[float, float]:
        vals = self.series(L)
        if np.all(vals == vals[0]):
            return float(vals[0]), 0.0
        return float(vals.mean()), batch_stderr(vals)

    def diagnostics(self) -> dict:
        return {
            "acceptance": [float(a) for a in self.acceptance],
            "exchange": [float(a) for a in self.exchange],
            "sweeps": self.sweeps,
            "burn_in": self.burn_in,
            "thinning": self.thinning,
            "samples": int(self.codes.shape[0]),
        }


class McmcEngine:
    """Parallel-tempering Metropolis sampler for one quenched Hamiltonian.

    ``n_replicas`` independent tempering chains run side by side; their
    target-rung states at a given recorded sweep form one replica tuple.
    """

    def __init__(self, family: FeatureFamily, realization, base: BaseMeasure | None = None,
                 n_replicas: int = 2, ladder=None, exchange: bool = True):
        n = family.n_spins
        if n > bits.MAX_MCMC_SPINS:
            raise CapacityError(f"MCMC supports N <= {bits.MAX_MCMC_SPINS}")
        if base is not None and base.log_weights is not None:
            raise ContractViolation("tabulated base measures are enumeration-only")
        y = np.asarray(getattr(realization, "values", realization), dtype=float)
        masks, coefs = family.multilinear(y)
        if base is not None and base.masks.size:
            masks = np.concatenate([masks, base.masks.astype(np.uint64)])
            coefs = np.concatenate([coefs, base.coefs])
            uniq, inv = np.unique(masks, return_inverse=True)
            masks, coefs = uniq, np.bincount(inv.ravel(), coefs)
        keep = (masks != 0) & (coefs != 0)
        self.masks = masks[keep].astype(np.uint64)
        self.coefs = coefs[keep].astype(float)
        self.n_spins = n
        self.n_replicas = int(n_replicas)
        self.ladder = geometric_ladder() if ladder is None else np.asarray(ladder, dtype=float)
        self.exchange = bool(exchange) and len(self.ladder) > 1
        # per-site CSR lists of monomials touching the site
        ptr = [0]
        smasks, scoefs = [], []
        for i in range(n):
            hit = (self.masks >> np.uint64(i)) & np.uint64(1)
            sel = hit.astype(bool)
            smasks.append(self.masks[sel])
            scoefs.append(self.coefs[sel])
            ptr.append(ptr[-1] + int(sel.sum()))
        self._ptr = np.asarray(ptr, dtype=np.int64)
        self._smasks = np.concatenate(smasks) if smasks else np.zeros(0, dtype=np.uint64)
        self._scoefs = np.concatenate(scoefs) if scoefs else np.zeros(0)

    def energy(self, code: int) -> float:
        return float(_energy_of(np.uint64(code), self.masks, self.coefs))

    def run(self, sweeps: int, burn_in: int, thinning: int, seed: int, stream: int | tuple = 0,
            block: int = 512) -> McmcRun:
        """Burn in, then record every ``thinning``-th sweep until ``sweeps`` are done.

        ``sweeps`` counts production sweeps only. A sweep is N single-spin
        Metropolis proposals at uniformly drawn sites, followed by one round
        of replica exchange between adjacent rungs.
        """
        if burn_in < 0 or sweeps < 1 or thinning < 1:
            raise DomainError("need sweeps >= 1, burn_in >= 0, thinning >= 1")
        stream = stream if isinstance(stream, tuple) else (stream,)
        rng = make_rng(seed, *stream)
        n, R, K = self.n_spins, self.n_replicas, len(self.ladder)
        states = rng.integers(0, 1 << n, size=(R, K), dtype=np.uint64)
        energies = np.array([[self.energy(s) for s in row] for row in states])
        total = burn_in + sweeps
        record_all = np.zeros(total, dtype=np.bool_)
        record_all[burn_in + thinning - 1 :: thinning] = True
        n_kept = int(record_all.sum())
        out = np.zeros((n_kept, R), dtype=np.uint64)
        accepted = np.zeros(K, dtype=np.int64)
        swapped = np.zeros(max(K - 1, 1), dtype=np.int64)
        row = 0
        for start in range(0, total, block):
            m = min(block, total - start)
            # Sites are drawn with replacement, independently per replica. A fixed
            # or permuted scan flips a zero-field spin exactly once per sweep,
            # which makes the chain periodic and biases replica averages.
            orders = rng.integers(0, n, size=(m, R, n), dtype=np.int64)
            u_flip = rng.random((m, n, R, K))
            u_swap = rng.random((m, R, max(K - 1, 1)))
            row = _pt_block(states, energies, self.ladder, self._ptr, self._smasks, self._scoefs,
                            orders, u_flip, u_swap, accepted, swapped, record_all[start : start + m],
                            out, row, self.exchange)
        acc = accepted / (total * n * R)
        exch = swapped[: K - 1] / (total * R) if K > 1 else np.zeros(0)
        return McmcRun(n, out, acc, exch, sweeps, burn_in, thinning)


@dataclass
class CoupledRun:
    """Independent runs of the two systems, zipped into (rho, tau) tuples."""

    first: McmcRun
    second: McmcRun

    def replicas(self) -> np.ndarray:
        a, b = self.first.replicas(), self.second.replicas()
        m = min(len(a), len(b))
        return np.stack([a[:m], b[:m]], axis=2)

    def estimate(self, L: ReplicaFunctional) -> tuple[float, float]:
        if not L.coupled:
            raise ContractViolation("coupled run needs a two-system functional")
        vals = L(self.replicas())
        if np.all(vals == vals[0]):
            return float(vals[0]), 0.0
        return float(vals.mean()), batch_stderr(vals)


def gibbs_expectation(source, L: ReplicaFunctional, n_samples: int, seed: int, stream: int | tuple = 0,
                      burn_in: int = 1000, thinning: int = 1) -> tuple[float, float]:
    """Monte Carlo estimate of <L> with its standard error.

    ``source`` is an :class:`ExactEngine` (i.i.d. draws from the exact table),
    a pair of exact engines for coupled functionals, or an :class:`McmcEngine`
    (batch means over ``N_BATCHES`` batches).
    """
    stream = stream if isinstance(stream, tuple) else (stream,)
    if isinstance(source, McmcEngine):
        if L.coupled:
            raise ContractViolation("single MCMC engine cannot evaluate a coupled functional")
        if source.n_replicas < L.arity:
            raise ContractViolation(f"engine runs {source.n_replicas} replicas, functional needs {L.arity}")
        run = source.run(n_samples * thinning, burn_in, thinning, seed, stream)
        return run.estimate(L)
    engines = _engines(source)
    if (len(engines) == 2) != L.coupled:
        raise ContractViolation("functional coupling does not match the number of engines")
    draws = []
    for j in range(L.arity):
        per = [sample_exact(eng, seed, n_samples, stream + (j, q)) for q, eng in enumerate(engines)]
        draws.append(np.stack(per, axis=1) if L.coupled else per[0])
    vals = L(np.stack(draws, axis=1))
    if np.all(vals == vals[0]):
        return float(vals[0]), 0.0
    return _iid_estimate(vals)
