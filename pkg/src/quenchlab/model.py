"""Feature families and quenched Hamiltonians.

A disordered Hamiltonian is written as ``sum_e gamma_e * y_e * f_e(sigma)``
where every feature ``f_e`` is bounded by 1. Product features (monomials in
the spins, possibly with repeated indices) cover the mixed p-spin, EA and RFIM
models; a tabulated block covers arbitrary features on small systems.

The deterministic remainder of the energy (uniform field, RFIM ferromagnetic
bonds, arbitrary per-configuration log-weights) is the :class:`BaseMeasure`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import bits
from .disorder import DisorderDistribution
from .errors import CapacityError, ConfigError, ContractViolation, DomainError
from .rng import make_rng

TENSOR_GUARD = 10**8
_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# feature families
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FeatureBlock:
    """A homogeneous group of features sharing one construction rule.

    ``order > 0``: product features ``f_e = sigma_{i_1} ... sigma_{i_p}``. With
    ``sites=None`` the block is the full tensor ``{0..N-1}^p`` in lexicographic
    order (repeated indices included); otherwise ``sites`` is an (m, p) array.

    ``order == 0``: tabulated features, ``table`` has shape (m, 2**N).
    """

    name: str
    n_spins: int
    order: int
    gamma: float | np.ndarray
    sites: np.ndarray | None = None
    table: np.ndarray | None = None

    @property
    def size(self) -> int:
        if self.table is not None:
            return self.table.shape[0]
        if self.sites is None:
            return self.n_spins**self.order
        return self.sites.shape[0]

    @property
    def full_tensor(self) -> bool:
        return self.order > 0 and self.sites is None

    def gamma_at(self, idx) -> np.ndarray:
        if np.ndim(self.gamma) == 0:
            return np.full(len(idx), float(self.gamma))
        return np.asarray(self.gamma)[idx]

    def sites_at(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.sites is not None:
            return self.sites[idx]
        n, p = self.n_spins, self.order
        powers = n ** np.arange(p - 1, -1, -1, dtype=np.int64)
        return (idx[:, None] // powers[None, :]) % n

    def masks_at(self, idx) -> np.ndarray:
        if self.order == 0:
            raise ContractViolation("tabulated features have no monomial mask")
        s = self.sites_at(idx).astype(np.uint64)
        out = np.zeros(len(s), dtype=np.uint64)
        for col in range(s.shape[1]):
            out ^= np.uint64(1) << s[:, col]
        return out

    def values_at(self, spins, idx) -> np.ndarray:
        """Feature values, shape (B, len(idx)), for spins of shape (B, N)."""
        spins = np.asarray(spins)
        if self.order == 0:
            codes = np.array([bits.encode(row) for row in spins], dtype=np.int64)
            return self.table[np.asarray(idx)][:, codes].T.astype(float)
        s = self.sites_at(idx)
        out = np.ones((spins.shape[0], len(s)))
        for col in range(s.shape[1]):
            out *= spins[:, s[:, col]]
        return out


@dataclass(frozen=True, eq=False)
class FeatureFamily:
    """The index set E with features f_e and coefficients gamma_e."""

    n_spins: int
    blocks: tuple

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def offsets(self) -> list[int]:
        out, acc = [], 0
        for b in self.blocks:
            out.append(acc)
            acc += b.size
        return out

    @property
    def sum_gamma_sq(self) -> float:
        total = 0.0
        for b in self.blocks:
            if np.ndim(b.gamma) == 0:
                total += b.size * float(b.gamma) ** 2
            else:
                total += float(np.sum(np.asarray(b.gamma) ** 2))
        return total

    def block(self, name: str) -> FeatureBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def subfamily(self, *names) -> "FeatureFamily":
        return FeatureFamily(self.n_spins, tuple(self.block(n) for n in names))

    def block_slice(self, name: str) -> slice:
        for b, off in zip(self.blocks, self.offsets):
            if b.name == name:
                return slice(off, off + b.size)
        raise KeyError(name)

    def with_gamma(self, gammas: Mapping[str, float | np.ndarray]) -> "FeatureFamily":
        """Same features, coefficients replaced block by block (missing names kept)."""
        blocks = []
        for b in self.blocks:
            g = gammas.get(b.name, b.gamma)
            blocks.append(FeatureBlock(b.name, b.n_spins, b.order, g, b.sites, b.table))
        return FeatureFamily(self.n_spins, tuple(blocks))

    def chunks(self, chunk: int = _CHUNK):
        """Yield ``(block, global_offset, local_indices)`` covering E in order."""
        for b, off in zip(self.blocks, self.offsets):
            for start in range(0, b.size, chunk):
                yield b, off + start, np.arange(start, min(start + chunk, b.size))

    def gamma_vector(self) -> np.ndarray:
        self._guard()
        return np.concatenate([b.gamma_at(np.arange(b.size)) for b in self.blocks]) if self.blocks else np.zeros(0)

    def feature_values(self, spins) -> np.ndarray:
        """Materialize every feature on a batch of configurations, shape (B, |E|)."""
        spins = np.atleast_2d(np.asarray(spins))
        self._check_spins(spins)
        self._guard(spins.shape[0])
        return np.concatenate([b.values_at(spins, np.arange(b.size)) for b in self.blocks], axis=1)

    def feature_table(self, e: int) -> np.ndarray:
        """Values of the single feature ``e`` on every configuration (length 2**N)."""
        for b, off in zip(self.blocks, self.offsets):
            if off <= e < off + b.size:
                if b.order == 0:
                    return np.asarray(b.table[e - off], dtype=float)
                mask = b.masks_at(np.array([e - off]))[0]
                return bits.parity_sign(np.arange(1 << self.n_spins, dtype=np.uint64), mask).astype(float)
        raise IndexError(e)

    def gamma_of(self, e: int) -> float:
        for b, off in zip(self.blocks, self.offsets):
            if off <= e < off + b.size:
                return float(b.gamma_at(np.array([e - off]))[0])
        raise IndexError(e)

    def energy(self, y, spins) -> np.ndarray:
        """sum_e gamma_e y_e f_e(sigma), streamed over feature chunks; spins (B, N)."""
        spins = np.atleast_2d(np.asarray(spins))
        self._check_spins(spins)
        y = np.asarray(y, dtype=float)
        if y.shape != (self.size,):
            raise ContractViolation(f"realization has {y.shape} values, family has {self.size}")
        out = np.zeros(spins.shape[0])
        for b, off, idx in self.chunks():
            coef = b.gamma_at(idx) * y[off + idx]
            out += b.values_at(spins, idx) @ coef
        return out

    def multilinear(self, y, dense: bool = False):
        """Collapse ``sum_e gamma_e y_e f_e`` into monomial coefficients.

        Returns ``(masks, coefs)`` with unique masks, or with ``dense=True`` a
        length-2**N coefficient vector indexed by mask. Product features only.
        """
        y = np.asarray(y, dtype=float)
        if dense:
            if self.n_spins > bits.MAX_ENUM_SPINS:
                raise CapacityError("dense coefficients need N <= 24")
            acc = np.zeros(1 << self.n_spins)
            for b, off, idx in self.chunks():
                acc += np.bincount(b.masks_at(idx).astype(np.int64), b.gamma_at(idx) * y[off + idx],
                                   minlength=acc.size)
            return acc
        masks, coefs = [], []
        for b, off, idx in self.chunks():
            masks.append(b.masks_at(idx))
            coefs.append(b.gamma_at(idx) * y[off + idx])
        if not masks:
            return np.zeros(0, dtype=np.uint64), np.zeros(0)
        return _merge_monomials(np.concatenate(masks), np.concatenate(coefs))

    def mean_feature_table(self) -> np.ndarray:
        """M(sigma) = |E|^-1 sum_e f_e(sigma) on every configuration.

        For product features the XOR of two configurations maps
        ``f_e(rho) f_e(tau)`` to ``f_e(rho ^ tau)``, so the same table also gives
        the feature-space cross overlap indexed by ``rho ^ tau``.
        """
        n = self.n_spins
        if n > bits.MAX_ENUM_SPINS:
            raise CapacityError("tables need N <= 24")
        codes = np.arange(1 << n, dtype=np.uint64)
        total = np.zeros(1 << n)
        for b in self.blocks:
            if b.order == 0:
                total += np.asarray(b.table, dtype=float).sum(axis=0)
            elif b.full_tensor:
                m = bits.site_overlap_values(n)
                total += b.size * m**b.order
            else:
                counts = np.bincount(b.masks_at(np.arange(b.size)).astype(np.int64), minlength=1 << n)
                nz = np.flatnonzero(counts)
                for mask in nz:
                    total += counts[mask] * bits.parity_sign(codes, mask)
        return total / self.size

    def _check_spins(self, spins):
        if spins.shape[-1] != self.n_spins:
            raise ContractViolation(f"configuration has {spins.shape[-1]} spins, family has {self.n_spins}")

    def _guard(self, batch: int = 1):
        if self.size * batch > TENSOR_GUARD:
            raise CapacityError(f"materializing {self.size} x {batch} feature values exceeds guard")


def _merge_monomials(masks, coefs):
    uniq, inv = np.unique(masks, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), coefs)


# ---------------------------------------------------------------------------
# deterministic base measure
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BaseMeasure:
    """Deterministic log-weights: a multilinear part plus an optional table."""

    n_spins: int
    masks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))
    coefs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_weights: np.ndarray | None = None

    @classmethod
    def uniform_field(cls, n: int, h: float) -> "BaseMeasure":
        if h == 0:
            return cls(n)
        masks = np.uint64(1) << np.arange(n, dtype=np.uint64)
        return cls(n, masks, np.full(n, float(h)))

    def table(self) -> np.ndarray:
        """log-weight of every configuration (length 2**N)."""
        n = self.n_spins
        dense = np.zeros(1 << n)
        np.add.at(dense, self.masks.astype(np.int64), self.coefs)
        out = bits.fwht(dense)
        if self.log_weights is not None:
            out = out + self.log_weights
        return out

    def evaluate(self, spins) -> np.ndarray:
        spins = np.atleast_2d(np.asarray(spins))
        codes = np.array([bits.encode(r) for r in spins], dtype=np.uint64)
        out = np.zeros(len(codes))
        for m, c in zip(self.masks, self.coefs):
            out += c * bits.parity_sign(codes, m)
        if self.log_weights is not None:
            out += self.log_weights[codes.astype(np.int64)]
        return out


# ---------------------------------------------------------------------------
# model descriptions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MixedPSpin:
    beta: Mapping[int, float]
    h: float
    N: int
    kind: str = "mixed_pspin"


@dataclass(frozen=True)
class EAGraph:
    n_vertices: int
    edges: tuple
    beta: float
    gamma_field: float
    kind: str = "ea"


@dataclass(frozen=True)
class RFIM:
    dims: tuple
    beta: float
    gamma_field: float
    kind: str = "rfim"

    @property
    def n_vertices(self) -> int:
        return math.prod(self.dims)

    @property
    def edges(self) -> tuple:
        return grid_edges(self.dims)[1]


@dataclass(frozen=True, eq=False)
class GenericFamily:
    family: FeatureFamily
    base_log_weights: np.ndarray | None = None
    kind: str = "generic"


def grid_edges(dims: Sequence[int], periodic: bool = False):
    """Nearest-neighbour edges of a rectangular grid, vertices in C order."""
    dims = tuple(int(d) for d in dims)
    n = math.prod(dims)
    index = np.arange(n).reshape(dims)
    edges = []
    for axis, d in enumerate(dims):
        if d < 2:
            continue
        a = index
        b = np.roll(index, -1, axis=axis)
        if not periodic:
            sl = [slice(None)] * len(dims)
            sl[axis] = slice(0, d - 1)
            a, b = a[tuple(sl)], b[tuple(sl)]
        elif d == 2:
            # wrapping a length-2 axis duplicates the edge
            sl = [slice(None)] * len(dims)
            sl[axis] = slice(0, 1)
            a, b = a[tuple(sl)], b[tuple(sl)]
        edges.extend(zip(a.ravel().tolist(), b.ravel().tolist()))
    edges = sorted((min(i, j), max(i, j)) for i, j in edges)
    return n, tuple(edges)


def build_family(spec) -> FeatureFamily:
    """Feature family carrying the disordered part of ``spec``."""
    if isinstance(spec, MixedPSpin):
        if spec.N < 1:
            raise DomainError("N must be >= 1")
        blocks = []
        for p in sorted(spec.beta):
            b = float(spec.beta[p])
            if p < 2:
                raise DomainError("mixed p-spin orders must be >= 2")
            if b < 0:
                raise DomainError("beta_p must be nonnegative")
            if b == 0:
                continue
            if spec.N**p > TENSOR_GUARD:
                raise CapacityError(f"N^p = {spec.N}^{p} exceeds {TENSOR_GUARD}")
            blocks.append(FeatureBlock(f"p{p}", spec.N, p, b * spec.N ** (-(p - 1) / 2)))
        return FeatureFamily(spec.N, tuple(blocks))
    if isinstance(spec, EAGraph):
        n = spec.n_vertices
        edges = _checked_edges(spec.edges, n)
        blocks = []
        if edges.size:
            blocks.append(FeatureBlock("bonds", n, 2, float(spec.beta), sites=edges))
        blocks.append(FeatureBlock("field", n, 1, float(spec.gamma_field), sites=np.arange(n)[:, None]))
        return FeatureFamily(n, tuple(blocks))
    if isinstance(spec, RFIM):
        n = spec.n_vertices
        return FeatureFamily(n, (FeatureBlock("field", n, 1, float(spec.gamma_field), sites=np.arange(n)[:, None]),))
    if isinstance(spec, GenericFamily):
        return spec.family
    raise ContractViolation(f"unsupported model spec {type(spec).__name__}")


def base_measure(spec) -> BaseMeasure:
    """Deterministic part of the energy for ``spec``."""
    if isinstance(spec, MixedPSpin):
        return BaseMeasure.uniform_field(spec.N, spec.h)
    if isinstance(spec, EAGraph):
        return BaseMeasure(spec.n_vertices)
    if isinstance(spec, RFIM):
        edges = np.asarray(spec.edges, dtype=np.uint64)
        if edges.size == 0:
            return BaseMeasure(spec.n_vertices)
        masks = (np.uint64(1) << edges[:, 0]) | (np.uint64(1) << edges[:, 1])
        return BaseMeasure(spec.n_vertices, masks, np.full(len(masks), float(spec.beta)))
    if isinstance(spec, GenericFamily):
        return BaseMeasure(spec.family.n_spins, log_weights=spec.base_log_weights)
    raise ContractViolation(f"unsupported model spec {type(spec).__name__}")


def _checked_edges(edges, n):
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n or np.any(arr[:, 0] == arr[:, 1])):
        raise ContractViolation("edges must join distinct vertices in range")
    return arr


# ---------------------------------------------------------------------------
# realizations
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class QuenchedRealization:
    values: np.ndarray
    source: str
    seed: int
    stream: tuple = ()

    def __len__(self):
        return len(self.values)


def realize(spec_or_family, dist: DisorderDistribution, seed: int, stream: int | tuple = 0) -> QuenchedRealization:
    """Draw one value per disordered index, deterministically in ``(seed, stream)``."""
    family = spec_or_family if isinstance(spec_or_family, FeatureFamily) else build_family(spec_or_family)
    family._guard()
    stream = stream if isinstance(stream, tuple) else (stream,)
    values = dist.draw(make_rng(seed, *stream), family.size)
    return QuenchedRealization(values, dist.name, int(seed), stream)


def energy(family: FeatureFamily, realization, spins, external: BaseMeasure | None = None) -> np.ndarray:
    """H_y(sigma) plus the deterministic part, for spins of shape (N,) or (B, N)."""
    y = realization.values if isinstance(realization, QuenchedRealization) else realization
    single = np.ndim(spins) == 1
    out = family.energy(y, spins)
    if external is not None:
        out = out + external.evaluate(spins)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# coupled systems
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CoupledSpec:
    """Two systems on one feature set sharing the disorder component ``y``.

    ``t``, ``gamma1`` and ``gamma2`` map block names to scalars (or per-index
    arrays); missing blocks default to ``t=1`` and the family's own gamma.
    """

    family: FeatureFamily
    t: Mapping[str, float | np.ndarray]
    gamma1: Mapping[str, float | np.ndarray]
    gamma2: Mapping[str, float | np.ndarray]
    base1: BaseMeasure
    base2: BaseMeasure

    def t_vector(self) -> np.ndarray:
        parts = []
        for b in self.family.blocks:
            t = self.t.get(b.name, 1.0)
            parts.append(np.broadcast_to(np.asarray(t, dtype=float), (b.size,)))
        t = np.concatenate(parts) if parts else np.zeros(0)
        if np.any(t < 0) or np.any(t > 1):
            raise DomainError("coupling t must lie in [0, 1]")
        return t

    @property
    def family1(self) -> FeatureFamily:
        return self.family.with_gamma(self.gamma1)

    @property
    def family2(self) -> FeatureFamily:
        return self.family.with_gamma(self.gamma2)


def coupled_pspin(spec1: MixedPSpin, spec2: MixedPSpin, t: Mapping[int, float]) -> CoupledSpec:
    """Coupled mixed p-spin pair; ``t`` maps p to the shared fraction t_p."""
    if spec1.N != spec2.N:
        raise ContractViolation("coupled systems need the same N")
    # listed orders are kept even at beta = 0 so both systems share one feature set
    orders = sorted(int(p) for p in set(spec1.beta) | set(spec2.beta))
    if any(p < 2 for p in orders):
        raise DomainError("mixed p-spin orders must be >= 2")
    union = MixedPSpin({p: 1.0 for p in orders}, 0.0, spec1.N)
    fam = build_family(union)
    n = spec1.N
    g1 = {f"p{p}": spec1.beta.get(p, 0.0) * n ** (-(p - 1) / 2) for p in orders}
    g2 = {f"p{p}": spec2.beta.get(p, 0.0) * n ** (-(p - 1) / 2) for p in orders}
    tt = {f"p{p}": float(t.get(p, 1.0)) for p in orders}
    return CoupledSpec(fam, tt, g1, g2, base_measure(spec1), base_measure(spec2))


def realize_coupled(cspec: CoupledSpec, dist_shared, dist_1, dist_2, seed: int, stream: int | tuple = 0):
    """Effective disorders sqrt(t) y + sqrt(1-t) y_j for the two systems.

    ``y``, ``y_1`` and ``y_2`` come from independent streams of ``seed``.
    """
    t = cspec.t_vector()
    stream = stream if isinstance(stream, tuple) else (stream,)
    size = cspec.family.size
    y = dist_shared.draw(make_rng(seed, *stream, 0), size)
    y1 = dist_1.draw(make_rng(seed, *stream, 1), size)
    y2 = dist_2.draw(make_rng(seed, *stream, 2), size)
    a, b = np.sqrt(t), np.sqrt(1.0 - t)
    r1 = QuenchedRealization(a * y + b * y1, f"coupled:{dist_shared.name}/{dist_1.name}", int(seed), stream + (1,))
    r2 = QuenchedRealization(a * y + b * y2, f"coupled:{dist_shared.name}/{dist_2.name}", int(seed), stream + (2,))
    return r1, r2


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------
_MODEL_KEYS = {
    "mixed_pspin": {"model", "N", "beta", "h"},
    "ea_grid": {"model", "dims", "beta", "gamma", "periodic"},
    "ea": {"model", "n_vertices", "edges", "beta", "gamma"},
    "rfim": {"model", "dims", "beta", "gamma"},
}


def spec_from_config(cfg: Mapping, **overrides):
    """Model spec from a JSON-style tree; ``overrides`` replace top-level keys."""
    cfg = {**cfg, **overrides}
    kind = cfg.get("model")
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"unknown model {kind!r}; expected one of {sorted(_MODEL_KEYS)}")
    extra = set(cfg) - _MODEL_KEYS[kind]
    if extra:
        raise ConfigError(f"unknown keys for model {kind!r}: {sorted(extra)}")
    try:
        if kind == "mixed_pspin":
            beta = {int(p): float(v) for p, v in cfg["beta"].items()}
            return MixedPSpin(beta, float(cfg.get("h", 0.0)), int(cfg["N"]))
        if kind == "ea_grid":
            n, edges = grid_edges(cfg["dims"], bool(cfg.get("periodic", False)))
            return EAGraph(n, edges, float(cfg["beta"]), float(cfg.get("gamma", 0.0)))
        if kind == "ea":
            edges = tuple(tuple(int(v) for v in e) for e in cfg["edges"])
            return EAGraph(int(cfg["n_vertices"]), edges, float(cfg["beta"]), float(cfg.get("gamma", 0.0)))
        return RFIM(tuple(int(d) for d in cfg["dims"]), float(cfg["beta"]), float(cfg["gamma"]))
    except KeyError as exc:
        raise ConfigError(f"model {kind!r} is missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"model {kind!r}: {exc}") from None


def all_index_tuples(n: int, p: int):
    """Lexicographic index tuples of the full tensor (test helper / small N only)."""
    return itertools.product(range(n), repeat=p)
