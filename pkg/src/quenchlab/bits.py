"""Bit-packed spin configurations.

A configuration of N <= 63 Ising spins is stored as an integer ``s`` whose bit
``i`` is set exactly when ``sigma_i = -1``. With this convention the monomial
``prod_{i in S} sigma_i`` is ``(-1) ** popcount(s & S)``, so a multilinear
polynomial with coefficients ``c[S]`` evaluated on every configuration is the
(unnormalized) Walsh-Hadamard transform of ``c``.
"""

import numpy as np

from .errors import CapacityError, ContractViolation

MAX_MCMC_SPINS = 63
MAX_ENUM_SPINS = 24


def encode(spins) -> int:
    """Pack a +-1 vector into its integer code."""
    spins = np.asarray(spins)
    if spins.ndim != 1 or spins.size > MAX_MCMC_SPINS:
        raise ContractViolation("expected a 1-d configuration of at most 63 spins")
    if not np.all(np.abs(spins) == 1):
        raise ContractViolation("spins must be +-1")
    bits = np.flatnonzero(spins < 0)
    return int(sum(1 << int(i) for i in bits))


def decode(code: int, n: int) -> np.ndarray:
    """Unpack an integer code into an int8 +-1 vector of length ``n``."""
    code = int(code)
    if code < 0 or code >> n:
        raise ContractViolation(f"code {code} does not fit in {n} spins")
    out = np.ones(n, dtype=np.int8)
    for i in range(n):
        if (code >> i) & 1:
            out[i] = -1
    return out


def decode_many(codes, n: int) -> np.ndarray:
    """Vectorized :func:`decode`: (..., ) uint64 codes -> (..., n) int8 spins."""
    codes = np.asarray(codes, dtype=np.uint64)
    shifts = np.arange(n, dtype=np.uint64)
    bits = (codes[..., None] >> shifts) & np.uint64(1)
    return (1 - 2 * bits.astype(np.int8)).astype(np.int8)


def all_configs(n: int) -> np.ndarray:
    """All 2**n configurations as an int8 array of shape (2**n, n), row = code."""
    if n > MAX_ENUM_SPINS:
        raise CapacityError(f"enumeration limited to {MAX_ENUM_SPINS} spins, got {n}")
    return decode_many(np.arange(1 << n, dtype=np.uint64), n)


def parity_sign(codes, mask) -> np.ndarray:
    """(-1) ** popcount(codes & mask), broadcasting."""
    x = np.bitwise_and(np.asarray(codes, dtype=np.uint64), np.asarray(mask, dtype=np.uint64))
    return 1 - 2 * (np.bitwise_count(x) & 1).astype(np.int64)


def popcount(codes) -> np.ndarray:
    return np.bitwise_count(np.asarray(codes, dtype=np.uint64)).astype(np.int64)


def fwht(a) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the last axis.

    ``fwht(c)[s] = sum_S c[S] * (-1) ** popcount(s & S)``; applying it twice
    multiplies by the length.
    """
    a = np.array(a, dtype=float)
    size = a.shape[-1]
    if size & (size - 1):
        raise ContractViolation("length must be a power of two")
    lead = a.shape[:-1]
    h = 1
    while h < size:
        a = a.reshape(*lead, -1, 2, h)
        x, y = a[..., 0, :], a[..., 1, :]
        a = np.stack((x + y, x - y), axis=-2)
        h *= 2
    return a.reshape(*lead, size)


def site_overlap_values(n: int) -> np.ndarray:
    """Overlap 1 - 2|z|/n of two configurations whose XOR is z, for every z."""
    return 1.0 - 2.0 * popcount(np.arange(1 << n)) / n
