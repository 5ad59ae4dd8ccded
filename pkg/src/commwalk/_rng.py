"""Deterministic random-stream plumbing shared across the package.

Two kinds of randomness are used:

* *phase streams* — ordinary numpy ``Generator`` objects derived from a master
  seed through labeled ``SeedSequence`` children, one per named sampling phase
  (e.g. "internal-matching-0").  Draw order within a phase matters, but the
  phases never interleave.

* *keyed streams* — stateless counter-based draws addressed by integer keys.
  Used where a sampled value must not depend on the order in which it is first
  asked for (tree node expansion): the j-th uniform attached to key ``k`` under
  seed ``s`` is a pure function of ``(s, k, j)``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_INV53 = float(2.0**-53)


def _label_entropy(label: str) -> int:
    """Stable 64-bit integer for a phase label (process-independent)."""
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def phase_rng(master_seed: int, label: str) -> np.random.Generator:
    """Generator for one named sampling phase under ``master_seed``.

    Distinct labels give independent streams; the same (seed, label) pair
    always gives the same stream.
    """
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), _label_entropy(label)])
    return np.random.default_rng(ss)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point of the mix; silence numpy's scalar warning
    with np.errstate(over="ignore"):
        z = (x + _GOLDEN).astype(_U64, copy=False)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def keyed_bits(seed: int, key, counter) -> np.ndarray:
    """Vectorized 64-bit hash of (seed, key, counter), broadcast over arrays."""
    key = np.asarray(key, dtype=np.int64).astype(_U64)
    counter = np.asarray(counter, dtype=np.int64).astype(_U64)
    h = _splitmix64(np.asarray(_U64(int(seed) & (2**64 - 1))))
    h = _splitmix64(h ^ _splitmix64(key))
    return _splitmix64(h ^ _splitmix64(counter ^ _GOLDEN))


def keyed_uniform(seed: int, key, counter) -> np.ndarray:
    """Uniforms in [0, 1) addressed by (seed, key, counter); order-free."""
    bits = keyed_bits(seed, key, counter)
    return (bits >> _U64(11)).astype(np.float64) * _INV53


def spawn_seeds(master_seed: int, label: str, k: int) -> np.ndarray:
    """k reproducible child seeds for per-replicate generators."""
    rng = phase_rng(master_seed, label)
    return rng.integers(0, 2**63 - 1, size=k, dtype=np.int64)
