"""Record normalisation and hardened Bloom-filter encoding.

Implements the station-side masking pipeline: quasi-identifier values are
normalised, split into q-grams and hashed into a single bit vector per
record.  Every attribute feeds the same filter but receives its own salt
and its own number of hash functions, proportional to the attribute's
information content.  Optional hardening balances the filter to a fixed
Hamming weight and applies a secret bit permutation.

Everything in this module is pure and deterministic: the same record and
scheme always produce bit-identical vectors, in any process.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import random
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "AttributeSpec",
    "BitVector",
    "EncodingScheme",
    "PersonRecord",
    "RecordMismatchError",
    "SchemeError",
    "allocate_hash_counts",
    "encode",
    "estimate_weights",
    "jaccard",
    "preprocess",
    "tokenize",
]


class SchemeError(ValueError):
    """Raised when an encoding scheme violates a structural constraint."""


class RecordMismatchError(ValueError):
    """Raised when a record's attribute set differs from the scheme's."""


# Explicit ligature replacements.  NFKD decomposes the compatibility
# ligatures on its own, but the letters below survive normalisation and
# would otherwise be dropped by the ASCII filter.
_LIGATURES = {
    "ß": "ss",   # ß
    "ẞ": "SS",   # ẞ
    "æ": "ae",   # æ
    "Æ": "AE",   # Æ
    "œ": "oe",   # œ
    "Œ": "OE",   # Œ
    "ĳ": "ij",   # ĳ
    "Ĳ": "IJ",   # Ĳ
    "ﬀ": "ff",
    "ﬁ": "fi",
    "ﬂ": "fl",
    "ﬃ": "ffi",
    "ﬄ": "ffl",
    "ﬅ": "st",
    "ﬆ": "st",
}

_LIGATURE_TABLE = str.maketrans(_LIGATURES)


def preprocess(raw: str) -> str:
    """Normalise a quasi-identifier value for tokenisation.

    Applies, in order: ligature replacement, Unicode compatibility
    decomposition, removal of non-ASCII characters, lowercasing, and
    whitespace collapsing with end trimming.  The function is total and
    idempotent; its output is pure lowercase ASCII with single spaces.

    >>> preprocess("Müller")
    'muller'
    >>> preprocess("Straße")
    'strasse'
    >>> preprocess("  José   GARCÍA ")
    'jose garcia'
    """
    text = raw.translate(_LIGATURE_TABLE)
    text = unicodedata.normalize("NFKD", text)
    text = text.encode("ascii", "ignore").decode("ascii")
    text = text.lower()
    return " ".join(text.split())


def tokenize(value: str, q: int) -> frozenset[str]:
    """Split a preprocessed value into its set of padded q-grams.

    The value is padded with ``q - 1`` underscores on each side, then all
    contiguous substrings of length ``q`` are collected.  Set semantics:
    repeated q-grams collapse.  An empty value yields the empty set.

    >>> sorted(tokenize("anna", 2))
    ['_a', 'a_', 'an', 'na', 'nn']
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if not value:
        return frozenset()
    padded = "_" * (q - 1) + value + "_" * (q - 1)
    return frozenset(padded[i : i + q] for i in range(len(padded) - q + 1))


def estimate_weights(
    samples: Mapping[str, Sequence[str]], q: int = 2
) -> dict[str, float]:
    """Estimate per-attribute weights as token-distribution entropy.

    For each attribute the sample values are preprocessed and tokenised,
    and the Shannon entropy (base 2) of the empirical token distribution
    is returned.  Attributes whose values spread over many distinct
    tokens score high and later receive more hash functions.

    ``samples`` maps attribute name to a non-empty list of raw values.
    """
    weights: dict[str, float] = {}
    for name, values in samples.items():
        if len(values) == 0:
            raise ValueError(f"attribute {name!r} has no sample values")
        counts: Counter[str] = Counter()
        for value in values:
            counts.update(tokenize(preprocess(value), q))
        total = sum(counts.values())
        if total == 0:
            # All values empty after normalisation: no information.
            weights[name] = 0.0
            continue
        entropy = -sum(
            (c / total) * math.log2(c / total) for c in counts.values()
        )
        weights[name] = entropy
    return weights


def allocate_hash_counts(
    weights: Mapping[str, float], total_budget: int
) -> dict[str, int]:
    """Distribute a hash-function budget proportionally to weights.

    Each attribute receives ``max(1, round(budget * w / sum(w)))`` hash
    functions, so every attribute keeps at least one and higher-weighted
    attributes never receive fewer than lower-weighted ones.

    >>> allocate_hash_counts({"a": 3.0, "b": 1.0}, 20)
    {'a': 15, 'b': 5}
    """
    if not weights:
        raise ValueError("no attributes to allocate hash functions for")
    if total_budget < len(weights):
        raise ValueError(
            f"budget {total_budget} is below one hash per attribute"
        )
    if any(w < 0 for w in weights.values()):
        raise ValueError("weights must be non-negative")
    total = sum(weights.values())
    if total <= 0:
        raise ValueError("at least one attribute weight must be positive")
    return {
        name: max(1, round(total_budget * w / total))
        for name, w in weights.items()
    }


@dataclass(frozen=True)
class AttributeSpec:
    """Per-attribute encoding parameters.

    ``salt`` must be unique within a scheme; it separates the hash
    families of different attributes so equal tokens in different fields
    set different bits.
    """

    name: str
    weight: float
    hash_count: int
    salt: bytes

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemeError("attribute name must be non-empty")
        if self.weight < 0:
            raise SchemeError(f"attribute {self.name!r}: negative weight")
        if self.hash_count < 1:
            raise SchemeError(f"attribute {self.name!r}: hash_count < 1")


@dataclass(frozen=True)
class EncodingScheme:
    """Complete, self-contained description of one encoding run.

    Two stations holding the same scheme produce comparable vectors;
    any difference (secret, salts, filter size, q, balancing) makes the
    resulting vector populations unrelated.

    ``filter_bits`` is the pre-balancing filter length and must be a
    power of two so the double-hashing step distributes evenly.  With
    ``balanced`` set, emitted vectors have length ``2 * filter_bits`` and
    a fixed Hamming weight of ``filter_bits``.
    """

    filter_bits: int
    q: int
    attributes: tuple[AttributeSpec, ...]
    hash_secret: bytes
    permutation_seed: bytes
    balanced: bool = True

    def __post_init__(self) -> None:
        m = self.filter_bits
        if m < 8 or m & (m - 1) != 0:
            raise SchemeError(f"filter_bits must be a power of two >= 8, got {m}")
        if self.q < 1:
            raise SchemeError(f"q must be >= 1, got {self.q}")
        if not self.attributes:
            raise SchemeError("scheme needs at least one attribute")
        names = [spec.name for spec in self.attributes]
        if len(set(names)) != len(names):
            raise SchemeError("duplicate attribute names in scheme")
        salts = [spec.salt for spec in self.attributes]
        if len(set(salts)) != len(salts):
            raise SchemeError("attribute salts must be pairwise distinct")
        if not self.hash_secret:
            raise SchemeError("hash_secret must be non-empty")
        if not self.permutation_seed:
            raise SchemeError("permutation_seed must be non-empty")
        # Higher weight must never get fewer hash functions.
        for a in self.attributes:
            for b in self.attributes:
                if a.weight > b.weight and a.hash_count < b.hash_count:
                    raise SchemeError(
                        f"attribute {a.name!r} outweighs {b.name!r} "
                        "but has fewer hash functions"
                    )

    @property
    def attribute_names(self) -> frozenset[str]:
        return frozenset(spec.name for spec in self.attributes)

    @property
    def vector_bits(self) -> int:
        """Length of the vectors this scheme emits."""
        return 2 * self.filter_bits if self.balanced else self.filter_bits


@dataclass(frozen=True)
class PersonRecord:
    """A pseudonymised record: an opaque handle plus quasi-identifiers.

    The pseudonym carries no personal information; it is the only thing
    a station ever sends beyond its own boundary.
    """

    pseudonym: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.pseudonym:
            raise ValueError("pseudonym must be non-empty")


@dataclass(frozen=True)
class BitVector:
    """An immutable bit string, packed little-endian within bytes.

    Bit ``i`` lives in ``data[i >> 3]`` at position ``i & 7``.  Padding
    bits beyond ``length`` are always zero.
    """

    data: bytes
    length: int

    def __post_init__(self) -> None:
        if self.length < 0:
            raise ValueError("length must be non-negative")
        if len(self.data) != (self.length + 7) // 8:
            raise ValueError(
                f"payload of {len(self.data)} bytes does not hold "
                f"{self.length} bits"
            )
        if self.length % 8 and self.data[-1] >> (self.length % 8):
            raise ValueError("padding bits beyond length must be zero")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitVector":
        buf = bytearray((len(bits) + 7) // 8)
        for i, bit in enumerate(bits):
            if bit:
                buf[i >> 3] |= 1 << (i & 7)
        return cls(bytes(buf), len(bits))

    @classmethod
    def from_positions(cls, positions: Iterable[int], length: int) -> "BitVector":
        buf = bytearray((length + 7) // 8)
        for pos in positions:
            if not 0 <= pos < length:
                raise ValueError(f"bit position {pos} outside [0, {length})")
            buf[pos >> 3] |= 1 << (pos & 7)
        return cls(bytes(buf), length)

    def bit(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(f"bit index {i} outside [0, {self.length})")
        return (self.data[i >> 3] >> (i & 7)) & 1

    def bits(self) -> list[int]:
        return [self.bit(i) for i in range(self.length)]

    def weight(self) -> int:
        """Number of set bits."""
        return int.from_bytes(self.data, "little").bit_count()

    def as_int(self) -> int:
        return int.from_bytes(self.data, "little")


def jaccard(a: BitVector, b: BitVector) -> float:
    """Jaccard similarity of two equal-length bit vectors.

    ``|a AND b| / |a OR b|``.  Two all-zero vectors compare as 1.0 by
    convention: records that encode to nothing are indistinguishable.
    """
    if a.length != b.length:
        raise ValueError(
            f"vector lengths differ: {a.length} vs {b.length}"
        )
    ia = a.as_int()
    ib = b.as_int()
    union = (ia | ib).bit_count()
    if union == 0:
        return 1.0
    return (ia & ib).bit_count() / union


@lru_cache(maxsize=1 << 16)
def _token_hashes(secret: bytes, salt: bytes, token: str) -> tuple[int, int]:
    # Two independent keyed hashes per (attribute, token); the second is
    # forced odd so it generates the full index ring for power-of-two m.
    message = salt + token.encode("utf-8")
    h1 = int.from_bytes(hmac.digest(secret, message + b"\x01", "sha256"), "big")
    h2 = int.from_bytes(hmac.digest(secret, message + b"\x02", "sha256"), "big")
    return h1, h2 | 1


@lru_cache(maxsize=64)
def _permutation(seed: bytes, length: int) -> np.ndarray:
    """Fisher-Yates permutation of ``length`` indices, fixed by ``seed``."""
    rng = random.Random(int.from_bytes(hashlib.sha256(seed).digest(), "big"))
    perm = np.arange(length, dtype=np.int64)
    for i in range(length - 1, 0, -1):
        j = rng.randrange(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def encode(record: PersonRecord, scheme: EncodingScheme) -> BitVector:
    """Encode one record into a bit vector under the given scheme.

    Every attribute value is preprocessed, tokenised, and each token is
    double-hashed into the filter ``hash_count`` times.  With balancing
    enabled the filter is concatenated with its complement and permuted,
    yielding a constant-weight vector that resists frequency attacks.
    """
    missing = scheme.attribute_names - set(record.attributes)
    extra = set(record.attributes) - scheme.attribute_names
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing " + ", ".join(sorted(missing)))
        if extra:
            parts.append("unexpected " + ", ".join(sorted(extra)))
        raise RecordMismatchError(
            f"record {record.pseudonym!r}: " + "; ".join(parts)
        )

    m = scheme.filter_bits
    buf = bytearray(m // 8)
    for spec in scheme.attributes:
        tokens = tokenize(preprocess(record.attributes[spec.name]), scheme.q)
        for token in tokens:
            h1, h2 = _token_hashes(scheme.hash_secret, spec.salt, token)
            pos = h1 % m
            step = h2 % m
            for _ in range(spec.hash_count):
                buf[pos >> 3] |= 1 << (pos & 7)
                pos = (pos + step) % m

    if not scheme.balanced:
        return BitVector(bytes(buf), m)

    # Balancing: filter ++ complement has weight exactly m; the secret
    # permutation then hides which half a bit came from.
    packed = np.frombuffer(bytes(buf), dtype=np.uint8)
    bits = np.unpackbits(packed, bitorder="little")
    doubled = np.concatenate([bits, 1 - bits])
    permuted = doubled[_permutation(scheme.permutation_seed, 2 * m)]
    data = np.packbits(permuted, bitorder="little").tobytes()
    return BitVector(data, 2 * m)
