"""Bulk pairwise Jaccard matching over packed bit vectors.

One match task covers the full cross product between the vectors of two
clients.  Vectors are kept byte-packed; intersection and union sizes come
from bitwise AND/OR plus population counts, vectorised over row chunks so
a desk-scale cross product of a few million pairs finishes in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pprl.masking import BitVector
from pprl.similarity import ClassifiedPair

__all__ = ["MatchTask", "VectorBlock", "match_pairwise", "pairwise_similarities"]

# np.bitwise_count needs numpy >= 2; keep a table fallback for 1.x.
if hasattr(np, "bitwise_count"):
    _popcount = np.bitwise_count
else:  # pragma: no cover - exercised only on old numpy
    _POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

    def _popcount(arr: np.ndarray) -> np.ndarray:
        return _POPCOUNT8[arr]


class VectorBlock:
    """An immutable batch of equal-length bit vectors, byte-packed.

    Row ``i`` of ``packed`` holds vector ``i`` in the same little-endian
    bit order as :class:`~pprl.masking.BitVector`.
    """

    __slots__ = ("packed", "bit_length")

    def __init__(self, packed: np.ndarray, bit_length: int) -> None:
        if packed.ndim != 2 or packed.dtype != np.uint8:
            raise ValueError("packed must be a 2-d uint8 array")
        if packed.shape[1] != (bit_length + 7) // 8:
            raise ValueError(
                f"{packed.shape[1]} bytes per row cannot hold "
                f"{bit_length} bits"
            )
        self.packed = packed
        self.packed.setflags(write=False)
        self.bit_length = bit_length

    @classmethod
    def from_vectors(cls, vectors: Sequence[BitVector]) -> "VectorBlock":
        if not vectors:
            raise ValueError("vector block must not be empty")
        length = vectors[0].length
        if any(v.length != length for v in vectors):
            raise ValueError("vectors in a block must share one length")
        rows = np.frombuffer(
            b"".join(v.data for v in vectors), dtype=np.uint8
        ).reshape(len(vectors), (length + 7) // 8)
        return cls(rows.copy(), length)

    @classmethod
    def from_payloads(
        cls, payloads: Sequence[bytes], bit_length: int
    ) -> "VectorBlock":
        return cls.from_vectors([BitVector(p, bit_length) for p in payloads])

    def __len__(self) -> int:
        return self.packed.shape[0]

    def vector(self, i: int) -> BitVector:
        return BitVector(self.packed[i].tobytes(), self.bit_length)


@dataclass(frozen=True)
class MatchTask:
    """Cross-product comparison of two clients' vector blocks."""

    session_id: str
    client_a: str
    client_b: str
    vectors_a: VectorBlock
    vectors_b: VectorBlock
    threshold: float

    def __post_init__(self) -> None:
        if self.client_a == self.client_b:
            raise ValueError("a match task needs two distinct clients")
        if self.vectors_a.bit_length != self.vectors_b.bit_length:
            raise ValueError(
                "vector bit lengths differ: "
                f"{self.vectors_a.bit_length} vs {self.vectors_b.bit_length}"
            )
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")

    @property
    def comparisons(self) -> int:
        return len(self.vectors_a) * len(self.vectors_b)


def _row_weights(packed: np.ndarray) -> np.ndarray:
    return _popcount(packed).sum(axis=1, dtype=np.int64)


def _chunk_similarities(
    chunk: np.ndarray,
    chunk_weights: np.ndarray,
    other: np.ndarray,
    other_weights: np.ndarray,
) -> np.ndarray:
    """Jaccard similarities between every row of ``chunk`` and ``other``.

    Union sizes come from |a| + |b| - |a AND b| so only the AND product
    has to be materialised.
    """
    inter = _popcount(chunk[:, None, :] & other[None, :, :]).sum(
        axis=2, dtype=np.int64
    )
    union = chunk_weights[:, None] + other_weights[None, :] - inter
    # Two all-zero vectors are identical by convention.
    sims = np.ones(inter.shape, dtype=np.float64)
    np.divide(inter, union, out=sims, where=union > 0)
    return sims


def match_pairwise(
    task: MatchTask, chunk_rows: int | None = None
) -> list[ClassifiedPair]:
    """Compare all vector pairs of a task and keep the matches.

    Returns one :class:`ClassifiedPair` per pair whose similarity
    reaches the task threshold (inclusive), referencing vectors by
    (client, index).  The cross product is processed in row chunks;
    the chunk size never affects the result, only peak memory.
    """
    a = task.vectors_a.packed
    b = task.vectors_b.packed
    if chunk_rows is None:
        # Keep the per-chunk AND product around 16 MiB.
        chunk_rows = max(1, (16 << 20) // max(1, b.shape[0] * b.shape[1]))
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    weights_a = _row_weights(a)
    weights_b = _row_weights(b)
    matches: list[ClassifiedPair] = []
    for start in range(0, a.shape[0], chunk_rows):
        chunk = a[start : start + chunk_rows]
        sims = _chunk_similarities(
            chunk, weights_a[start : start + chunk_rows], b, weights_b
        )
        hits = np.argwhere(sims >= task.threshold)
        for row, col in hits:
            matches.append(
                ClassifiedPair(
                    left_client=task.client_a,
                    left_index=start + int(row),
                    right_client=task.client_b,
                    right_index=int(col),
                    similarity=float(sims[row, col]),
                    is_match=True,
                )
            )
    return matches


def pairwise_similarities(
    a: VectorBlock, b: VectorBlock, chunk_rows: int | None = None
) -> np.ndarray:
    """Full |a| x |b| Jaccard similarity matrix between two blocks."""
    if a.bit_length != b.bit_length:
        raise ValueError(
            f"vector bit lengths differ: {a.bit_length} vs {b.bit_length}"
        )
    pa, pb = a.packed, b.packed
    if chunk_rows is None:
        chunk_rows = max(1, (16 << 20) // max(1, pb.shape[0] * pb.shape[1]))
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    weights_a = _row_weights(pa)
    weights_b = _row_weights(pb)
    out = np.empty((pa.shape[0], pb.shape[0]), dtype=np.float64)
    for start in range(0, pa.shape[0], chunk_rows):
        chunk = pa[start : start + chunk_rows]
        out[start : start + chunk.shape[0]] = _chunk_similarities(
            chunk, weights_a[start : start + chunk_rows], pb, weights_b
        )
    return out
