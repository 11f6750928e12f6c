"""Similarity scoring, max-over-alignment matching and flat-scan retrieval.

Similarity is the raw inner product of compact descriptors; sequences are
compared at every alignment of the shorter one inside the longer one and
the best alignment wins. The store is an in-memory flat scan serialized to
the ``VLACSTOR`` binary format (bit-exact round trip).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregation import METHOD_TAGS, CompactDescriptor
from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    EmptyStore,
    TruncatedFile,
)

_STORE_MAGIC = b"VLACSTOR"
_TAG_METHODS = {v: k for k, v in METHOD_TAGS.items()}


@dataclass(frozen=True)
class DescriptorSequence:
    """Ordered per-GoF descriptors of one video, a (G, d) float64 matrix."""

    video_id: str
    descriptors: np.ndarray
    method: str

    def __post_init__(self):
        mat = np.asarray(self.descriptors, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise DataError(
                f"sequence {self.video_id!r} needs a (G>=1, d) matrix, "
                f"got shape {mat.shape}"
            )
        object.__setattr__(self, "descriptors", mat)

    @property
    def length(self) -> int:
        return int(self.descriptors.shape[0])

    @property
    def d(self) -> int:
        return int(self.descriptors.shape[1])


def sequence_from_descriptors(
    video_id: str, descriptors: list[CompactDescriptor]
) -> DescriptorSequence:
    """Stack encode_video output into a DescriptorSequence."""
    if not descriptors:
        raise DataError(f"video {video_id!r} produced no descriptors")
    methods = {d.method for d in descriptors}
    if len(methods) > 1:
        raise DataError(f"descriptors mix methods {sorted(methods)}")
    return DescriptorSequence(
        video_id=video_id,
        descriptors=np.stack([d.values for d in descriptors]),
        method=methods.pop(),
    )


@dataclass(frozen=True)
class RankedMatch:
    video_id: str
    score: float
    offset: int


@dataclass(frozen=True)
class RetrievalResult:
    matches: tuple[RankedMatch, ...]


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def similarity(a, b) -> float:
    """Inner product of two compact descriptors."""
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(
            f"descriptors have shapes {va.shape} and {vb.shape}"
        )
    return float(np.dot(va, vb))


def aligned_similarity(
    query: DescriptorSequence,
    target: DescriptorSequence,
    *,
    strict_paper_range: bool = False,
) -> tuple[float, int]:
    """Best inner-product sum over all alignments of the shorter sequence.

    The shorter of the two sequences is slid over the longer one; at shift
    k the score is the sum of per-position inner products. Returns the
    maximum score and its shift, ties resolved to the smallest shift.

    By default the shift range is {0, ..., G2 - G1}, which always includes
    the identity alignment. ``strict_paper_range`` restricts it to
    {1, ..., G2 - G1}, which is empty for equal lengths and then raises.
    """
    if query.d != target.d:
        raise DimensionMismatch(
            f"sequences have descriptor dims {query.d} and {target.d}"
        )
    if query.method != target.method:
        raise DataError(
            f"sequences mix methods {query.method!r} and {target.method!r}"
        )
    short, long_ = query.descriptors, target.descriptors
    if short.shape[0] > long_.shape[0]:
        short, long_ = long_, short
    g1, g2 = short.shape[0], long_.shape[0]
    first_k = 1 if strict_paper_range else 0
    if first_k > g2 - g1:
        raise DataError(
            "strict alignment range {1..G2-G1} is empty for equal lengths"
        )
    scores = np.array(
        [
            np.sum(short * long_[k : k + g1])
            for k in range(first_k, g2 - g1 + 1)
        ]
    )
    best = int(np.argmax(scores))
    return float(scores[best]), best + first_k


def retrieve(
    query: DescriptorSequence,
    store,
    *,
    threshold: float | None = None,
    top_k: int | None = None,
    normalize_by_length: bool = False,
    strict_paper_range: bool = False,
) -> RetrievalResult:
    """Rank store entries by aligned similarity to the query.

    Exactly one of ``threshold`` (keep scores >= threshold) and ``top_k``
    (keep the k best; 0 keeps everything) must be given. The ranking sorts
    by score descending with video_id as the tie-breaker, so equal inputs
    always produce identical output. ``normalize_by_length`` divides each
    score by the aligned length for cross-length comparability.
    """
    if (threshold is None) == (top_k is None):
        raise ValueError("pass exactly one of threshold= or top_k=")
    entries = list(store)
    if not entries:
        raise EmptyStore("cannot retrieve from an empty store")
    matches = []
    for seq in entries:
        score, offset = aligned_similarity(
            query, seq, strict_paper_range=strict_paper_range
        )
        if normalize_by_length:
            score /= min(query.length, seq.length)
        matches.append(RankedMatch(seq.video_id, score, offset))
    matches.sort(key=lambda m: (-m.score, m.video_id))
    if threshold is not None:
        matches = [m for m in matches if m.score >= threshold]
    elif top_k:
        matches = matches[: int(top_k)]
    return RetrievalResult(matches=tuple(matches))


def write_store(sequences, path, *, overwrite: bool = False) -> None:
    """Serialize sequences to a VLACSTOR file (bit-exact round trip)."""
    sequences = list(sequences)
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite=True to replace")
    with open(path, "wb") as fh:
        fh.write(_STORE_MAGIC)
        for seq in sequences:
            encoded = seq.video_id.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(
                struct.pack(
                    "<IIB", seq.length, seq.d, METHOD_TAGS[seq.method]
                )
            )
            fh.write(seq.descriptors.astype("<f4").tobytes(order="C"))


def load_store(path) -> list[DescriptorSequence]:
    """Read sequences from a VLACSTOR file."""
    path = Path(path)
    sequences = []
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _STORE_MAGIC:
            raise BadMagic(f"{path} is not a VLACSTOR file")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedFile(f"{path} ended inside a record header")
            (id_len,) = struct.unpack("<I", head)
            raw_id = fh.read(id_len)
            rest = fh.read(9)
            if len(raw_id) != id_len or len(rest) != 9:
                raise TruncatedFile(f"{path} ended inside a record header")
            g, d, tag = struct.unpack("<IIB", rest)
            if tag not in _TAG_METHODS:
                raise DataError(f"{path} has unknown method tag {tag}")
            payload = fh.read(g * d * 4)
            if len(payload) != g * d * 4:
                raise TruncatedFile(f"{path} record payload is truncated")
            sequences.append(
                DescriptorSequence(
                    video_id=raw_id.decode("utf-8"),
                    descriptors=np.frombuffer(payload, dtype="<f4")
                    .reshape(g, d)
                    .astype(np.float64),
                    method=_TAG_METHODS[tag],
                )
            )
    return sequences
