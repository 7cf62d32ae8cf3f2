"""Loading, validation, and alignment of the input artifacts.

Three binary formats feed the pipeline:

=======  =====================  =====================================
magic    payload                meaning
=======  =====================  =====================================
EMB1     n x d float32          target-domain feature vectors, one row
                                per sample
LGT1     n x c float32          unnormalized source-model logits,
                                row-aligned with EMB1
LBL1     n x 1 uint32           ground-truth labels; the header's cols
                                field carries the open-set threshold
                                (class ids >= threshold are open-set)
=======  =====================  =====================================

Values are stored at 32-bit precision and promoted to float64 on load.
Embeddings are deliberately not normalized here; normalization is a
consumer-side decision.  Loaded arrays are marked read-only so datasets
can be shared across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import CountMismatch, NonFiniteValue

EMB_MAGIC = "EMB1"
LGT_MAGIC = "LGT1"
LBL_MAGIC = "LBL1"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """n x d matrix of feature vectors plus per-row sample ids."""

    data: np.ndarray
    ids: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"embeddings must be n>=1 by d>=1, got {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteValue("embeddings contain NaN or Inf")
        ids = self.ids if self.ids is not None else np.arange(data.shape[0])
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "ids", _freeze(np.asarray(ids)))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SourceLogits:
    """n x c matrix of unnormalized source-model outputs."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 2:
            raise ValueError(f"logits must be n>=1 by c>=2, got {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteValue("logits contain NaN or Inf")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """Integer labels; ids >= ``openset_threshold`` are open-set classes."""

    labels: np.ndarray
    openset_threshold: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise ValueError("labels must be a nonempty vector")
        if labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        if self.openset_threshold < 1:
            raise ValueError("openset_threshold must be >= 1")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def is_open(self) -> np.ndarray:
        return self.labels >= self.openset_threshold


@dataclass(frozen=True)
class AlignedDataset:
    """Row-aligned bundle consumed by the downstream pipeline."""

    embeddings: EmbeddingSet
    logits: SourceLogits
    labels: LabelSet = None

    @property
    def n(self) -> int:
        return self.embeddings.n


def load_embeddings(path) -> EmbeddingSet:
    """Read an EMB1 file; sample ids default to the row index."""
    return EmbeddingSet(binio.read_matrix(path, EMB_MAGIC))


def save_embeddings(path, emb: EmbeddingSet) -> None:
    binio.write_matrix(path, EMB_MAGIC, emb.data)


def load_logits(path) -> SourceLogits:
    """Read an LGT1 file."""
    return SourceLogits(binio.read_matrix(path, LGT_MAGIC))


def save_logits(path, logits: SourceLogits) -> None:
    binio.write_matrix(path, LGT_MAGIC, logits.data)


def load_labels(path) -> LabelSet:
    """Read an LBL1 file.

    LBL1 reuses the shared header but repurposes the cols field as the
    open-set threshold; the payload is always n uint32 labels.
    """
    import struct

    from .errors import BadMagic, TruncatedFile

    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise BadMagic(f"{path}: file too short for a header")
        magic, n, threshold = struct.unpack("<4sII", header)
        if magic != LBL_MAGIC.encode("ascii"):
            raise BadMagic(f"{path}: expected magic {LBL_MAGIC!r}, found {magic!r}")
        payload = fh.read()
    if len(payload) != n * 4:
        raise TruncatedFile(
            f"{path}: header declares {n} labels ({n * 4} payload bytes), "
            f"found {len(payload)}"
        )
    labels = np.frombuffer(payload, dtype="<u4").astype(np.int64)
    return LabelSet(labels, int(threshold))


def save_labels(path, labels: LabelSet) -> None:
    import struct

    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", LBL_MAGIC.encode("ascii"), labels.n,
                             labels.openset_threshold))
        fh.write(labels.labels.astype("<u4").tobytes())


def validate_alignment(emb: EmbeddingSet, logits: SourceLogits,
                       labels: LabelSet = None) -> AlignedDataset:
    """Bundle the inputs, failing unless all sample counts agree."""
    counts = {"embeddings": emb.n, "logits": logits.n}
    if labels is not None:
        counts["labels"] = labels.n
    if len(set(counts.values())) != 1:
        detail = ", ".join(f"{k}.n={v}" for k, v in counts.items())
        raise CountMismatch(f"row counts disagree: {detail}")
    return AlignedDataset(emb, logits, labels)
