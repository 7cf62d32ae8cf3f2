"""Cluster attributes, sample weights, class prototypes, pseudo-logits.

The pipeline refines weak source-model predictions through the geometry
of the embedding space.  Each cluster of a partition gets three
attributes:

* an affinity score: the maximum entry of the cluster's mean logit
  vector, high when the source model labels the cluster consistently;
* a class prior: the fraction of members the source model assigns to
  each class;
* a class conditional mean: the mean feature vector of the members
  assigned to each class.

The affinity score is normalized by subtracting, scaled by cluster size,
the smallest per-member score across clusters, so the weakest cluster
lands at exactly zero and everything else stays nonnegative.  Per-sample
weights derived from these scores (or from the simpler softmax/logit
schemes) feed a weighted per-class average of the features, and the
unit-normalized class prototypes score every sample by temperature-scaled
cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import read_matrix, write_matrix
from .cluster import McPartitions, Partition
from .embstore import EmbeddingSet, SourceLogits
from .errors import (AllClassesUndefined, EmptyCluster, MissingPartitions,
                     UndefinedPrototype, ZeroNormEmbedding)

PSL_MAGIC = "PSL1"

SCHEMES = ("uniform", "msp", "mls", "csas")

DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class ClusterAttributes:
    """Per-cluster statistics of a single partition.

    ``cond_mean`` rows for classes absent from a cluster are zero and
    masked out in ``valid``; their prior is zero as well.
    """

    csas: np.ndarray        # (k,) max of mean member logits
    csas_norm: np.ndarray   # (k,) normalized score, >= 0, min-ratio cluster = 0
    sizes: np.ndarray       # (k,) member counts
    prior: np.ndarray       # (k, c) argmax fractions, rows sum to 1
    cond_mean: np.ndarray   # (k, c, d) per-class mean features
    valid: np.ndarray       # (k, c) True where the class occurs in the cluster


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-sample weights under one weighting scheme.

    An all-zero vector is representable (a degenerate single-cluster
    partition produces one); it surfaces as AllClassesUndefined when
    prototypes are requested.
    """

    scheme: str
    zeta: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=np.float64)
        if (z < 0).any():
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "zeta", z)


@dataclass(frozen=True)
class PrototypeSet:
    """Weighted class prototypes with unit-normalized counterparts."""

    protos: np.ndarray        # (c, d)
    protos_norm: np.ndarray   # (c, d), unit rows where defined
    tau: float
    defined_mask: np.ndarray  # (c,) False where a class had no weighted mass

    @property
    def c(self) -> int:
        return self.protos.shape[0]


@dataclass(frozen=True)
class PseudoLabelSet:
    """Temperature-scaled cosine logits plus derived hard labels."""

    logits: np.ndarray  # (n, c), every entry in [-1/tau, 1/tau]
    hard: np.ndarray    # (n,) argmax labels
    conf: np.ndarray    # (n,) maximum logit per row

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def c(self) -> int:
        return self.logits.shape[1]


def csas(l: SourceLogits, members) -> float:
    """Affinity score of a member set: max entry of its mean logit vector."""
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise EmptyCluster("cannot score an empty member set")
    return float(l.data[members].mean(axis=0).max())


def normalize_csas(scores, sizes) -> np.ndarray:
    """Shift per-cluster scores so the weakest per-member ratio is zero.

    Computed as ``size * (score/size - min_ratio)`` so the arg-min
    cluster maps to exactly 0 and no output can round below zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    if (sizes < 1).any():
        raise EmptyCluster("every cluster must have at least one member")
    ratios = scores / sizes
    return sizes * (ratios - ratios.min())


def cluster_attributes(l: SourceLogits, e: EmbeddingSet,
                       p: Partition) -> ClusterAttributes:
    """Compute affinity scores, priors, and conditional means per cluster."""
    k, c, d = p.k, l.c, e.d
    hard = source_argmax(l)
    sizes = np.bincount(p.assign, minlength=k)
    if (sizes == 0).any():
        raise EmptyCluster("partition contains an empty cluster")

    mean_logits = np.zeros((k, c))
    np.add.at(mean_logits, p.assign, l.data)
    mean_logits /= sizes[:, None]
    scores = mean_logits.max(axis=1)

    counts = np.zeros((k, c))
    np.add.at(counts, (p.assign, hard), 1.0)
    prior = counts / sizes[:, None]

    feat_sums = np.zeros((k, c, d))
    np.add.at(feat_sums, (p.assign, hard), e.data)
    valid = counts > 0
    cond_mean = np.zeros((k, c, d))
    np.divide(feat_sums, counts[:, :, None], out=cond_mean,
              where=counts[:, :, None] > 0)

    return ClusterAttributes(csas=scores,
                             csas_norm=normalize_csas(scores, sizes),
                             sizes=sizes, prior=prior,
                             cond_mean=cond_mean, valid=valid)


def source_argmax(l: SourceLogits) -> np.ndarray:
    """Hard source predictions; ties resolve to the lowest class index."""
    return np.argmax(l.data, axis=1).astype(np.int64)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def zeta_weights(scheme: str, l: SourceLogits,
                 mc: McPartitions = None) -> WeightVector:
    """Per-sample weights used when averaging features into prototypes.

    uniform  all ones
    msp      maximum softmax probability of the source logits
    mls      maximum logit, shifted by the dataset minimum so weights
             stay nonnegative
    csas     per-run normalized cluster score divided by cluster size,
             averaged over the Monte-Carlo partitions (requires ``mc``)
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "uniform":
        return WeightVector(scheme, np.ones(l.n))
    if scheme == "msp":
        return WeightVector(scheme, _softmax_rows(l.data).max(axis=1))
    if scheme == "mls":
        max_logit = l.data.max(axis=1)
        return WeightVector(scheme, max_logit - max_logit.min())
    if mc is None:
        raise MissingPartitions("csas weighting needs Monte-Carlo partitions")
    per_run = np.empty((mc.n_mc, l.n))
    for r, p in enumerate(mc.runs):
        sizes = np.bincount(p.assign, minlength=p.k).astype(np.float64)
        mean_logits = np.zeros((p.k, l.c))
        np.add.at(mean_logits, p.assign, l.data)
        mean_logits /= sizes[:, None]
        norm = normalize_csas(mean_logits.max(axis=1), sizes)
        per_run[r] = norm[p.assign] / sizes[p.assign]
    # np.mean reduces pairwise, so the aggregate is schedule-independent.
    return WeightVector("csas", per_run.mean(axis=0))


def prototypes(e: EmbeddingSet, l: SourceLogits, zeta: WeightVector,
               tau: float = DEFAULT_TAU) -> PrototypeSet:
    """Weighted per-class feature averages (classes chosen by source argmax).

    A class with no positive weighted mass is marked undefined rather
    than silently becoming a zero vector; if every class is undefined
    the operation fails.
    """
    if e.n != l.n or e.n != zeta.zeta.shape[0]:
        raise ValueError("embeddings, logits, and weights must be row-aligned")
    if tau <= 0:
        raise ValueError("tau must be positive")
    c, d = l.c, e.d
    hard = source_argmax(l)
    weights = np.zeros((e.n, c))
    weights[np.arange(e.n), hard] = zeta.zeta
    denom = weights.sum(axis=0)
    numer = weights.T @ e.data

    protos = np.zeros((c, d))
    np.divide(numer, denom[:, None], out=protos, where=denom[:, None] > 0)
    norms = np.linalg.norm(protos, axis=1)
    defined = (denom > 0) & (norms > 0)
    if not defined.any():
        raise AllClassesUndefined("no class carries positive weighted mass")
    protos_norm = np.zeros_like(protos)
    np.divide(protos, norms[:, None], out=protos_norm,
              where=defined[:, None])
    return PrototypeSet(protos=protos, protos_norm=protos_norm, tau=tau,
                        defined_mask=defined)


def prototypes_from_attributes(attrs: ClusterAttributes,
                               tau: float = DEFAULT_TAU) -> PrototypeSet:
    """Prototypes from cluster attributes alone.

    Each class averages the cluster conditional means weighted by
    prior * normalized score; algebraically identical to the sample-level
    route with the cluster-score weighting scheme.
    """
    w = attrs.prior * attrs.csas_norm[:, None]          # (k, c)
    denom = w.sum(axis=0)                               # (c,)
    numer = np.einsum("kc,kcd->cd", w, attrs.cond_mean)
    c, d = attrs.prior.shape[1], attrs.cond_mean.shape[2]
    protos = np.zeros((c, d))
    np.divide(numer, denom[:, None], out=protos, where=denom[:, None] > 0)
    norms = np.linalg.norm(protos, axis=1)
    defined = (denom > 0) & (norms > 0)
    if not defined.any():
        raise AllClassesUndefined("no class carries positive weighted mass")
    protos_norm = np.zeros_like(protos)
    np.divide(protos, norms[:, None], out=protos_norm, where=defined[:, None])
    return PrototypeSet(protos=protos, protos_norm=protos_norm, tau=tau,
                        defined_mask=defined)


def pseudo_logits(e: EmbeddingSet, ps: PrototypeSet) -> PseudoLabelSet:
    """Temperature-scaled cosine similarity of each sample to each prototype."""
    if not ps.defined_mask.all():
        missing = np.flatnonzero(~ps.defined_mask).tolist()
        raise UndefinedPrototype(f"classes {missing} have no prototype")
    if e.d != ps.protos_norm.shape[1]:
        raise ValueError("embedding and prototype dimensions differ")
    norms = np.linalg.norm(e.data, axis=1)
    if (norms == 0).any():
        raise ZeroNormEmbedding("zero-norm embedding row cannot be scored")
    unit = e.data / norms[:, None]
    logits = (unit @ ps.protos_norm.T) / ps.tau
    return PseudoLabelSet(logits=logits,
                          hard=np.argmax(logits, axis=1).astype(np.int64),
                          conf=logits.max(axis=1))


def compute_pseudo_labels(e: EmbeddingSet, l: SourceLogits, scheme: str,
                          mc: McPartitions = None,
                          tau: float = DEFAULT_TAU) -> PseudoLabelSet:
    """Convenience wrapper: weights -> prototypes -> pseudo-logits."""
    zeta = zeta_weights(scheme, l, mc)
    return pseudo_logits(e, prototypes(e, l, zeta, tau))


def save_pseudolabels(path, psl: PseudoLabelSet) -> None:
    write_matrix(path, PSL_MAGIC, psl.logits)


def load_pseudolabels(path) -> PseudoLabelSet:
    logits = read_matrix(path, PSL_MAGIC)
    return PseudoLabelSet(logits=logits,
                          hard=np.argmax(logits, axis=1).astype(np.int64),
                          conf=logits.max(axis=1))
