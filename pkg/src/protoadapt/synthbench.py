"""Synthetic embedding benchmark with controllable domain shift.

Classes are isotropic Gaussian clusters around orthonormal mean
directions.  The target domain applies an affine shift (paired Givens
rotations, a global scale, and a translation along a fixed random
direction) to fresh draws from the same closed-set clusters, and adds
open-set clusters that exist only in the target.  Open-set means sit
between two closed-set means plus a radial offset along an unused
orthonormal direction, so their difficulty is sweepable: they are well
separated in embedding space yet land near the surrogate source model's
decision boundaries.

The module also carries a deliberately naive re-implementation of the
whole pseudo-labeling pipeline (plain Python loops, formulas written
out one step at a time) used as an independent oracle in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import KMeansConfig, mc_partitions
from .embstore import EmbeddingSet, LabelSet, SourceLogits
from .errors import (AllClassesUndefined, DegenerateData, TooLargeForOracle,
                     UndefinedPrototype)
from .protolab import PseudoLabelSet


@dataclass(frozen=True)
class SynthConfig:
    d: int = 16
    c: int = 3                 # closed-set classes
    c_open: int = 2            # open-set classes (target only)
    n_per_class: int = 100
    rotation: float = 0.0      # radians, applied to consecutive coordinate pairs
    translation: float = 0.0   # magnitude along a fixed random unit direction
    scale: float = 1.0
    spread: float = 0.5        # per-class Gaussian standard deviation
    class_separation: float = 4.0
    open_offset: float = 2.0   # radial offset of open-set means
    seed: int = 0

    def __post_init__(self):
        if self.c < 2 or self.c_open < 1 or self.n_per_class < 1:
            raise ValueError("need c >= 2, c_open >= 1, n_per_class >= 1")
        if self.d < self.c + self.c_open:
            raise ValueError("d must be at least c + c_open for distinct means")


def _rotation_matrix(d: int, angle: float) -> np.ndarray:
    """Givens rotations by ``angle`` on coordinate pairs (0,1), (2,3), ..."""
    r = np.eye(d)
    ca, sa = math.cos(angle), math.sin(angle)
    for i in range(0, d - 1, 2):
        r[i, i] = ca
        r[i, i + 1] = -sa
        r[i + 1, i] = sa
        r[i + 1, i + 1] = ca
    return r


def gen_dataset(cfg: SynthConfig):
    """Returns ((source_emb, source_lbl), (target_emb, target_lbl))."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    total = cfg.c + cfg.c_open
    # Orthonormal mean directions keep inter-class distances controlled.
    basis, _ = np.linalg.qr(rng.normal(size=(cfg.d, total)))
    basis = basis.T  # rows are directions
    closed_means = cfg.class_separation * basis[:cfg.c]
    open_means = np.empty((cfg.c_open, cfg.d))
    for i in range(cfg.c_open):
        a, b = i % cfg.c, (i + 1) % cfg.c
        midpoint = 0.5 * (closed_means[a] + closed_means[b])
        open_means[i] = midpoint + cfg.open_offset * basis[cfg.c + i]

    t_dir = rng.normal(size=cfg.d)
    t_dir /= np.linalg.norm(t_dir)
    rot = _rotation_matrix(cfg.d, cfg.rotation)

    def draw(mean):
        return mean + cfg.spread * rng.normal(size=(cfg.n_per_class, cfg.d))

    src = np.concatenate([draw(m) for m in closed_means])
    src_labels = np.repeat(np.arange(cfg.c), cfg.n_per_class)

    tgt_blocks = [draw(m) for m in closed_means] + [draw(m) for m in open_means]
    tgt = np.concatenate(tgt_blocks)
    tgt = cfg.scale * (tgt @ rot.T) + cfg.translation * t_dir
    tgt_labels = np.repeat(np.arange(total), cfg.n_per_class)

    source = (EmbeddingSet(src), LabelSet(src_labels, cfg.c))
    target = (EmbeddingSet(tgt), LabelSet(tgt_labels, cfg.c))
    return source, target


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray  # (c, d)
    bias: np.ndarray     # (c,)

    def logits(self, e: EmbeddingSet) -> SourceLogits:
        return SourceLogits(e.data @ self.weights.T + self.bias)


def fit_source_model(emb: EmbeddingSet, lbl: LabelSet,
                     l2_reg: float = 1e-3, max_iters: int = 2000,
                     grad_tol: float = 1e-6) -> LinearClassifier:
    """Multinomial logistic regression by gradient descent.

    Backtracking line search keeps the fit deterministic without a
    hand-tuned step size; iteration stops once the gradient norm falls
    below ``grad_tol``.  A small ridge penalty keeps separable problems
    well-posed.
    """
    present = np.unique(lbl.labels)
    if present.size < 2:
        raise DegenerateData("need at least two classes to fit a classifier")
    x, y = emb.data, lbl.labels
    n, d = x.shape
    c = int(y.max()) + 1
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0

    w = np.zeros((c, d))
    b = np.zeros(c)

    def objective(w, b):
        z = x @ w.T + b
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        nll = -float((onehot * logp).sum()) / n
        return nll + 0.5 * l2_reg * float((w * w).sum())

    def gradient(w, b):
        z = x @ w.T + b
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        gz = (p - onehot) / n
        return gz.T @ x + l2_reg * w, gz.sum(axis=0)

    step = 1.0
    value = objective(w, b)
    for _ in range(max_iters):
        gw, gb = gradient(w, b)
        gnorm = math.sqrt(float((gw * gw).sum()) + float((gb * gb).sum()))
        if gnorm < grad_tol:
            break
        # Armijo backtracking from the last accepted step.
        step = min(step * 2.0, 1e6)
        improved = False
        while step > 1e-12:
            w2, b2 = w - step * gw, b - step * gb
            v2 = objective(w2, b2)
            if v2 <= value - 1e-4 * step * gnorm * gnorm:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        w, b, value = w2, b2, v2
    return LinearClassifier(weights=w, bias=b)


# ----------------------------------------------------------------------
# Naive oracle: every formula written out with plain loops.
# ----------------------------------------------------------------------

ORACLE_MAX_N = 200


def _oracle_argmax(row):
    best, best_v = 0, row[0]
    for j in range(1, len(row)):
        if row[j] > best_v:
            best, best_v = j, row[j]
    return best


def _oracle_eq1_prototypes(features, hard, zeta, c):
    """Weighted per-class feature averages; None for zero-mass classes."""
    d = len(features[0])
    protos = []
    for j in range(c):
        num = [0.0] * d
        den = 0.0
        for i in range(len(features)):
            if hard[i] == j:
                den += zeta[i]
                for t in range(d):
                    num[t] += zeta[i] * features[i][t]
        protos.append([v / den for v in num] if den > 0 else None)
    return protos


def oracle_pipeline(e: EmbeddingSet, l: SourceLogits, k: int, n_mc: int,
                    seed: int, tau: float,
                    cfg: KMeansConfig = KMeansConfig()) -> PseudoLabelSet:
    """Straight-line re-derivation of the pseudo-labeling pipeline.

    Shares only the K-means partitions with the optimized path; every
    later step is recomputed with scalar loops.  Restricted to small
    inputs on purpose.
    """
    if e.n > ORACLE_MAX_N:
        raise TooLargeForOracle(f"oracle accepts n <= {ORACLE_MAX_N}, got {e.n}")
    features = e.data.tolist()
    logits = l.data.tolist()
    n, c = l.n, l.c

    mc = mc_partitions(e, k, n_mc, seed, cfg)
    zeta = [0.0] * n
    for run in mc.runs:
        assign = run.assign.tolist()
        sizes = [0] * k
        for a in assign:
            sizes[a] += 1
        phi = []
        for kk in range(k):
            mean_logit = [0.0] * c
            for i in range(n):
                if assign[i] == kk:
                    for j in range(c):
                        mean_logit[j] += logits[i][j]
            mean_logit = [v / sizes[kk] for v in mean_logit]
            phi.append(max(mean_logit))
        min_ratio = min(phi[kk] / sizes[kk] for kk in range(k))
        phi_hat = [phi[kk] - sizes[kk] * min_ratio for kk in range(k)]
        for i in range(n):
            zeta[i] += phi_hat[assign[i]] / sizes[assign[i]]
    zeta = [z / n_mc for z in zeta]

    hard_src = [_oracle_argmax(row) for row in logits]
    protos = _oracle_eq1_prototypes(features, hard_src, zeta, c)
    if all(p is None for p in protos):
        raise AllClassesUndefined("no class carries positive weighted mass")

    unit_protos = []
    for p in protos:
        if p is None:
            unit_protos.append(None)
            continue
        norm = math.sqrt(sum(v * v for v in p))
        unit_protos.append([v / norm for v in p] if norm > 0 else None)

    out = np.empty((n, c))
    for i in range(n):
        norm = math.sqrt(sum(v * v for v in features[i]))
        unit = [v / norm for v in features[i]]
        for j in range(c):
            if unit_protos[j] is None:
                raise UndefinedPrototype(f"class {j} has no prototype")
            dot = sum(unit[t] * unit_protos[j][t] for t in range(len(unit)))
            out[i, j] = dot / tau
    return PseudoLabelSet(logits=out,
                          hard=np.argmax(out, axis=1).astype(np.int64),
                          conf=out.max(axis=1))
