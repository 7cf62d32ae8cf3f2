"""Student classifier heads trained to regress pseudo-logits.

The student is a small head over frozen embeddings (an affine map, or
one hidden ReLU layer), trained by plain gradient descent so every run
is reproducible and the analytic gradients can be checked against
finite differences.  Three objectives are available:

* ``l2``  per-sample squared error to the target logits (the default);
* ``l1``  per-sample absolute error;
* ``ce``  cross-entropy between the softmaxed head output and the
  softmaxed target logits.

The regression losses penalize logit magnitudes and therefore preserve
maximum-logit confidence rankings; cross-entropy is invariant to
per-sample logit shifts and does not.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .embstore import EmbeddingSet
from .errors import (BadMagic, BadShape, NonFiniteLoss, ShapeMismatch,
                     TruncatedFile)
from .protolab import PseudoLabelSet

HED_MAGIC = "HED1"

KINDS = ("linear", "mlp1")
LOSSES = ("l2", "l1", "ce")


@dataclass(frozen=True)
class StudentHead:
    kind: str
    params: np.ndarray  # flat float64 vector
    d: int
    c: int
    h: int = 0

    def __post_init__(self):
        expected = param_count(self.kind, self.d, self.c, self.h)
        if self.params.shape != (expected,):
            raise BadShape(f"expected {expected} parameters, "
                           f"got {self.params.shape}")
        if not np.isfinite(self.params).all():
            raise BadShape("parameters must be finite")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "l2"
    epochs: int = 100
    batch_size: int = 0           # 0 = full batch
    learning_rate: float = 1e-3
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def param_count(kind: str, d: int, c: int, h: int) -> int:
    if kind == "linear":
        return c * d + c
    if kind == "mlp1":
        return h * d + h + c * h + c
    raise BadShape(f"unknown head kind {kind!r}")


def init_head(kind: str, d: int, c: int, h: int = 0,
              seed: int = 0) -> StudentHead:
    """Seeded uniform init in +-1/sqrt(fan_in); biases start at zero."""
    if kind not in KINDS:
        raise BadShape(f"unknown head kind {kind!r}")
    if d < 1 or c < 1:
        raise BadShape(f"dimensions must be positive, got d={d}, c={c}")
    if kind == "mlp1" and h < 1:
        raise BadShape("mlp1 head needs hidden width h >= 1")
    if kind == "linear":
        h = 0
    rng = np.random.Generator(np.random.PCG64(seed))
    if kind == "linear":
        w = rng.uniform(-1, 1, size=(c, d)) / np.sqrt(d)
        params = np.concatenate([w.ravel(), np.zeros(c)])
    else:
        w1 = rng.uniform(-1, 1, size=(h, d)) / np.sqrt(d)
        w2 = rng.uniform(-1, 1, size=(c, h)) / np.sqrt(h)
        params = np.concatenate([w1.ravel(), np.zeros(h),
                                 w2.ravel(), np.zeros(c)])
    return StudentHead(kind=kind, params=params, d=d, c=c, h=h)


def _unpack(head: StudentHead):
    p, d, c, h = head.params, head.d, head.c, head.h
    if head.kind == "linear":
        w = p[:c * d].reshape(c, d)
        b = p[c * d:]
        return w, b
    w1 = p[:h * d].reshape(h, d)
    b1 = p[h * d:h * d + h]
    w2 = p[h * d + h:h * d + h + c * h].reshape(c, h)
    b2 = p[h * d + h + c * h:]
    return w1, b1, w2, b2


def _forward(head: StudentHead, x: np.ndarray):
    """Returns (logits, cache-for-backward)."""
    if head.kind == "linear":
        w, b = _unpack(head)
        return x @ w.T + b, None
    w1, b1, w2, b2 = _unpack(head)
    pre = x @ w1.T + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2.T + b2, (pre, hidden)


def predict(head: StudentHead, e: EmbeddingSet) -> np.ndarray:
    """Deterministic forward pass over every row."""
    if e.d != head.d:
        raise ShapeMismatch(f"head expects d={head.d}, embeddings have d={e.d}")
    return _forward(head, e.data)[0]


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def loss_and_grad(head: StudentHead, x: np.ndarray, targets: np.ndarray,
                  loss: str):
    """Loss value and analytic gradient w.r.t. the flat parameter vector."""
    n = x.shape[0]
    z, cache = _forward(head, x)
    diff = z - targets
    if loss == "l2":
        value = float(np.einsum("nc,nc->", diff, diff)) / n
        dz = 2.0 * diff / n
    elif loss == "l1":
        value = float(np.abs(diff).sum()) / n
        dz = np.sign(diff) / n
    elif loss == "ce":
        p = _softmax(targets)
        logq = z - z.max(axis=1, keepdims=True)
        logq = logq - np.log(np.exp(logq).sum(axis=1, keepdims=True))
        value = float(-(p * logq).sum()) / n
        dz = (_softmax(z) - p) / n
    else:
        raise ValueError(f"unknown loss {loss!r}")

    if head.kind == "linear":
        gw = dz.T @ x
        gb = dz.sum(axis=0)
        grad = np.concatenate([gw.ravel(), gb])
    else:
        _, _, w2, _ = _unpack(head)
        pre, hidden = cache
        gw2 = dz.T @ hidden
        gb2 = dz.sum(axis=0)
        dh = (dz @ w2) * (pre > 0)
        gw1 = dh.T @ x
        gb1 = dh.sum(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
    return value, grad


def train_distill(head: StudentHead, e: EmbeddingSet,
                  targets: PseudoLabelSet, cfg: TrainConfig):
    """Gradient-descent fit of the head to the target logits.

    Returns (trained head, per-epoch mean loss history).  The recorded
    loss for an epoch is the value at the parameters used to compute
    that epoch's update(s).  Divergence to a non-finite loss aborts.
    """
    if e.d != head.d:
        raise ShapeMismatch(f"head expects d={head.d}, embeddings have d={e.d}")
    if targets.c != head.c or targets.n != e.n:
        raise ShapeMismatch(
            f"targets are {targets.n}x{targets.c}, head expects n={e.n}, c={head.c}"
        )
    if cfg.epochs == 0:
        return head, []

    x, t = e.data, targets.logits
    params = head.params.copy()
    velocity = np.zeros_like(params)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    batch = cfg.batch_size if 0 < cfg.batch_size < e.n else e.n
    history = []
    work = replace(head, params=params)
    for _ in range(cfg.epochs):
        if batch == e.n:
            value, grad = loss_and_grad(work, x, t, cfg.loss)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"training diverged (loss={value})")
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            params = params + velocity
            work = replace(work, params=params)
            history.append(value)
        else:
            order = rng.permutation(e.n)
            epoch_losses = []
            for start in range(0, e.n, batch):
                sel = order[start:start + batch]
                value, grad = loss_and_grad(work, x[sel], t[sel], cfg.loss)
                if not np.isfinite(value):
                    raise NonFiniteLoss(f"training diverged (loss={value})")
                velocity = cfg.momentum * velocity - cfg.learning_rate * grad
                params = params + velocity
                work = replace(work, params=params)
                epoch_losses.append(value)
            history.append(float(np.mean(epoch_losses)))
    return work, history


def save_head(path, head: StudentHead) -> None:
    """HED1: magic, kind tag, d, c, h, float32 parameter payload."""
    kind_tag = KINDS.index(head.kind)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIII", HED_MAGIC.encode("ascii"),
                             kind_tag, head.d, head.c, head.h))
        fh.write(head.params.astype("<f4").tobytes())


def load_head(path) -> StudentHead:
    with open(path, "rb") as fh:
        header = fh.read(20)
        if len(header) < 20:
            raise BadMagic(f"{path}: file too short for a header")
        magic, kind_tag, d, c, h = struct.unpack("<4sIIII", header)
        if magic != HED_MAGIC.encode("ascii"):
            raise BadMagic(f"{path}: expected magic {HED_MAGIC!r}, found {magic!r}")
        payload = fh.read()
    if kind_tag >= len(KINDS):
        raise BadShape(f"{path}: unknown head kind tag {kind_tag}")
    kind = KINDS[kind_tag]
    expected = param_count(kind, d, c, h) * 4
    if len(payload) != expected:
        raise TruncatedFile(f"{path}: expected {expected} payload bytes, "
                            f"found {len(payload)}")
    params = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return StudentHead(kind=kind, params=params, d=int(d), c=int(c), h=int(h))
