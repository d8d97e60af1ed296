# core/tensor.py
# Labeled dense tensors over finite discrete variables
#
# Every tensor carries an ordered tuple of integer axis labels. Operations
# align operands by label, never by position.

from __future__ import annotations

from functools import reduce
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from core.errors import ContractError, DenseCapError, LabelError, NumericError, ShapeError

Labels = Tuple[int, ...]


class LabeledTensor:
    """Dense array whose axes are addressed by label.

    Values are stored read-only; every operation returns a new tensor.
    """

    __slots__ = ("labels", "values")

    def __init__(self, labels: Iterable[int], values):
        labels = tuple(int(a) for a in labels)
        if len(set(labels)) != len(labels):
            raise LabelError(f"duplicate axis labels {labels}")
        arr = np.array(values, dtype=float)
        if arr.ndim != len(labels):
            raise ShapeError(f"{len(labels)} labels for a {arr.ndim}-dimensional array")
        arr.setflags(write=False)
        self.labels: Labels = labels
        self.values: np.ndarray = arr

    # ------------------------------------------------------------
    # Structure
    # ------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def axes(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(zip(self.labels, self.values.shape))

    @property
    def sizes(self) -> Dict[int, int]:
        return dict(self.axes)

    def size_of(self, label: int) -> int:
        try:
            return self.values.shape[self.labels.index(label)]
        except ValueError:
            raise LabelError(f"label {label} not in {self.labels}") from None

    def transposed(self, labels: Sequence[int]) -> "LabeledTensor":
        """Same tensor with axes reordered to `labels`."""
        labels = tuple(labels)
        if sorted(labels) != sorted(self.labels):
            raise LabelError(f"cannot reorder {self.labels} as {labels}")
        perm = [self.labels.index(a) for a in labels]
        return LabeledTensor(labels, np.transpose(self.values, perm))

    def sorted(self) -> "LabeledTensor":
        return self.transposed(sorted(self.labels))

    def map(self, fn) -> "LabeledTensor":
        return LabeledTensor(self.labels, fn(self.values))

    def __repr__(self) -> str:
        return f"LabeledTensor(axes={self.axes})"

    @classmethod
    def ones(cls, sizes: Mapping[int, int], labels: Sequence[int]) -> "LabeledTensor":
        return cls(labels, np.ones(tuple(sizes[a] for a in labels)))

    @classmethod
    def zeros(cls, sizes: Mapping[int, int], labels: Sequence[int]) -> "LabeledTensor":
        return cls(labels, np.zeros(tuple(sizes[a] for a in labels)))


def _check_shared_sizes(a: LabeledTensor, b: LabeledTensor) -> None:
    sa = a.sizes
    for label, size in b.axes:
        if label in sa and sa[label] != size:
            raise ShapeError(f"label {label}: size {sa[label]} vs {size}")


def aligned(s: LabeledTensor, labels: Sequence[int]) -> np.ndarray:
    """Values of `s` permuted and reshaped to broadcast against axes `labels`."""
    labels = tuple(labels)
    missing = [a for a in s.labels if a not in labels]
    if missing:
        raise LabelError(f"labels {missing} of {s.labels} not in {labels}")
    own = [a for a in labels if a in s.labels]
    vals = s.transposed(own).values if own else s.values
    shape = tuple(s.size_of(a) if a in s.labels else 1 for a in labels)
    return vals.reshape(shape)


def project(t: LabeledTensor, keep: Iterable[int]) -> LabeledTensor:
    """Marginal of `t` on `keep`, summing out every other axis; kept axes stay in t's order."""
    keep = set(keep)
    unknown = keep - set(t.labels)
    if unknown:
        raise LabelError(f"cannot project {t.labels} onto unknown labels {sorted(unknown)}")
    drop = tuple(i for i, a in enumerate(t.labels) if a not in keep)
    return LabeledTensor([a for a in t.labels if a in keep], t.values.sum(axis=drop))


def log_project(t: LabeledTensor, keep: Iterable[int]) -> LabeledTensor:
    """`project` for tensors holding logarithms: logsumexp over the dropped axes."""
    keep = set(keep)
    unknown = keep - set(t.labels)
    if unknown:
        raise LabelError(f"cannot project {t.labels} onto unknown labels {sorted(unknown)}")
    drop = tuple(i for i, a in enumerate(t.labels) if a not in keep)
    if not drop:
        return t
    return LabeledTensor([a for a in t.labels if a in keep], logsumexp(t.values, axis=drop))


def outer(factors: Sequence[LabeledTensor]) -> LabeledTensor:
    """Tensor product of factors with pairwise-disjoint labels."""
    if not factors:
        raise ContractError("outer of an empty factor list")
    labels = [a for f in factors for a in f.labels]
    if len(set(labels)) != len(labels):
        raise LabelError(f"outer factors share labels: {labels}")
    values = reduce(np.multiply.outer, [f.values for f in factors])
    return LabeledTensor(labels, values)


def broadcast_mul(t: LabeledTensor, s: LabeledTensor) -> LabeledTensor:
    """t ⊙ (s ⊗ 1) with labels(s) ⊆ labels(t); result keeps t's label order."""
    _check_shared_sizes(t, s)
    return LabeledTensor(t.labels, t.values * aligned(s, t.labels))


def broadcast_add(t: LabeledTensor, s: LabeledTensor) -> LabeledTensor:
    """Log-domain counterpart of broadcast_mul."""
    _check_shared_sizes(t, s)
    return LabeledTensor(t.labels, t.values + aligned(s, t.labels))


def _same_labels(a: LabeledTensor, b: LabeledTensor) -> np.ndarray:
    if set(a.labels) != set(b.labels):
        raise LabelError(f"label sets differ: {a.labels} vs {b.labels}")
    _check_shared_sizes(a, b)
    return aligned(b, a.labels)


def hadamard(a: LabeledTensor, b: LabeledTensor) -> LabeledTensor:
    return LabeledTensor(a.labels, a.values * _same_labels(a, b))


def elementwise_div(a: LabeledTensor, b: LabeledTensor) -> LabeledTensor:
    bv = _same_labels(a, b)
    zero = np.argwhere(bv == 0)
    if zero.size:
        raise NumericError("division by a zero entry", tuple(zero[0]))
    return LabeledTensor(a.labels, a.values / bv)


def inner(a: LabeledTensor, b: LabeledTensor) -> float:
    return float(np.sum(a.values * _same_labels(a, b)))


def total_mass(t: LabeledTensor) -> float:
    return float(t.values.sum())


def rel_entropy(b: LabeledTensor, m: LabeledTensor) -> float:
    """Σ b (log b − log m − 1) with 0·log 0 = 0."""
    bv = b.values
    mv = _same_labels(b, m)
    if np.any(bv < 0):
        raise NumericError("negative entry in plan", tuple(np.argwhere(bv < 0)[0]))
    support = bv > 0
    bad = support & (mv <= 0)
    if np.any(bad):
        raise NumericError("reference is zero where the plan is positive", tuple(np.argwhere(bad)[0]))
    terms = np.zeros_like(bv)
    terms[support] = bv[support] * (np.log(bv[support]) - np.log(mv[support]) - 1.0)
    return float(terms.sum())


def geo_mean(ts: Sequence[LabeledTensor]) -> LabeledTensor:
    """Elementwise geometric mean of equally-labeled positive tensors."""
    if not ts:
        raise ContractError("geometric mean of an empty list")
    head = ts[0]
    stack = np.stack([head.values] + [_same_labels(head, t) for t in ts[1:]])
    if np.any(stack <= 0):
        raise NumericError("geometric mean of a non-positive entry")
    return LabeledTensor(head.labels, np.exp(np.log(stack).mean(axis=0)))


def dense_size(sizes: Mapping[int, int], labels: Iterable[int]) -> int:
    n = 1
    for a in labels:
        n *= int(sizes[a])
    return n


def ensure_dense(sizes: Mapping[int, int], labels: Iterable[int], cap: int) -> None:
    n = dense_size(sizes, labels)
    if n > cap:
        raise DenseCapError(
            f"full tensor would hold {n} entries (cap {cap}); "
            "use a junction-tree solver or raise GRAPHOT_DENSE_CAP"
        )
