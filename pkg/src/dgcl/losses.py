"""Training objectives: replay cross-entropy, the knowledge-invariant /
spread-out (KISP) regularizer, and the LFC / RLD comparison regularizers.

KISP treats the episodic memory as an instance-discrimination problem: with
``f_pre`` the snapshot embeddings and ``f_cur`` the live ones (both rows
L2-normalized), the probability of instance ``j``'s current embedding being
recognized as instance ``i`` is a temperature-scaled softmax over snapshot
instances. The regularizer is the negative log likelihood of every diagonal
match and every off-diagonal non-match, which simultaneously pulls each
current embedding toward its own snapshot (knowledge invariance) and pushes
it away from the other snapshots (spread-out).

Each loss has a plain-value form and a tape-node form; both share the same
forward arithmetic, so the oracle tests and the training path cannot drift
apart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelRangeError, ShapeMismatchError
from .numerics import Tape, as_matrix

# Floor for (1 - P) before the log; at small temperatures P can reach 1.0
# in floating point and would otherwise produce -inf.
ONE_MINUS_P_FLOOR = 1e-12

DEFAULT_TAU = 0.1


@dataclass
class KispBatch:
    """Paired snapshot / live embeddings for one replay mini-batch.

    Row i of both matrices refers to the same memory instance. Rows must be
    unit-norm already; the temperature divides the inner products.
    """
    f_pre_norm: np.ndarray
    f_cur_norm: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        self.f_pre_norm = as_matrix(self.f_pre_norm)
        self.f_cur_norm = as_matrix(self.f_cur_norm)
        if self.f_pre_norm.shape != self.f_cur_norm.shape:
            raise ShapeMismatchError(
                f"paired embeddings differ: {self.f_pre_norm.shape} "
                f"vs {self.f_cur_norm.shape}"
            )
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")
        for name, m in (("f_pre_norm", self.f_pre_norm),
                        ("f_cur_norm", self.f_cur_norm)):
            norms = np.linalg.norm(m, axis=1)
            if np.abs(norms - 1.0).max() > 1e-9:
                raise ValueError(f"{name} rows are not unit-norm within 1e-9")

    @property
    def size(self) -> int:
        return self.f_pre_norm.shape[0]


@dataclass
class LossBreakdown:
    """One training step's loss components; total = ce + lam * kisp."""
    ce: float
    kisp: float
    total: float
    lam: float


# ---------------------------------------------------------------------------
# cross-entropy (fused log-softmax, recorded as one tape op)
# ---------------------------------------------------------------------------

def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelRangeError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def _ce_value(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(logits.shape[0]), labels]
    return float(np.mean(lse - picked))


def _ce_forward(vals, labels):
    return np.array([[_ce_value(vals[0], labels)]])


def _ce_grad(vals, out, labels, g):
    logits = vals[0]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(logits.shape[0]), labels] -= 1.0
    return [g[0, 0] * p / logits.shape[0]]


def cross_entropy(logits, labels) -> float:
    """Mean over rows of -log softmax(logits)[row, label]."""
    logits = as_matrix(logits)
    labels = _check_labels(labels, logits.shape[1])
    if labels.size != logits.shape[0]:
        raise ShapeMismatchError(
            f"{logits.shape[0]} logit rows but {labels.size} labels"
        )
    return _ce_value(logits, labels)


def cross_entropy_node(tape: Tape, logits: int, labels) -> int:
    """Tape-node version of :func:`cross_entropy` (differentiable)."""
    value = tape.value(logits)
    checked = _check_labels(labels, value.shape[1])
    if checked.size != value.shape[0]:
        raise ShapeMismatchError(
            f"{value.shape[0]} logit rows but {checked.size} labels"
        )
    return tape.apply("cross_entropy", (logits,), _ce_forward, _ce_grad,
                      aux=checked)


# ---------------------------------------------------------------------------
# KISP
# ---------------------------------------------------------------------------

def _column_softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def kisp_probs(batch: KispBatch) -> np.ndarray:
    """Instance-discrimination matrix P[i, j] = p(i | current embedding j).

    Columns are softmaxes over snapshot instances; each column sums to 1.
    """
    s = batch.f_pre_norm @ batch.f_cur_norm.T / batch.tau
    return _column_softmax(s)


def _kisp_pieces(s: np.ndarray):
    """Shared stable quantities: column maxes, shifted exponentials, column
    sums, and the leave-one-out column sums (a nonnegative masked product,
    so the near-saturated (1 - P) values keep full relative precision)."""
    m = s.shape[0]
    colmax = s.max(axis=0, keepdims=True)
    e = np.exp(s - colmax)
    colsum = e.sum(axis=0, keepdims=True)
    excl = (1.0 - np.eye(m)) @ e
    return colmax, e, colsum, excl


def _kisp_value_from_sim(s: np.ndarray) -> float:
    colmax, e, colsum, excl = _kisp_pieces(s)
    m = s.shape[0]
    # -log P[i,i] = log colsum_i - (s_ii - colmax_i); finite for any s
    invariant = (np.log(colsum[0]) - (np.diag(s) - colmax[0])).sum()
    # -log(1 - P[i,j]) = log colsum_j - log excl_ij, floored at the clamp
    one_minus = np.maximum(excl / colsum, ONE_MINUS_P_FLOOR)
    off = ~np.eye(m, dtype=bool)
    spread = -np.log(one_minus[off]).sum()
    return float(invariant + spread)


def _kisp_forward(vals, aux):
    return np.array([[_kisp_value_from_sim(vals[0])]])


def _kisp_grad(vals, out, aux, g):
    s = vals[0]
    _, e, colsum, excl = _kisp_pieces(s)
    p = e / colsum
    m = p.shape[0]
    eye = np.eye(m, dtype=bool)
    one_minus = excl / colsum
    q = np.where(one_minus > ONE_MINUS_P_FLOOR,
                 colsum / np.maximum(excl, 1e-300), 0.0)
    q[eye] = -colsum[0] / np.maximum(np.diag(e), 1e-300)
    # column-wise softmax Jacobian: dJ/dS[:,j] = P_j * (q_j - <q_j, P_j>)
    col_dot = (q * p).sum(axis=0, keepdims=True)
    return [g[0, 0] * p * (q - col_dot)]


def kisp_loss(batch: KispBatch) -> float:
    """Negative log likelihood of the invariant + spread-out assignment."""
    s = batch.f_pre_norm @ batch.f_cur_norm.T / batch.tau
    return _kisp_value_from_sim(s)


def kisp_node(tape: Tape, f_pre_norm: np.ndarray, f_cur_norm: int,
              tau: float) -> int:
    """Tape-node KISP; snapshot embeddings enter as a constant."""
    if tau <= 0:
        raise ValueError("temperature tau must be positive")
    pre = tape.constant(as_matrix(f_pre_norm))
    s = tape.scale(tape.matmul(pre, tape.transpose(f_cur_norm)), 1.0 / tau)
    return tape.apply("kisp_penalty", (s,), _kisp_forward, _kisp_grad)


# ---------------------------------------------------------------------------
# comparison regularizers and the total
# ---------------------------------------------------------------------------

def lfc_loss(batch: KispBatch) -> float:
    """Less-forget constraint: mean of (1 - <f_pre_i, f_cur_i>)."""
    return float(np.mean(1.0 - (batch.f_pre_norm * batch.f_cur_norm).sum(axis=1)))


def lfc_node(tape: Tape, f_pre_norm: np.ndarray, f_cur_norm: int) -> int:
    pre = as_matrix(f_pre_norm)
    m = pre.shape[0]
    dots = tape.sum_all(tape.mul(tape.constant(pre), f_cur_norm))
    return tape.add_scalar(tape.scale(dots, -1.0 / m), 1.0)


def rld_loss(f_pre, f_cur) -> float:
    """Representation-level distillation: mean squared distance over d.

    Operates on the raw (unnormalized) penultimate features.
    """
    f_pre, f_cur = as_matrix(f_pre), as_matrix(f_cur)
    if f_pre.shape != f_cur.shape:
        raise ShapeMismatchError(
            f"feature shapes differ: {f_pre.shape} vs {f_cur.shape}"
        )
    m, d = f_pre.shape
    return float(((f_pre - f_cur) ** 2).sum() / (m * d))


def rld_node(tape: Tape, f_pre: np.ndarray, f_cur: int) -> int:
    pre = as_matrix(f_pre)
    m, d = pre.shape
    diff = tape.sub(tape.constant(pre), f_cur)
    return tape.scale(tape.sum_all(tape.mul(diff, diff)), 1.0 / (m * d))


def total_loss(ce: float, kisp: float, lam: float) -> float:
    """ce + lam * kisp; lam = 0 is the replay-only ablation."""
    if lam < 0:
        raise ValueError("loss weight lam must be >= 0")
    return ce + lam * kisp
