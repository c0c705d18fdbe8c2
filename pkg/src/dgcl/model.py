"""The trainable network: shared encoder plus growing per-task linear heads.

The encoder is a small MLP (rectifier on hidden layers, linear output) whose
final layer produces the embedding the regularizers act on. Classification
heads are registered one per task; their logits are concatenated in task
order, so global class indices are per-task offsets plus local indices.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import binio
from .errors import DuplicateTaskError, NoHeadsError, ShapeMismatchError
from .numerics import ParamLeaves, as_matrix

DEFAULT_HIDDEN = (64,)
DEFAULT_EMBED_DIM = 32


def _init_weight(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    # uniform in +-sqrt(6 / (fan_in + fan_out))
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


class Encoder:
    """MLP mapping inputs to embeddings; relu on hidden layers only."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases
        for w, b in zip(weights, biases):
            if b.shape != (1, w.shape[1]):
                raise ShapeMismatchError(f"bias {b.shape} vs weight {w.shape}")
        for wa, wb in zip(weights, weights[1:]):
            if wa.shape[1] != wb.shape[0]:
                raise ShapeMismatchError(
                    f"layer sizes do not chain: {wa.shape} -> {wb.shape}"
                )

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Encoder":
        """Build from a size chain [d_in, hidden..., d_emb]."""
        weights, biases = [], []
        for d_in, d_out in zip(sizes, sizes[1:]):
            weights.append(_init_weight(d_in, d_out, rng))
            biases.append(np.zeros((1, d_out)))
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, x) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.input_dim:
            raise ShapeMismatchError(
                f"input has {x.shape[1]} columns, encoder expects {self.input_dim}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h

    def build(self, leaves: ParamLeaves, x) -> int:
        """Record the forward pass on a tape; returns the embedding node."""
        x = as_matrix(x)
        if x.shape[1] != self.input_dim:
            raise ShapeMismatchError(
                f"input has {x.shape[1]} columns, encoder expects {self.input_dim}"
            )
        tape = leaves.tape
        node = tape.constant(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            node = tape.affine(node, leaves.leaf(w), leaves.leaf(b))
            if i != last:
                node = tape.relu(node)
        return node

    def copy(self) -> "Encoder":
        return Encoder([w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])

    def param_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


class HeadSet:
    """Ordered per-task linear heads with a global class-offset table."""

    def __init__(self):
        self._tasks: list[int] = []
        self._weights: dict[int, np.ndarray] = {}
        self._biases: dict[int, np.ndarray] = {}
        self._offsets: dict[int, int] = {}

    def add(self, task_id: int, class_count: int, embed_dim: int,
            rng: np.random.Generator) -> None:
        if task_id in self._weights:
            raise DuplicateTaskError(f"head for task {task_id} already registered")
        if class_count < 1:
            raise ValueError("class_count must be >= 1")
        self._offsets[task_id] = self.total_classes
        self._tasks.append(task_id)
        self._weights[task_id] = _init_weight(embed_dim, class_count, rng)
        self._biases[task_id] = np.zeros((1, class_count))

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(self._tasks)

    @property
    def total_classes(self) -> int:
        return sum(w.shape[1] for w in self._weights.values())

    def offset(self, task_id: int) -> int:
        return self._offsets[task_id]

    def class_count(self, task_id: int) -> int:
        return self._weights[task_id].shape[1]

    def weight(self, task_id: int) -> np.ndarray:
        return self._weights[task_id]

    def bias(self, task_id: int) -> np.ndarray:
        return self._biases[task_id]

    def logits(self, f: np.ndarray) -> np.ndarray:
        if not self._tasks:
            raise NoHeadsError("no classification heads registered")
        parts = [f @ self._weights[t] + self._biases[t] for t in self._tasks]
        return np.concatenate(parts, axis=1)

    def build_logits(self, leaves: ParamLeaves, f_node: int) -> int:
        if not self._tasks:
            raise NoHeadsError("no classification heads registered")
        tape = leaves.tape
        parts = [
            tape.affine(f_node, leaves.leaf(self._weights[t]),
                        leaves.leaf(self._biases[t]))
            for t in self._tasks
        ]
        if len(parts) == 1:
            return parts[0]
        return tape.hconcat(parts)

    def copy(self) -> "HeadSet":
        dup = HeadSet()
        dup._tasks = list(self._tasks)
        dup._weights = {t: w.copy() for t, w in self._weights.items()}
        dup._biases = {t: b.copy() for t, b in self._biases.items()}
        dup._offsets = dict(self._offsets)
        return dup


class ModelSnapshot:
    """Frozen deep copy of encoder (and optionally head) parameters."""

    def __init__(self, encoder: Encoder, heads: HeadSet | None = None):
        self._encoder = encoder
        self._heads = heads

    @property
    def frozen(self) -> bool:
        return True

    @property
    def encoder(self) -> Encoder:
        return self._encoder

    def embed(self, x) -> np.ndarray:
        return self._encoder.forward(x)


class Model:
    """Shared encoder plus the current head set."""

    def __init__(self, encoder: Encoder, heads: HeadSet | None = None):
        self.encoder = encoder
        self.heads = heads if heads is not None else HeadSet()

    @classmethod
    def create(cls, d_in: int, rng: np.random.Generator,
               hidden: Sequence[int] = DEFAULT_HIDDEN,
               embed_dim: int = DEFAULT_EMBED_DIM) -> "Model":
        sizes = (d_in, *hidden, embed_dim)
        return cls(Encoder.initialize(sizes, rng))

    def embed(self, x) -> np.ndarray:
        return self.encoder.forward(x)

    def build_embed(self, leaves: ParamLeaves, x) -> int:
        return self.encoder.build(leaves, x)

    def logits_all_heads(self, f) -> np.ndarray:
        return self.heads.logits(as_matrix(f))

    def build_logits(self, leaves: ParamLeaves, f_node: int) -> int:
        return self.heads.build_logits(leaves, f_node)

    def add_head(self, task_id: int, class_count: int,
                 rng: np.random.Generator) -> None:
        self.heads.add(task_id, class_count, self.encoder.embed_dim, rng)

    def predict(self, x) -> np.ndarray:
        """Global class indices via argmax over all heads (ties -> lowest)."""
        return np.argmax(self.logits_all_heads(self.embed(x)), axis=1)

    def predict_task(self, x, task_id: int) -> np.ndarray:
        """Argmax restricted to one task's classes (task-incremental scoring)."""
        logits = self.logits_all_heads(self.embed(x))
        lo = self.heads.offset(task_id)
        hi = lo + self.heads.class_count(task_id)
        return np.argmax(logits[:, lo:hi], axis=1) + lo

    def snapshot(self, include_heads: bool = False) -> ModelSnapshot:
        heads = self.heads.copy() if include_heads else None
        return ModelSnapshot(self.encoder.copy(), heads)


def save_model(model: Model, path) -> None:
    """Write the versioned binary checkpoint (all floats little-endian f64)."""
    with open(path, "wb") as f:
        binio.write_container_header(f, binio.KIND_MODEL)
        sizes = model.encoder.sizes
        binio.write_u32(f, len(sizes))
        for s in sizes:
            binio.write_u32(f, s)
        for w, b in zip(model.encoder.weights, model.encoder.biases):
            binio.write_f64_array(f, w)
            binio.write_f64_array(f, b)
        binio.write_u32(f, len(model.heads.task_ids))
        for t in model.heads.task_ids:
            binio.write_u32(f, t)
            binio.write_u32(f, model.heads.class_count(t))
            binio.write_f64_array(f, model.heads.weight(t))
            binio.write_f64_array(f, model.heads.bias(t))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        binio.read_container_header(f, binio.KIND_MODEL)
        n_sizes = binio.read_u32(f, "layer-size count")
        sizes = [binio.read_u32(f, "layer size") for _ in range(n_sizes)]
        weights, biases = [], []
        for d_in, d_out in zip(sizes, sizes[1:]):
            weights.append(binio.read_f64_array(f, (d_in, d_out), "layer weight"))
            biases.append(binio.read_f64_array(f, (1, d_out), "layer bias"))
        model = Model(Encoder(weights, biases))
        d_emb = sizes[-1]
        n_heads = binio.read_u32(f, "head count")
        for _ in range(n_heads):
            task_id = binio.read_u32(f, "head task id")
            c = binio.read_u32(f, "head class count")
            w = binio.read_f64_array(f, (d_emb, c), "head weight")
            b = binio.read_f64_array(f, (1, c), "head bias")
            model.add_head(task_id, c, np.random.default_rng(0))
            model.heads.weight(task_id)[:] = w
            model.heads.bias(task_id)[:] = b
        return model
