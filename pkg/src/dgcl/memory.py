"""Episodic memory: per-task ring buffers with uniform replay sampling.

Writes follow the ring-buffer strategy: each task owns a FIFO buffer of
fixed capacity, so new items for a task evict only that task's oldest
items. Sampling is uniform without replacement over the union of buffers.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import UnknownTaskError
from .numerics import as_matrix


@dataclass(eq=False)
class MemoryItem:
    """One stored labelled example (x is a 1 x d row, y a global class)."""
    x: np.ndarray
    y: int
    task_id: int


class EpisodicMemory:
    """Per-task FIFO buffers, each capped at ``capacity`` items."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buffers: dict[int, deque[MemoryItem]] = {}

    def register_task(self, task_id: int) -> None:
        if task_id not in self._buffers:
            self._buffers[task_id] = deque(maxlen=self.capacity)

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._buffers))

    def write_batch(self, items: list[MemoryItem]) -> None:
        """Append items to their task buffers, evicting oldest at capacity."""
        for item in items:
            if item.task_id not in self._buffers:
                raise UnknownTaskError(f"task {item.task_id} is not registered")
        for item in items:
            self._buffers[item.task_id].append(item)

    def sample(self, k: int, rng: np.random.Generator) -> list[MemoryItem]:
        """Uniform without replacement over all buffers; min(k, total) items."""
        if k < 1:
            raise ValueError("sample size k must be >= 1")
        pool = self.all_items()
        if not pool:
            return []
        take = min(k, len(pool))
        idx = rng.choice(len(pool), size=take, replace=False)
        return [pool[i] for i in idx]

    def all_items(self) -> list[MemoryItem]:
        """Items in write order within each task, tasks in id order."""
        out: list[MemoryItem] = []
        for task_id in sorted(self._buffers):
            out.extend(self._buffers[task_id])
        return out

    def __len__(self) -> int:
        return sum(len(b) for b in self._buffers.values())


def dump_memory(mem: EpisodicMemory, path) -> None:
    """Write the buffer contents in the shared binary container."""
    with open(path, "wb") as f:
        binio.write_container_header(f, binio.KIND_MEMORY)
        binio.write_u32(f, mem.capacity)
        binio.write_u32(f, len(mem.task_ids))
        for task_id in mem.task_ids:
            items = [i for i in mem.all_items() if i.task_id == task_id]
            binio.write_u32(f, task_id)
            binio.write_u32(f, len(items))
            for item in items:
                binio.write_u32(f, item.y)
                binio.write_u32(f, item.x.shape[1])
                binio.write_f64_array(f, item.x)


def load_memory(path) -> EpisodicMemory:
    with open(path, "rb") as f:
        binio.read_container_header(f, binio.KIND_MEMORY)
        mem = EpisodicMemory(binio.read_u32(f, "capacity"))
        n_tasks = binio.read_u32(f, "task count")
        for _ in range(n_tasks):
            task_id = binio.read_u32(f, "task id")
            mem.register_task(task_id)
            n_items = binio.read_u32(f, "item count")
            items = []
            for _ in range(n_items):
                y = binio.read_u32(f, "label")
                d = binio.read_u32(f, "row width")
                x = binio.read_f64_array(f, (1, d), "item row")
                items.append(MemoryItem(as_matrix(x), int(y), task_id))
            mem.write_batch(items)
        return mem
