import numpy as np
import pytest

from dgcl.errors import UnknownTaskError
from dgcl.memory import EpisodicMemory, MemoryItem, dump_memory, load_memory


def item(task_id, tag):
    return MemoryItem(np.array([[float(tag)]]), tag, task_id)


def tags(items):
    return [it.y for it in items]


class TestWrites:
    def test_under_capacity_keeps_order(self):
        mem = EpisodicMemory(3)
        mem.register_task(1)
        mem.write_batch([item(1, 0), item(1, 1), item(1, 2)])
        assert tags(mem.all_items()) == [0, 1, 2]

    def test_fifo_eviction(self):
        mem = EpisodicMemory(3)
        mem.register_task(1)
        mem.write_batch([item(1, 0), item(1, 1), item(1, 2)])
        mem.write_batch([item(1, 3)])
        assert tags(mem.all_items()) == [1, 2, 3]

    def test_per_task_isolation(self):
        mem = EpisodicMemory(2)
        mem.register_task(1)
        mem.register_task(2)
        mem.write_batch([item(1, 0), item(1, 1)])
        mem.write_batch([item(2, 10), item(2, 11), item(2, 12)])
        assert tags(mem.all_items()) == [0, 1, 11, 12]

    def test_unknown_task_rejected(self):
        mem = EpisodicMemory(2)
        mem.register_task(1)
        with pytest.raises(UnknownTaskError):
            mem.write_batch([item(9, 0)])

    def test_capacity_bound_holds(self):
        mem = EpisodicMemory(4)
        for t in (1, 2, 3):
            mem.register_task(t)
        rng = np.random.default_rng(0)
        for step in range(50):
            t = int(rng.integers(1, 4))
            mem.write_batch([item(t, step)])
            assert len(mem) <= 3 * 4

    def test_writes_are_deterministic(self):
        def build():
            mem = EpisodicMemory(2)
            mem.register_task(1)
            for i in range(7):
                mem.write_batch([item(1, i)])
            return tags(mem.all_items())

        assert build() == build() == [5, 6]


class TestSampling:
    def test_exhaustion_returns_everything(self):
        mem = EpisodicMemory(10)
        mem.register_task(1)
        mem.write_batch([item(1, i) for i in range(5)])
        out = mem.sample(10, np.random.default_rng(0))
        assert sorted(tags(out)) == [0, 1, 2, 3, 4]

    def test_zero_k_is_a_contract_error(self):
        mem = EpisodicMemory(2)
        with pytest.raises(ValueError):
            mem.sample(0, np.random.default_rng(0))

    def test_empty_memory_returns_empty(self):
        mem = EpisodicMemory(2)
        mem.register_task(1)
        assert mem.sample(3, np.random.default_rng(0)) == []

    def test_no_duplicates_within_call(self):
        mem = EpisodicMemory(10)
        mem.register_task(1)
        mem.write_batch([item(1, i) for i in range(8)])
        rng = np.random.default_rng(1)
        for _ in range(20):
            out = mem.sample(5, rng)
            ids = [id(it) for it in out]
            assert len(set(ids)) == len(ids)

    def test_uniform_frequencies_within_three_sigma(self):
        mem = EpisodicMemory(4)
        mem.register_task(1)
        mem.write_batch([item(1, i) for i in range(4)])
        rng = np.random.default_rng(2)
        draws = 10_000
        counts = {i: 0 for i in range(4)}
        for _ in range(draws):
            counts[mem.sample(1, rng)[0].y] += 1
        sigma = np.sqrt(0.25 * 0.75 / draws)
        for c in counts.values():
            assert abs(c / draws - 0.25) < 3 * sigma

    def test_deterministic_for_fixed_rng_state(self):
        mem = EpisodicMemory(10)
        mem.register_task(1)
        mem.write_batch([item(1, i) for i in range(9)])
        a = tags(mem.sample(4, np.random.default_rng(7)))
        b = tags(mem.sample(4, np.random.default_rng(7)))
        assert a == b


class TestAllItems:
    def test_empty(self):
        assert EpisodicMemory(3).all_items() == []

    def test_task_order_then_write_order(self):
        mem = EpisodicMemory(3)
        mem.register_task(2)
        mem.register_task(1)
        mem.write_batch([item(2, 10)])
        mem.write_batch([item(1, 0), item(1, 1)])
        assert tags(mem.all_items()) == [0, 1, 10]

    def test_evicted_items_absent(self):
        mem = EpisodicMemory(2)
        mem.register_task(1)
        victims = [item(1, i) for i in range(4)]
        for v in victims:
            mem.write_batch([v])
        kept = mem.all_items()
        assert victims[0] not in kept and victims[1] not in kept


class TestDump:
    def test_round_trip(self, tmp_path):
        mem = EpisodicMemory(3)
        mem.register_task(1)
        mem.register_task(2)
        rng = np.random.default_rng(3)
        for t, y in ((1, 0), (1, 1), (2, 5)):
            mem.write_batch([MemoryItem(rng.standard_normal((1, 4)), y, t)])
        path = tmp_path / "memory.dgcl"
        dump_memory(mem, path)
        loaded = load_memory(path)
        assert loaded.capacity == 3
        originals, copies = mem.all_items(), loaded.all_items()
        assert len(originals) == len(copies)
        for a, b in zip(originals, copies):
            assert (a.y, a.task_id) == (b.y, b.task_id)
            assert a.x.tobytes() == b.x.tobytes()
