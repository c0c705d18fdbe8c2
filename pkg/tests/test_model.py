import numpy as np
import pytest

from dgcl.errors import BadMagicError, DuplicateTaskError, NoHeadsError
from dgcl.model import Encoder, Model, load_model, save_model
from dgcl.numerics import ParamLeaves, Tape, backward
from dgcl.losses import cross_entropy_node

from oracles import matmul_loops


def small_model(seed=0, d_in=4, hidden=(6,), d_emb=3):
    return Model.create(d_in, np.random.default_rng(seed), hidden=hidden,
                        embed_dim=d_emb)


class TestEncoder:
    def test_identity_network(self):
        enc = Encoder([np.eye(3)], [np.zeros((1, 3))])
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(enc.forward(x), x)

    def test_output_shape(self):
        model = small_model()
        for n in (1, 7, 30):
            x = np.random.default_rng(n).standard_normal((n, 4))
            assert model.embed(x).shape == (n, 3)

    def test_param_count_constant(self):
        model = small_model()
        before = model.encoder.param_count()
        model.embed(np.zeros((2, 4)))
        assert model.encoder.param_count() == before

    def test_init_bounds_and_determinism(self):
        a = Encoder.initialize((4, 8, 3), np.random.default_rng(5))
        b = Encoder.initialize((4, 8, 3), np.random.default_rng(5))
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)
            bound = np.sqrt(6.0 / (wa.shape[0] + wa.shape[1]))
            assert np.abs(wa).max() <= bound


class TestHeads:
    def test_offsets_accumulate(self):
        model = small_model()
        rng = np.random.default_rng(1)
        model.add_head(1, 5, rng)
        assert model.heads.total_classes == 5
        assert model.heads.offset(1) == 0
        model.add_head(2, 5, rng)
        assert model.heads.total_classes == 10
        assert model.heads.offset(2) == 5

    def test_duplicate_task_rejected(self):
        model = small_model()
        rng = np.random.default_rng(1)
        model.add_head(1, 5, rng)
        with pytest.raises(DuplicateTaskError):
            model.add_head(1, 3, rng)

    def test_no_heads_is_an_error(self):
        model = small_model()
        with pytest.raises(NoHeadsError):
            model.logits_all_heads(np.zeros((1, 3)))

    def test_single_head_equals_affine(self):
        model = small_model()
        model.add_head(1, 4, np.random.default_rng(2))
        f = np.random.default_rng(3).standard_normal((6, 3))
        expected = f @ model.heads.weight(1) + model.heads.bias(1)
        np.testing.assert_array_equal(model.logits_all_heads(f), expected)

    def test_two_heads_block_concatenation(self):
        model = small_model()
        rng = np.random.default_rng(4)
        model.add_head(1, 5, rng)
        model.add_head(2, 5, rng)
        f = np.random.default_rng(5).standard_normal((3, 3))
        logits = model.logits_all_heads(f)
        assert logits.shape == (3, 10)
        block1 = matmul_loops(f, model.heads.weight(1)) + model.heads.bias(1)
        block2 = matmul_loops(f, model.heads.weight(2)) + model.heads.bias(2)
        assert np.abs(logits[:, :5] - block1).max() < 1e-12
        assert np.abs(logits[:, 5:] - block2).max() < 1e-12

    def test_add_head_preserves_existing_columns(self):
        model = small_model()
        rng = np.random.default_rng(6)
        model.add_head(1, 4, rng)
        f = np.random.default_rng(7).standard_normal((5, 3))
        before = model.logits_all_heads(f)
        model.add_head(2, 3, rng)
        after = model.logits_all_heads(f)
        assert after[:, :4].tobytes() == before.tobytes()


class TestPredict:
    def test_argmax(self):
        model = small_model()
        model.add_head(1, 3, np.random.default_rng(0))
        model.heads.weight(1)[:] = 0.0
        model.heads.bias(1)[:] = [[0.1, 0.9, 0.3]]
        assert model.predict(np.zeros((1, 4)))[0] == 1

    def test_tie_breaks_to_lowest(self):
        model = small_model()
        model.add_head(1, 2, np.random.default_rng(0))
        model.heads.weight(1)[:] = 0.0
        model.heads.bias(1)[:] = [[0.5, 0.5]]
        assert model.predict(np.zeros((1, 4)))[0] == 0

    def test_shift_invariance(self):
        model = small_model()
        rng = np.random.default_rng(8)
        model.add_head(1, 4, rng)
        x = rng.standard_normal((10, 4))
        base = model.predict(x)
        model.heads.bias(1)[:] += 2.5
        np.testing.assert_array_equal(model.predict(x), base)

    def test_matches_brute_force(self):
        model = small_model()
        rng = np.random.default_rng(9)
        model.add_head(1, 3, rng)
        model.add_head(2, 4, rng)
        x = rng.standard_normal((20, 4))
        f = model.embed(x)
        blocks = [matmul_loops(f, model.heads.weight(t)) + model.heads.bias(t)
                  for t in (1, 2)]
        brute = np.argmax(np.concatenate(blocks, axis=1), axis=1)
        np.testing.assert_array_equal(model.predict(x), brute)

    def test_task_incremental_restriction(self):
        model = small_model()
        rng = np.random.default_rng(10)
        model.add_head(1, 3, rng)
        model.add_head(2, 2, rng)
        x = rng.standard_normal((12, 4))
        pred = model.predict_task(x, 2)
        assert ((pred >= 3) & (pred < 5)).all()


class TestSnapshot:
    def test_isolated_from_sgd(self):
        model = small_model()
        model.add_head(1, 3, np.random.default_rng(0))
        snap = model.snapshot()
        x = np.random.default_rng(1).standard_normal((8, 4))
        before = snap.embed(x).copy()
        self._sgd_step(model, x)
        assert snap.embed(x).tobytes() == before.tobytes()
        assert model.embed(x).tobytes() != before.tobytes()

    def test_snapshot_equals_model_at_creation(self):
        model = small_model()
        snap = model.snapshot()
        x = np.random.default_rng(2).standard_normal((5, 4))
        assert snap.embed(x).tobytes() == model.embed(x).tobytes()

    def test_stable_across_many_updates(self):
        model = small_model()
        model.add_head(1, 3, np.random.default_rng(0))
        x = np.random.default_rng(3).standard_normal((6, 4))
        snap = model.snapshot()
        recorded = snap.embed(x).copy()
        for _ in range(100):
            self._sgd_step(model, x)
        assert snap.embed(x).tobytes() == recorded.tobytes()
        assert snap.frozen

    @staticmethod
    def _sgd_step(model, x, lr=0.1):
        tape = Tape()
        leaves = ParamLeaves(tape)
        f = model.build_embed(leaves, x)
        logits = model.build_logits(leaves, f)
        labels = np.zeros(x.shape[0], dtype=np.int64)
        loss = cross_entropy_node(tape, logits, labels)
        grads = backward(tape, loss)
        for arr, nid in leaves.pairs():
            arr -= lr * grads[nid]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = small_model(seed=11)
        rng = np.random.default_rng(12)
        model.add_head(1, 3, rng)
        model.add_head(4, 2, rng)
        path = tmp_path / "model.dgcl"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.encoder.sizes == model.encoder.sizes
        for wa, wb in zip(loaded.encoder.weights, model.encoder.weights):
            assert wa.tobytes() == wb.tobytes()
        assert loaded.heads.task_ids == (1, 4)
        for t in (1, 4):
            assert loaded.heads.weight(t).tobytes() == model.heads.weight(t).tobytes()
            assert loaded.heads.bias(t).tobytes() == model.heads.bias(t).tobytes()
        x = np.random.default_rng(13).standard_normal((4, 4))
        np.testing.assert_array_equal(loaded.predict(x), model.predict(x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.dgcl"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(BadMagicError):
            load_model(path)
