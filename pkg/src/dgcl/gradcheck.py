"""Finite-difference verification of every analytic gradient in the package.

Each loss gets a population of small random instances (feature counts up to
6, embedding widths up to 8); the analytic gradient from the tape must match
central differences coordinate-wise. The ``total`` instance wires a linear
encoder and head into cross-entropy plus the weighted invariance penalty, so
parameter sharing across both branches is exercised too.
"""
from __future__ import annotations

import numpy as np

from . import losses
from .numerics import ParamLeaves, Tape, backward, finite_diff_check, l2_normalize

TOLERANCE = 1e-4
LOSS_NAMES = ("ce", "kisp", "lfc", "rld", "total")


def _ce_instance(rng):
    n = int(rng.integers(1, 7))
    c = int(rng.integers(2, 9))
    logits = 2.0 * rng.standard_normal((n, c))
    labels = rng.integers(0, c, size=n)

    def fn(params):
        tape = Tape()
        lid = tape.leaf(params[0])
        loss = losses.cross_entropy_node(tape, lid, labels)
        grads = backward(tape, loss)
        return float(tape.value(loss)[0, 0]), [grads[lid]]

    return fn, [logits]


def _paired_features(rng):
    m = int(rng.integers(2, 7))
    d = int(rng.integers(2, 9))
    return rng.standard_normal((m, d)), rng.standard_normal((m, d))


def _kisp_instance(rng, tau=losses.DEFAULT_TAU):
    f_pre, f_cur = _paired_features(rng)
    pre_norm = l2_normalize(f_pre)

    def fn(params):
        tape = Tape()
        cur = tape.leaf(params[0])
        loss = losses.kisp_node(tape, pre_norm, tape.l2_normalize(cur), tau)
        grads = backward(tape, loss)
        return float(tape.value(loss)[0, 0]), [grads[cur]]

    return fn, [f_cur]


def _lfc_instance(rng):
    f_pre, f_cur = _paired_features(rng)
    pre_norm = l2_normalize(f_pre)

    def fn(params):
        tape = Tape()
        cur = tape.leaf(params[0])
        loss = losses.lfc_node(tape, pre_norm, tape.l2_normalize(cur))
        grads = backward(tape, loss)
        return float(tape.value(loss)[0, 0]), [grads[cur]]

    return fn, [f_cur]


def _rld_instance(rng):
    f_pre, f_cur = _paired_features(rng)

    def fn(params):
        tape = Tape()
        cur = tape.leaf(params[0])
        loss = losses.rld_node(tape, f_pre, cur)
        grads = backward(tape, loss)
        return float(tape.value(loss)[0, 0]), [grads[cur]]

    return fn, [f_cur]


def _total_instance(rng):
    d_in = int(rng.integers(2, 7))
    d_emb = int(rng.integers(2, 9))
    c = int(rng.integers(2, 6))
    n = int(rng.integers(1, 5))
    m = int(rng.integers(2, 7))
    lam = float(rng.choice([0.1, 1.0, 10.0]))
    tau = losses.DEFAULT_TAU
    x_cur = rng.standard_normal((n, d_in))
    x_mem = rng.standard_normal((m, d_in))
    labels = rng.integers(0, c, size=n + m)
    w_snapshot = rng.standard_normal((d_in, d_emb))
    pre_norm = l2_normalize(x_mem @ w_snapshot)
    w_enc = rng.standard_normal((d_in, d_emb))
    w_head = rng.standard_normal((d_emb, c))
    b_head = rng.standard_normal((1, c))

    def fn(params):
        w_e, w_h, b_h = params
        tape = Tape()
        leaves = ParamLeaves(tape)
        enc_leaf = leaves.leaf(w_e)
        f_all = tape.matmul(tape.constant(np.vstack([x_cur, x_mem])), enc_leaf)
        logits = tape.affine(f_all, leaves.leaf(w_h), leaves.leaf(b_h))
        ce = losses.cross_entropy_node(tape, logits, labels)
        f_mem = tape.matmul(tape.constant(x_mem), enc_leaf)
        reg = losses.kisp_node(tape, pre_norm, tape.l2_normalize(f_mem), tau)
        total = tape.add(ce, tape.scale(reg, lam))
        grads = backward(tape, total)
        ordered = [grads[nid] for _, nid in leaves.pairs()]
        return float(tape.value(total)[0, 0]), ordered

    return fn, [w_enc, w_head, b_head]


_BUILDERS = {
    "ce": _ce_instance,
    "kisp": _kisp_instance,
    "lfc": _lfc_instance,
    "rld": _rld_instance,
    "total": _total_instance,
}


def run_gradcheck(seed: int = 0, instances: int = 100,
                  h: float = 1e-5) -> dict[str, float]:
    """Max relative finite-difference error per loss over seeded instances."""
    worst = {}
    for li, name in enumerate(LOSS_NAMES):
        builder = _BUILDERS[name]
        err = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, li, i])
            fn, params = builder(rng)
            err = max(err, finite_diff_check(fn, params, h=h))
        worst[name] = err
    return worst
