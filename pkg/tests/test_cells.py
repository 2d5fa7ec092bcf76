"""Recurrent cells: step identities, hand-worked cases, unroll gradients."""

import dataclasses

import numpy as np
import pytest

from srulab import ops
from srulab.cells import (CellSpec, GruParams, GruState, LstmParams, LstmState,
                          SruParams, SruState, TaskHead, cell_step, gru_step,
                          head_apply, init_cell, init_head, init_model,
                          lstm_step, named_tensors, replace_tensors, sru_step,
                          state_zero, unroll, watch)
from srulab.rng import INIT, stream
from srulab.tensor import Tape, Tensor, backward, finite_diff_check


def sru_ones(alphas=(0.5,), s=1, r=1, u=1, d=1, value=1.0):
    def full(rows, cols):
        return Tensor(np.full((rows, cols), value))

    m = len(alphas)
    return SruParams(
        alphas=alphas,
        w_r=full(r, m * s), b_r=Tensor(np.zeros(r)), w_phi=full(s, r),
        w_x=full(s, d), b_phi=Tensor(np.zeros(s)),
        w_o=full(u, m * s), b_o=Tensor(np.zeros(u)),
    )


def zero_like_params(params):
    new = {name: Tensor(np.zeros(t.shape)) for name, t in named_tensors(params)}
    return replace_tensors(params, new)


class TestSruStep:
    def test_zero_weights_decay_state_and_emit_zero(self):
        alphas = (0.0, 0.5, 0.9)
        spec = CellSpec("sru", num_units=2, num_stats=2, summary_dims=2,
                        alphas=alphas)
        params = zero_like_params(init_cell(spec, 3, stream(0, INIT)))
        mu0 = np.arange(1.0, 7.0)   # blocks of width 2, ascending alpha
        state = SruState(Tensor(mu0), len(alphas))
        state2, o = sru_step(params, state, np.ones(3))
        want = mu0 * np.repeat(alphas, 2)
        assert np.allclose(state2.mu.array, want, rtol=0, atol=0)
        assert o.array.tolist() == [0.0, 0.0]

    def test_alpha_zero_state_equals_statistics(self):
        spec = CellSpec("sru", num_units=3, num_stats=4, summary_dims=2,
                        alphas=(0.0,))
        params = init_cell(spec, 2, stream(1, INIT))
        x = np.array([0.3, -0.8])
        state2, _ = sru_step(params, state_zero(params), x)
        # mu' = 0*mu + 1*phi, with phi recomputed by hand
        r = np.maximum(params.b_r.array, 0.0)
        phi = np.maximum(
            params.w_phi.array @ r + params.w_x.array @ x + params.b_phi.array,
            0.0)
        assert np.allclose(state2.mu.array, phi, rtol=1e-15, atol=0)

    def test_hand_worked_scalar_cell(self):
        # d = s = r = u = 1, one scale alpha = 0.5, every weight 1, bias 0,
        # inputs all 1
        params = sru_ones()
        state = state_zero(params)
        state, o = sru_step(params, state, np.array([1.0]))
        # r1 = relu(0) = 0; phi1 = relu(0 + 1) = 1; mu1 = 0.5*0 + 0.5*1
        assert state.mu.array.tolist() == [0.5]
        assert o.array.tolist() == [0.5]
        state, o = sru_step(params, state, np.array([1.0]))
        # r2 = 0.5; phi2 = relu(0.5 + 1) = 1.5; mu2 = 0.25 + 0.75 = 1.0
        assert state.mu.array.tolist() == [1.0]
        assert o.array.tolist() == [1.0]

    def test_summary_free_variant_has_no_summary_weights(self):
        spec = CellSpec("sru", num_units=2, num_stats=3, summary_dims=0,
                        alphas=(0.5,))
        params = init_cell(spec, 2, stream(2, INIT))
        assert params.w_r is None and params.b_r is None and params.w_phi is None
        assert params.summary_dims == 0
        x = np.array([1.0, -1.0])
        state2, o = sru_step(params, state_zero(params), x)
        phi = np.maximum(params.w_x.array @ x + params.b_phi.array, 0.0)
        assert np.allclose(state2.mu.array, 0.5 * phi)
        assert o is not None

    def test_need_output_false_skips_output(self):
        params = sru_ones()
        s_with, o = sru_step(params, state_zero(params), np.array([1.0]))
        s_without, none = sru_step(params, state_zero(params), np.array([1.0]),
                                   need_output=False)
        assert none is None
        assert s_with.mu.array.tolist() == s_without.mu.array.tolist()

    def test_batch_matches_single(self):
        spec = CellSpec("sru", num_units=3, num_stats=2, summary_dims=2,
                        alphas=(0.0, 0.9))
        params = init_cell(spec, 2, stream(3, INIT))
        xs = np.random.default_rng(4).normal(size=(3, 2))
        batch_state, batch_o = sru_step(params, state_zero(params, batch=3), xs)
        for i in range(3):
            s, o = sru_step(params, state_zero(params), xs[i])
            assert np.allclose(batch_state.mu.array[i], s.mu.array)
            assert np.allclose(batch_o.array[i], o.array)

    def test_tanh_option(self):
        params = sru_ones()
        _, o = sru_step(params, state_zero(params), np.array([-1.0]), f=ops.tanh)
        # phi = tanh(tanh(0) + (-1)) = tanh(-1); mu = 0.5 phi; o = tanh(mu)
        phi = np.tanh(-1.0)
        assert np.allclose(o.array, np.tanh(0.5 * phi))


class TestAlphaCanonicalization:
    def test_unsorted_alphas_compute_same_function(self):
        rng = np.random.default_rng(5)
        s, m, u, r, d = 2, 3, 2, 2, 2
        w_r = rng.normal(size=(r, m * s))
        w_o = rng.normal(size=(u, m * s))
        shared = dict(
            b_r=Tensor(rng.normal(size=r)),
            w_phi=Tensor(rng.normal(size=(s, r))),
            w_x=Tensor(rng.normal(size=(s, d))),
            b_phi=Tensor(rng.normal(size=s)),
            b_o=Tensor(rng.normal(size=u)),
        )
        sorted_params = SruParams(alphas=(0.0, 0.5, 0.9), w_r=Tensor(w_r),
                                  w_o=Tensor(w_o), **shared)
        # same weights presented with scale blocks in the order (0.9, 0.0, 0.5)
        perm = [2, 0, 1]

        def shuffle(w):
            return Tensor(w.reshape(w.shape[0], m, s)[:, perm, :]
                          .reshape(w.shape))

        shuffled = SruParams(alphas=(0.9, 0.0, 0.5), w_r=shuffle(w_r),
                             w_o=shuffle(w_o), **shared)
        assert shuffled.alphas == (0.0, 0.5, 0.9)
        assert np.allclose(shuffled.w_r.array, w_r)
        assert np.allclose(shuffled.w_o.array, w_o)
        x = rng.normal(size=(4, d))
        a, oa = sru_step(sorted_params, state_zero(sorted_params, 4), x)
        b, ob = sru_step(shuffled, state_zero(shuffled, 4), x)
        assert np.allclose(oa.array, ob.array, rtol=0, atol=0)

    def test_state_from_mus_reorders_with_alphas(self):
        st = SruState.from_mus((0.9, 0.0), [np.array([1.0, 2.0]),
                                            np.array([3.0, 4.0])])
        assert st.mu.array.tolist() == [3.0, 4.0, 1.0, 2.0]
        assert [m.array.tolist() for m in st.mus] == [[3.0, 4.0], [1.0, 2.0]]

    def test_duplicate_alphas_rejected(self):
        with pytest.raises(ValueError):
            CellSpec("sru", num_units=1, num_stats=1, alphas=(0.5, 0.5))

    def test_alpha_one_rejected(self):
        with pytest.raises(ValueError):
            CellSpec("sru", num_units=1, num_stats=1, alphas=(1.0,))


class TestGruStep:
    def test_zero_weights_halve_state(self):
        spec = CellSpec("gru", num_units=2)
        params = zero_like_params(init_cell(spec, 3, stream(6, INIT)))
        state = GruState(Tensor([1.0, 2.0]))
        state2, h2 = gru_step(params, state, np.ones(3))
        # gates sigmoid(0) = 0.5, candidate tanh(0) = 0:
        # h' = 0.5 h + 0.5 * 0
        assert np.allclose(state2.h.array, [0.5, 1.0])
        assert h2 is state2.h

    def test_hand_worked_unit(self):
        params = GruParams(
            w_gates=Tensor([[1.0, 0.0], [2.0, 0.0]]),
            b_gates=Tensor([0.0, 0.0]),
            w_cand=Tensor([[3.0, 0.0]]),
            b_cand=Tensor([0.0]),
        )
        state2, _ = gru_step(params, GruState(Tensor([0.0])), np.array([1.0]))
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        want = (1.0 - sig(1.0)) * np.tanh(3.0)
        assert np.allclose(state2.h.array, [want], rtol=1e-15)

    def test_batch_matches_single(self):
        spec = CellSpec("gru", num_units=3)
        params = init_cell(spec, 2, stream(7, INIT))
        xs = np.random.default_rng(8).normal(size=(4, 2))
        bstate, _ = gru_step(params, state_zero(params, batch=4), xs)
        for i in range(4):
            s, _ = gru_step(params, state_zero(params), xs[i])
            assert np.allclose(bstate.h.array[i], s.h.array)


class TestLstmStep:
    def test_zero_weights_decay_cell_by_sigmoid_one(self):
        spec = CellSpec("lstm", num_units=2)
        params = init_cell(spec, 3, stream(9, INIT))
        params = LstmParams(w=Tensor(np.zeros(params.w.shape)), b=params.b)
        assert params.b.array.tolist() == [0, 0, 0, 0, 1, 1, 0, 0]
        c0 = np.array([1.0, -2.0])
        state = LstmState(Tensor(np.zeros(2)), Tensor(c0))
        state2, h2 = lstm_step(params, state, np.ones(3))
        decay = 1.0 / (1.0 + np.exp(-1.0))   # ~0.731
        assert np.allclose(state2.c.array, decay * c0, rtol=1e-15)
        assert np.allclose(h2.array, 0.5 * np.tanh(decay * c0), rtol=1e-15)

    def test_shapes(self):
        spec = CellSpec("lstm", num_units=4)
        params = init_cell(spec, 3, stream(10, INIT))
        assert params.w.shape == (16, 7)
        assert params.b.shape == (16,)
        assert params.num_units == 4 and params.input_dim == 3
        state2, h2 = lstm_step(params, state_zero(params, batch=5),
                               np.ones((5, 3)))
        assert state2.h.shape == (5, 4) and state2.c.shape == (5, 4)
        assert h2.shape == (5, 4)


class TestInit:
    def test_same_seed_same_weights(self):
        spec = CellSpec("sru", num_units=4, num_stats=3, summary_dims=2)
        p1, h1 = init_model(spec, 5, "next_step_regression", 5, seed=42)
        p2, h2 = init_model(spec, 5, "next_step_regression", 5, seed=42)
        for (n1, t1), (n2, t2) in zip(named_tensors(p1), named_tensors(p2)):
            assert n1 == n2 and t1.array.tolist() == t2.array.tolist()
        assert h1.w_p.array.tolist() == h2.w_p.array.tolist()

    def test_different_seed_different_weights(self):
        spec = CellSpec("gru", num_units=4)
        p1, _ = init_model(spec, 5, "next_step_regression", 5, seed=1)
        p2, _ = init_model(spec, 5, "next_step_regression", 5, seed=2)
        assert not np.allclose(p1.w_gates.array, p2.w_gates.array)

    def test_biases_zero_except_lstm_forget(self):
        rng = stream(11, INIT)
        sru = init_cell(CellSpec("sru", num_units=2, num_stats=2,
                                 summary_dims=1), 2, rng)
        assert sru.b_r.array.tolist() == [0.0]
        assert sru.b_phi.array.tolist() == [0.0, 0.0]
        assert sru.b_o.array.tolist() == [0.0, 0.0]
        lstm = init_cell(CellSpec("lstm", num_units=3), 2, rng)
        b = lstm.b.array
        assert b[6:9].tolist() == [1.0, 1.0, 1.0]
        assert b[:6].tolist() + b[9:].tolist() == [0.0] * 9

    def test_head_shapes(self):
        head = init_head("end_classification", 10, 7, stream(12, INIT))
        assert head.w_p.shape == (10, 7) and head.b_p.shape == (10,)
        assert head.target_dim == 10

    def test_bad_specs_rejected(self):
        with pytest.raises(ValueError):
            CellSpec("rnn", num_units=2)
        with pytest.raises(ValueError):
            CellSpec("sru", num_units=2, num_stats=0)
        with pytest.raises(ValueError):
            CellSpec("sru", num_units=0, num_stats=1)
        with pytest.raises(ValueError):
            CellSpec("sru", num_units=1, num_stats=1, nonlinearity="gelu")
        with pytest.raises(ValueError):
            init_cell(CellSpec("gru", num_units=1), 0, stream(0, INIT))


class TestUnroll:
    def test_single_step_end_classification_is_affine_readout(self):
        spec = CellSpec("sru", num_units=3, num_stats=2, summary_dims=2)
        params, head = init_model(spec, 2, "end_classification", 4, seed=13)
        xs = np.random.default_rng(14).normal(size=(1, 2))
        logits, tape = unroll(params, head, xs)
        assert tape is None
        _, o1 = sru_step(params, state_zero(params), xs[0])
        want = head.w_p.array @ o1.array + head.b_p.array
        assert np.allclose(logits.array, want, rtol=1e-15)

    def test_per_step_head_returns_one_prediction_per_step(self):
        spec = CellSpec("gru", num_units=3)
        params, head = init_model(spec, 2, "next_step_regression", 2, seed=15)
        xs = np.random.default_rng(16).normal(size=(7, 2))
        preds, _ = unroll(params, head, xs)
        assert isinstance(preds, list) and len(preds) == 7
        assert all(p.shape == (2,) for p in preds)

    def test_batched_unroll_matches_loop(self):
        spec = CellSpec("sru", num_units=2, num_stats=2, summary_dims=1,
                        alphas=(0.0, 0.9))
        params, head = init_model(spec, 2, "next_step_regression", 2, seed=17)
        X = np.random.default_rng(18).normal(size=(3, 5, 2))
        batch_preds, _ = unroll(params, head, X)
        assert all(p.shape == (3, 2) for p in batch_preds)
        for i in range(3):
            single, _ = unroll(params, head, X[i])
            for t in range(5):
                assert np.allclose(batch_preds[t].array[i], single[t].array)

    def test_keep_one_training_equals_evaluation(self):
        spec = CellSpec("lstm", num_units=3)
        params, head = init_model(spec, 2, "end_classification", 2, seed=19)
        xs = np.random.default_rng(20).normal(size=(4, 2))
        eval_logits, _ = unroll(params, head, xs)
        train_logits, _ = unroll(params, head, xs, dropout_keep=1.0,
                                 rng=np.random.default_rng(0))
        assert eval_logits.array.tolist() == train_logits.array.tolist()

    def test_empty_sequence_rejected(self):
        spec = CellSpec("gru", num_units=2)
        params, head = init_model(spec, 2, "end_classification", 2, seed=21)
        with pytest.raises(ValueError):
            unroll(params, head, np.zeros((0, 2)))


def unroll_loss(params, head, xs, targets):
    preds, _ = unroll(params, head, xs, f=ops.tanh)
    if not isinstance(preds, list):
        preds = [preds]
    total = None
    for p, y in zip(preds, targets):
        term = ops.sq_norm(ops.sub(p, Tensor(y)))
        total = term if total is None else ops.add(total, term)
    return total


@pytest.mark.parametrize("kind,extra", [
    ("sru", dict(num_stats=2, summary_dims=2, alphas=(0.0, 0.9))),
    ("gru", {}),
    ("lstm", {}),
])
def test_unroll_gradients_match_finite_differences(kind, extra):
    # length-5 sequence, every parameter tensor checked one at a time
    spec = CellSpec(kind, num_units=3, **extra)
    params, head = init_model(spec, 2, "next_step_regression", 2, seed=22)
    rng = np.random.default_rng(23)
    xs = rng.normal(size=(5, 2))
    targets = rng.normal(size=(5, 2))
    tensors = named_tensors(params) + named_tensors(head)
    for name, tensor in tensors:
        def f(leaf, name=name):
            p2 = replace_tensors(params, {name: leaf})
            h2 = replace_tensors(head, {name: leaf})
            return unroll_loss(p2, h2, xs, targets)

        err = finite_diff_check(f, tensor.array, eps=1e-5)
        assert err < 1e-4, f"{kind} {name}: {err}"


class TestWatchAndNames:
    def test_named_tensors_use_canonical_names(self):
        spec = CellSpec("sru", num_units=2, num_stats=2, summary_dims=1)
        params, head = init_model(spec, 2, "next_step_regression", 2, seed=24)
        assert [n for n, _ in named_tensors(params)] == [
            "sru/W_r", "sru/b_r", "sru/W_phi", "sru/W_x", "sru/b_phi",
            "sru/W_o", "sru/b_o"]
        assert [n for n, _ in named_tensors(head)] == ["head/W_p", "head/b_p"]

    def test_summary_free_names_skip_absent_fields(self):
        spec = CellSpec("sru", num_units=2, num_stats=2, summary_dims=0,
                        alphas=(0.5,))
        params = init_cell(spec, 2, stream(25, INIT))
        assert [n for n, _ in named_tensors(params)] == [
            "sru/W_x", "sru/b_phi", "sru/W_o", "sru/b_o"]

    def test_watch_registers_leaves_and_preserves_values(self):
        spec = CellSpec("gru", num_units=2)
        params = init_cell(spec, 2, stream(26, INIT))
        tape = Tape()
        watched = watch(params, tape)
        assert watched.w_gates.tape is tape
        assert watched.w_gates.array.tolist() == params.w_gates.array.tolist()
        assert params.w_gates.tape is None

    def test_replace_round_trip(self):
        spec = CellSpec("lstm", num_units=2)
        params = init_cell(spec, 3, stream(27, INIT))
        new_w = Tensor(np.zeros(params.w.shape))
        replaced = replace_tensors(params, {"lstm/W": new_w})
        assert replaced.w is new_w
        assert replaced.b is params.b

    def test_gradient_flows_to_watched_params(self):
        spec = CellSpec("sru", num_units=2, num_stats=2, summary_dims=1,
                        alphas=(0.5,), nonlinearity="tanh")
        params, head = init_model(spec, 2, "next_step_regression", 2, seed=28)
        tape = Tape()
        wp, wh = watch(params, tape), watch(head, tape)
        xs = np.random.default_rng(29).normal(size=(4, 2))
        loss = unroll_loss(wp, wh, xs, np.zeros((4, 2)))
        grads = backward(tape, loss)
        g = grads[wp.w_x].array
        assert g.shape == wp.w_x.shape and np.any(g != 0.0)
