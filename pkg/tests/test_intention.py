"""Generation loop gates against a hand-simulated oracle."""

import math

import numpy as np
import pytest

from workflow_intention import encoder_decoder as ed
from workflow_intention import intention as it
from workflow_intention import numerics as nm
from workflow_intention import signals as sg

D = 6


def _identity_heads(d=D):
    def eye(name):
        return nm.LinearParams(nm.Param(name + ".w", np.eye(d)),
                               nm.Param(name + ".b", np.zeros((d, 1))))
    return sg.ProjectionHeadSet(eye("hi"), eye("hp"), eye("ho"))


def _stop_head_with_logits(l0, l1, d=D):
    """Input-independent stopping head: zero weights, fixed bias logits."""
    lin = nm.LinearParams(nm.Param("stop.w", np.zeros((2, d))),
                          nm.Param("stop.b", np.array([[l0], [l1]])))
    return nm.MlpSpec((("identity", lin),))


def _decoder_params(seed=0, stop_logits=(-3.0, 3.0), proj=None, d=D):
    bank = {}
    rng = np.random.default_rng(seed)
    dec = ed.make_decoder(bank, rng, "dec", ed.StackConfig(1, d, 2, 8, n_heads_cross=2))
    if proj is None:
        proj = ed.make_linear(bank, rng, "cand", d, d)
    return it.IntentionDecoderParams(
        decoder=dec,
        bos=ed.make_param(bank, rng, "bos", d, 1),
        candidate_proj=proj,
        heads=_identity_heads(d),
        stop_head=_stop_head_with_logits(*stop_logits, d=d),
    )


def _context(seed=1, n=4, d=D):
    x = np.random.default_rng(seed).standard_normal((d, n))
    return sg.FusionContext(nm.constant(x), ("text",) * n)


def _basis_stub(d=D):
    """Stub decoder whose step-t last column is the t-th standard basis vector."""
    def fn(prefix, ctx):
        t = prefix.shape[1]
        cols = np.zeros((d, t))
        for j in range(t):
            cols[j % d, j] = 1.0
        return nm.constant(cols)
    return fn


class TestStoppingHead:
    def test_step_one_forced_accept(self):
        params = _decoder_params(stop_logits=(9.0, -9.0))  # would stop if consulted
        accept, prob = it.stopping_head(nm.constant(np.zeros((D, 1))),
                                        params.stop_head, step=1)
        assert accept and prob.item() == 1.0

    def test_tie_probability_stops(self):
        head = _stop_head_with_logits(0.0, 0.0)
        accept, prob = it.stopping_head(nm.constant(np.zeros((D, 1))), head, step=2)
        assert prob.item() == pytest.approx(0.5)
        assert not accept

    def test_hand_set_logits(self):
        head = _stop_head_with_logits(-2.0, 2.0)
        accept, prob = it.stopping_head(nm.constant(np.zeros((D, 1))), head, step=2)
        expected = math.exp(2) / (math.exp(2) + math.exp(-2))
        assert prob.item() == pytest.approx(expected, abs=1e-12)
        assert accept


class TestRedundancyCheck:
    def _intention(self, i, p, o, step=1):
        as_col = lambda v: np.asarray(v, dtype=np.float64).reshape(-1, 1)
        return it.Intention(as_col(i), as_col(p), as_col(o), step)

    def test_empty_history_continues(self):
        cand = self._intention([1, 0], [0, 1], [1, 1])
        keep, sim = it.redundancy_check(cand, [], 0.0)
        assert keep and sim is None

    def test_identical_intentions_stop(self):
        a = self._intention([1, 2], [3, 4], [5, 6])
        b = self._intention([1, 2], [3, 4], [5, 6], step=2)
        keep, sim = it.redundancy_check(b, [a], 0.99)
        assert not keep
        assert sim == pytest.approx(1.0)

    def test_orthogonal_components_continue(self):
        a = self._intention([1, 0], [1, 0], [1, 0])
        b = self._intention([0, 1], [0, 1], [0, 1], step=2)
        keep, sim = it.redundancy_check(b, [a], 0.1)
        assert keep
        assert sim == pytest.approx(0.0)

    def test_zero_vector_contributes_zero(self):
        a = self._intention([1, 0], [0, 0], [1, 0])
        b = self._intention([1, 0], [1, 1], [1, 0], step=2)
        keep, sim = it.redundancy_check(b, [a], 0.9)
        # cosines: 1, 0 (zero norm), 1 -> mean 2/3 < 0.9
        assert sim == pytest.approx(2 / 3)
        assert keep


class TestProjectIntention:
    def test_identity_projection(self):
        d = D
        proj = nm.LinearParams(nm.Param("w", np.eye(d)), nm.Param("b", np.zeros((d, 1))))
        s = np.random.default_rng(0).standard_normal((d, 1))
        cand, triple = it.project_intention(nm.constant(s), proj, _identity_heads())
        np.testing.assert_allclose(cand.value, s)
        np.testing.assert_allclose(triple.i.value, s)

    def test_zero_input_gives_biases(self):
        rng = np.random.default_rng(1)
        bank = {}
        proj = ed.make_linear(bank, rng, "cand", D, D)
        heads = sg.ProjectionHeadSet(
            ed.make_linear(bank, rng, "hi", D, D),
            ed.make_linear(bank, rng, "hp", D, D),
            ed.make_linear(bank, rng, "ho", D, D),
        )
        cand, triple = it.project_intention(nm.constant(np.zeros((D, 1))), proj, heads)
        np.testing.assert_allclose(cand.value, proj.b.value)
        expected_i = heads.input.w.value @ proj.b.value + heads.input.b.value
        np.testing.assert_allclose(triple.i.value, expected_i, atol=1e-12)

    def test_matches_chained_linear_oracle(self):
        rng = np.random.default_rng(2)
        bank = {}
        proj = ed.make_linear(bank, rng, "cand", D, D)
        heads = _identity_heads()
        s = rng.standard_normal((D, 1))
        cand, triple = it.project_intention(nm.constant(s), proj, heads)
        np.testing.assert_allclose(cand.value, nm.linear(nm.constant(s), proj).value)
        np.testing.assert_allclose(triple.p.value, cand.value)


class TestGenerate:
    def test_hard_limit_single_step(self):
        params = _decoder_params(stop_logits=(-3.0, 3.0))
        result = it.generate(_context(), params, it.StoppingConfig(0.9, 1))
        assert len(result.set) == 1
        assert result.set.stop_reason == "hard_limit"
        assert result.set.intentions[0].step == 1

    def test_duplicate_candidates_trigger_redundancy(self):
        # zero candidate weights, fixed bias: every step proposes the same triple
        bias = np.random.default_rng(3).standard_normal((D, 1))
        proj = nm.LinearParams(nm.Param("cand.w", np.zeros((D, D))),
                               nm.Param("cand.b", bias))
        params = _decoder_params(stop_logits=(-3.0, 3.0), proj=proj)
        result = it.generate(_context(), params, it.StoppingConfig(0.99, 5))
        assert result.set.stop_reason == "redundancy"
        assert len(result.set) == 1
        assert result.gate_log[-1]["similarity"] == pytest.approx(1.0)

    def test_orthogonal_stub_runs_to_hard_limit(self):
        d = D
        proj = nm.LinearParams(nm.Param("w", np.eye(d)), nm.Param("b", np.zeros((d, 1))))
        params = _decoder_params(stop_logits=(-3.0, 3.0), proj=proj)
        result = it.generate(_context(), params, it.StoppingConfig(0.9, 5),
                             decode_fn=_basis_stub())
        assert len(result.set) == 5
        assert result.set.stop_reason == "hard_limit"
        # hand-simulated loop: basis vectors are pairwise orthogonal, head always
        # accepts, so exactly max_steps intentions come out
        for t, gamma in enumerate(result.set.intentions, start=1):
            expected = np.zeros((d, 1))
            expected[(t - 1) % d, 0] = 1.0
            np.testing.assert_allclose(gamma.i, expected)

    def test_head_stop_leaves_no_later_intentions(self):
        params = _decoder_params(stop_logits=(3.0, -3.0))  # stops at step 2
        result = it.generate(_context(), params, it.StoppingConfig(0.9, 5))
        assert result.set.stop_reason == "head"
        assert len(result.set) == 1
        assert max(g.step for g in result.set.intentions) == 1
        assert len(result.accept_probs) == 2  # the rejected step's probability recorded

    def test_size_never_exceeds_limit(self):
        for seed in range(8):
            params = _decoder_params(seed=seed, stop_logits=(-3.0, 3.0))
            cfg = it.StoppingConfig(1.0, 3)
            result = it.generate(_context(seed + 40), params, cfg)
            assert 1 <= len(result.set) <= 3

    def test_prefix_replay_reproduces_columns(self):
        params = _decoder_params(stop_logits=(-3.0, 3.0))
        ctx = _context()
        result = it.generate(ctx, params, it.StoppingConfig(0.95, 4))
        s = result.decoded
        assert s.shape[1] == len(result.set) + 1
        full = ed.decode_step(nm.constant(s), ctx.matrix, params.decoder).value
        for t in range(1, s.shape[1] + 1):
            part = ed.decode_step(nm.constant(s[:, :t]), ctx.matrix, params.decoder).value
            np.testing.assert_allclose(part, full[:, :t], atol=1e-12)

    def test_gate_log_replayable(self):
        params = _decoder_params(stop_logits=(-3.0, 3.0))
        cfg = it.StoppingConfig(0.95, 4)
        result = it.generate(_context(), params, cfg)
        accepted = [e for e in result.gate_log if e.get("redundancy_continue")]
        for entry in accepted:
            if entry["similarity"] is not None:
                assert entry["similarity"] < cfg.similarity_threshold

    def test_json_serialization_shape(self):
        params = _decoder_params(stop_logits=(-3.0, 3.0))
        result = it.generate(_context(), params, it.StoppingConfig(0.9, 2))
        blob = it.intention_set_to_json(result)
        assert blob["stop_reason"] in ("head", "redundancy", "hard_limit")
        assert all(len(rec["i"]) == D for rec in blob["intentions"])
        assert [rec["step"] for rec in blob["intentions"]] == list(
            range(1, len(blob["intentions"]) + 1))


def test_generation_against_hand_simulated_gates():
    """Replay the loop with explicit Python gates and compare decisions."""
    for seed in range(6):
        params = _decoder_params(seed=seed, stop_logits=(-1.0, 1.0))
        cfg = it.StoppingConfig(0.98, 4)
        ctx = _context(seed + 10)
        result = it.generate(ctx, params, cfg)

        # oracle: run the same mechanism step by step with plain numpy
        prefix = params.bos.value.copy()
        history = []
        reason = None
        step = 1
        while True:
            if step > cfg.max_steps:
                reason = "hard_limit"
                break
            out = ed.decode_step(nm.constant(prefix), ctx.matrix, params.decoder).value
            s_last = out[:, -1:]
            if step > 1:
                logits = params.stop_head.layers[0][1].w.value @ s_last \
                    + params.stop_head.layers[0][1].b.value
                e = np.exp(logits - logits.max())
                p_accept = float((e / e.sum())[1, 0])
                if not p_accept > 0.5:
                    reason = "head"
                    break
            cand = params.candidate_proj.w.value @ s_last + params.candidate_proj.b.value
            triple = [h.w.value @ cand + h.b.value
                      for h in (params.heads.input, params.heads.process, params.heads.output)]
            stop = False
            for prior in history:
                sims = []
                for a, b in zip(prior, triple):
                    na, nb = np.linalg.norm(a), np.linalg.norm(b)
                    sims.append(0.0 if na == 0 or nb == 0 else float(a.ravel() @ b.ravel() / (na * nb)))
                if not np.mean(sims) < cfg.similarity_threshold:
                    stop = True
            if stop:
                reason = "redundancy"
                break
            history.append(triple)
            prefix = np.concatenate([prefix, cand], axis=1)
            step += 1

        assert result.set.stop_reason == reason
        assert len(result.set) == len(history)
        for gamma, oracle in zip(result.set.intentions, history):
            np.testing.assert_allclose(gamma.i, oracle[0], atol=1e-10)
            np.testing.assert_allclose(gamma.p, oracle[1], atol=1e-10)
            np.testing.assert_allclose(gamma.o, oracle[2], atol=1e-10)
