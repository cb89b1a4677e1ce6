import numpy as np
import pytest

from oracles import forward_backward, hmm_model, random_dpn, random_evidence, unrolled_enumerator

from dpnet import window as W
from dpnet.errors import ModelError, ZeroMassError
from dpnet.jtree import is_jointly_calibrated
from dpnet.model import Cpt, DpnModel, Evidence, Variable, make_slice
from dpnet.smooth import interface_cliques, is_stale, query_smoothed, smooth_to


def run_filter(model, evidence, last, width=2):
    s = W.init(model, width)
    for t in range(last + 1):
        if t > s.current.t_high:
            W.advance(s, 1)
        for e in evidence:
            if e[0] == t:
                s.enter_evidence(Evidence(*e))
    s.propagate()
    return s


def coupled_model():
    """Two variables per slice that both receive temporal edges."""
    bi = ("0", "1")
    u, v = Variable("u", bi), Variable("v", bi)
    init = make_slice([Cpt("u", (), [0.4, 0.6]), Cpt("v", (("u", 0),), [0.7, 0.3, 0.2, 0.8])])
    trans = make_slice([Cpt("u", (("v", 1),), [0.9, 0.1, 0.3, 0.7]),
                        Cpt("v", (("u", 0), ("u", 1)), [0.8, 0.2, 0.6, 0.4, 0.3, 0.7, 0.1, 0.9])])
    return DpnModel((u, v), init, trans)


class TestInterfaceCliques:
    def test_hmm_single_interface_variable(self):
        s = run_filter(hmm_model(), [], 3)
        pair = interface_cliques(s, 2)
        assert pair.shared == {(1, "x")}
        assert pair.shared <= s.archived[0].view().cliques[pair.older_clique]
        assert pair.shared <= s.archived[1].view().cliques[pair.newer_clique]

    def test_two_variable_interface(self):
        s = run_filter(coupled_model(), [], 4)
        for n in range(2, s.N + 1):
            pair = interface_cliques(s, n)
            assert len(pair.shared) == 2
            newer = s.current.tree if n == s.N else s.archived[n - 1].view()
            assert pair.shared <= s.archived[n - 2].view().cliques[pair.older_clique]
            assert pair.shared <= newer.cliques[pair.newer_clique]

    def test_out_of_range(self):
        s = run_filter(hmm_model(), [], 3)
        with pytest.raises(IndexError):
            interface_cliques(s, 1)
        with pytest.raises(IndexError):
            interface_cliques(s, s.N + 1)


class TestSmoothTo:
    def test_late_evidence_reaches_first_slice(self):
        obs = [None, None, None, None, 1]
        s = run_filter(hmm_model(), [(4, "y", 1, None)], 4)
        assert s.current.t_low >= 3
        smooth_to(s, 1)
        ref = forward_backward(obs)
        assert np.allclose(query_smoothed(s, 0, "x").values, ref[0], atol=1e-10)

    def test_no_evidence_is_a_no_op(self):
        s = run_filter(hmm_model(), [], 6)
        before = {(n, i): p.values.copy() for n, a in enumerate(s.archived)
                  for i, p in enumerate(a.view().potentials)}
        smooth_to(s, 1)
        for (n, i), vals in before.items():
            assert np.max(np.abs(s.archived[n].view().potentials[i].values - vals)) < 1e-12

    def test_random_models_match_static_unroll(self):
        rng = np.random.default_rng(0)
        done = 0
        while done < 12:
            m = random_dpn(rng, max_vars=2, max_card=2)
            ev = random_evidence(rng, m, 5, p=0.4)
            try:
                s = run_filter(m, ev, 5)
            except ZeroMassError:
                continue
            assert s.N >= 4
            smooth_to(s, 1)
            en = unrolled_enumerator(m, 5)
            evx = [((t, v), st, lk) for t, v, st, lk in ev]
            for t in range(6):
                for v in m.slice_spec(t).variables:
                    assert np.allclose(query_smoothed(s, t, v).values, en.marginal((t, v), evx), atol=1e-10)
            done += 1

    def test_joint_calibration_after_smoothing(self):
        rng = np.random.default_rng(1)
        m = coupled_model()
        s = run_filter(m, random_evidence(rng, m, 5, p=0.6, soft=0.0), 5)
        smooth_to(s, 1)
        for n in range(2, s.N + 1):
            older = s.archived[n - 2].view()
            newer = s.current.tree if n == s.N else s.archived[n - 1].view()
            assert is_jointly_calibrated(older, newer, s.archived[n - 2].outgoing)

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        m = coupled_model()
        s = run_filter(m, random_evidence(rng, m, 5, p=0.6, soft=0.0), 5)
        smooth_to(s, 1)
        first = [query_smoothed(s, t, "u").values for t in range(6)]
        smooth_to(s, 1)
        second = [query_smoothed(s, t, "u").values for t in range(6)]
        assert max(float(np.max(np.abs(a - b))) for a, b in zip(first, second)) < 1e-12

    def test_target_range(self):
        s = run_filter(hmm_model(), [], 3)
        with pytest.raises(IndexError):
            smooth_to(s, s.N)
        with pytest.raises(IndexError):
            smooth_to(s, 0)


class TestQuerySmoothed:
    def test_window_query_bypasses_smoothing(self):
        s = run_filter(hmm_model(), [(3, "y", 0, None)], 3)
        t = s.current.t_high
        assert np.array_equal(query_smoothed(s, t, "x").values, s.current.marginal(t, "x").values)

    def test_negative_slice(self):
        s = run_filter(hmm_model(), [], 2)
        with pytest.raises(W.WindowError):
            query_smoothed(s, -1, "x")

    def test_unknown_variable(self):
        s = run_filter(hmm_model(), [], 3)
        with pytest.raises(ModelError):
            query_smoothed(s, 0, "nope")

    def test_staleness_tracks_new_evidence(self):
        s = run_filter(hmm_model(), [(0, "y", 0, None)], 4)
        query_smoothed(s, 0, "x")
        assert not is_stale(s, 1)
        s.enter_evidence(Evidence(s.current.t_high, "y", 1))
        assert is_stale(s, 1)
        obs = [0, None, None, None, 1]
        assert np.allclose(query_smoothed(s, 0, "x").values, forward_backward(obs)[0], atol=1e-10)

    def test_delayed_window_evidence(self):
        # evidence for the oldest window slice arrives after two reductions
        m = hmm_model()
        s = run_filter(m, [(0, "y", 1, None)], 3)
        assert s.current.t_low == 2
        s.enter_evidence(Evidence(2, "y", 0))
        s.propagate()
        obs = [1, None, 0, None]
        ref = forward_backward(obs)
        for t in range(4):
            assert np.allclose(query_smoothed(s, t, "x").values, ref[t], atol=1e-10)
