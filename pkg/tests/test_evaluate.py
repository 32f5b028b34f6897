import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videoiq.data import generate_dataset
from videoiq.evaluate import (ENSEMBLE_ACTION, MODES, EvalError, cost_table_for, cross_policy_eval, dump_traces,
                              evaluate, gflops_from_traces, informative_alignment, mean_average_precision,
                              policy_histogram, read_traces, reports_csv)
from videoiq.policy import ActionSpace, PolicyConfig, PolicyNet

ACTIONS = ActionSpace()


@pytest.fixture
def setup(tiny_cfg, tiny_net, tiny_policy):
    data, man = generate_dataset(tiny_cfg.data.test_spec(), split="test")
    return tiny_net, tiny_policy, data, man


# -- mAP -----------------------------------------------------------------------


def test_map_perfect_ranking():
    labels = np.array([0, 1, 2, 0, 1, 2])
    assert mean_average_precision(np.eye(3)[labels], labels) == pytest.approx(100.0)


def test_map_hand_example():
    # each class has its positives ranked 2nd and 4th: AP = (1/2 + 2/4) / 2
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.6, 0.4]])
    labels = np.array([1, 0, 1, 0])
    assert mean_average_precision(scores, labels) == pytest.approx(50.0)


def test_map_skips_absent_classes():
    labels = np.array([0, 0, 1])
    scores = np.array([[1.0, 0.0, 0.5], [0.9, 0.1, 0.5], [0.0, 1.0, 0.5]])
    assert mean_average_precision(scores, labels) == pytest.approx(100.0)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_map_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random((20, 3))
    labels = rng.integers(0, 3, 20)
    a = mean_average_precision(scores, labels)
    b = mean_average_precision(np.exp(3 * scores) + 1, labels)
    assert a == pytest.approx(b)
    assert 0 <= a <= 100


# -- modes and cost accounting -----------------------------------------------


def test_uniform_32_gflops_exact(setup):
    net, policy, data, _ = setup
    rep = evaluate(policy, net, data, "uniform-32")
    table = cost_table_for(net, policy, ACTIONS)
    t = data.frames.shape[1]
    assert rep.recognizer_gflops_per_video == t * table.flops_per_frame[32] / 1e9
    assert rep.gflops_per_video == pytest.approx(t * (table.flops_per_frame[32] + table.policy_overhead_per_frame) / 1e9,
                                                 rel=1e-12)
    assert rep.usage[32] == 1.0
    rep.check()


def test_uniform_modes_order_cost(setup):
    net, policy, data, _ = setup
    g = {b: evaluate(policy, net, data, f"uniform-{b}").recognizer_gflops_per_video for b in (32, 4, 2)}
    ens = evaluate(policy, net, data, "ensemble")
    assert ens.recognizer_gflops_per_video >= max(g.values())
    assert g[32] > g[4] > g[2]
    assert ens.recognizer_gflops_per_video == pytest.approx(sum(g.values()))


def test_random_mode_expected_cost(tiny_cfg, tiny_net, tiny_policy):
    # 1000 videos x 8 frames; the sampled cost has a relative std of about 1.1%
    spec = dataclasses.replace(tiny_cfg.data.test_spec(), videos=1000, frames=8)
    data, _ = generate_dataset(spec, split="test")
    rep = evaluate(tiny_policy, tiny_net, data, "random", seed=3)
    table = cost_table_for(tiny_net, tiny_policy, ACTIONS)
    expected = 8 * np.mean([table.flops_per_frame[a] for a in ACTIONS.actions]) / 1e9
    assert rep.recognizer_gflops_per_video == pytest.approx(expected, rel=0.03)
    for a in ACTIONS.actions:
        assert rep.usage[a] == pytest.approx(0.25, abs=0.02)


def test_random_mode_follows_given_probs(setup):
    net, policy, data, _ = setup
    probs = np.array([0.0, 0.0, 1.0, 0.0])
    rep = evaluate(policy, net, data, "random", random_probs=probs)
    assert rep.usage[2] == 1.0


def test_random_mode_is_seeded(setup):
    net, policy, data, _ = setup
    a = evaluate(policy, net, data, "random", seed=1)
    b = evaluate(policy, net, data, "random", seed=1)
    assert [t.actions.tolist() for t in a.traces] == [t.actions.tolist() for t in b.traces]


def test_bad_random_probs(setup):
    net, policy, data, _ = setup
    with pytest.raises(EvalError):
        evaluate(policy, net, data, "random", random_probs=[0.5, 0.5])


def test_unknown_mode(setup):
    net, policy, data, _ = setup
    with pytest.raises(EvalError, match="unknown mode"):
        evaluate(policy, net, data, "uniform-3")
    with pytest.raises(EvalError):
        evaluate(policy, net, data, "uniform-8")
    with pytest.raises(EvalError):
        evaluate(None, net, data, "learned")


def test_learned_mode_actions_in_action_space(setup):
    net, policy, data, man = setup
    rep = evaluate(policy, net, data, "learned", manifest=man)
    for tr in rep.traces:
        assert set(tr.actions.tolist()) <= set(ACTIONS.actions)
        assert np.all((tr.correct == -1) == (tr.actions == 0))
    rep.check()
    assert sum(rep.usage.values()) == pytest.approx(1.0)


def test_evaluation_is_deterministic(setup):
    net, policy, data, man = setup
    a = evaluate(policy, net, data, "learned", manifest=man)
    b = evaluate(policy, net, data, "learned", manifest=man)
    assert a.row() == b.row()
    assert a.video_probs.tobytes() == b.video_probs.tobytes()


def test_ensemble_trace_marker(setup):
    net, policy, data, _ = setup
    rep = evaluate(policy, net, data, "ensemble")
    assert all(np.all(tr.actions == ENSEMBLE_ACTION) for tr in rep.traces)


# -- traces and histograms ------------------------------------------------


def test_trace_dump_row_count_and_gflops(setup, tmp_path):
    net, policy, data, man = setup
    rep = evaluate(policy, net, data, "random", manifest=man, seed=4)
    n = dump_traces(rep, tmp_path / "t.csv")
    assert n == len(data) * data.frames.shape[1]
    rows = read_traces(tmp_path / "t.csv")
    assert len(rows) == n
    table = cost_table_for(net, policy, ACTIONS)
    assert gflops_from_traces(rows, table.flops_per_frame, table.policy_overhead_per_frame) == pytest.approx(
        rep.gflops_per_video, rel=1e-12)
    for r in rows:
        assert int(r["action"]) in ACTIONS.actions
        assert r["informative"] in ("0", "1")
        assert r["correct"] in ("0", "1", "")


def test_histogram_matches_usage(setup):
    net, policy, data, _ = setup
    rep = evaluate(policy, net, data, "random", seed=2)
    h = policy_histogram(rep)
    assert h.actions == ACTIONS.actions
    assert sum(h.fractions) == pytest.approx(1.0)
    for a, f in zip(h.actions, h.fractions):
        assert f == pytest.approx(rep.usage[a])
    assert "skip" in h.text() and h.csv().startswith("action,fraction\n")


def test_informative_alignment_needs_masks(setup):
    net, policy, data, man = setup
    with pytest.raises(EvalError):
        informative_alignment(evaluate(policy, net, data, "uniform-32"))
    p_inf, p_un = informative_alignment(evaluate(policy, net, data, "uniform-32", manifest=man))
    assert p_inf == p_un == 1.0


def test_reports_csv(setup):
    net, policy, data, _ = setup
    reps = [evaluate(policy, net, data, m) for m in MODES if m != "learned"]
    lines = reports_csv(reps).strip().split("\n")
    assert len(lines) == len(reps) + 1
    assert lines[0].startswith("mode,top1,map,gflops_per_video")


def test_cross_policy_geometry_mismatch(setup):
    net, _, data, _ = setup
    wrong = PolicyNet(PolicyConfig(input_size=16, num_actions=4))
    with pytest.raises(EvalError, match="resolution"):
        cross_policy_eval(wrong, net, data)
    three = PolicyNet(PolicyConfig(input_size=data.policy_size, num_actions=3))
    with pytest.raises(EvalError):
        cross_policy_eval(three, net, data)
