"""Randomised invariants over action sequences, usage vectors and rankings."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score

from arnet import costs
from arnet.evaluation import average_precision
from arnet.router import run_video
from arnet.training import loss_uni

seqs = st.lists(st.integers(0, 6), min_size=16, max_size=16)


@settings(max_examples=60, deadline=None)
@given(seq=seqs)
def test_router_covers_every_frame_once(model, seq):
    frames = np.zeros((16, 32, 32))
    _, trace = run_video(frames, model, actions=seq)
    assert [r.t for r in trace.frames] == list(range(16))
    for r in trace.frames:
        if not r.observed:
            owner = trace.frames[r.skipped_by]
            assert owner.observed and r.t - owner.t < owner.action.count
    usage = costs.hard_usage([trace], 7)
    assert abs(usage.sum() - 1.0) < 1e-12


@settings(max_examples=60, deadline=None)
@given(seq=seqs)
def test_cost_is_additive_and_bounded(model, seq):
    table = costs.paper_table()
    _, trace = run_video(np.zeros((16, 32, 32)), model, table=table, actions=seq)
    report = costs.video_cost(trace, table)
    assert report.gflops_per_video == sum(costs.frame_cost(r, table) for r in trace.frames)
    assert 0.0 <= report.gflops_per_video <= 16 * table.level_cost(0) + 1e-12


@given(st.lists(st.floats(0, 1), min_size=7, max_size=7).filter(lambda v: sum(v) > 1e-3))
def test_uni_is_nonnegative_and_bounded(v):
    freq = np.array(v) / sum(v)
    u = loss_uni(freq).item()
    assert -1e-15 <= u <= 42 / 49 + 1e-12


@settings(max_examples=100)
@given(
    st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=2, max_size=30).filter(
        lambda rows: any(p for _, p in rows)
    )
)
def test_average_precision_agrees_with_sklearn(rows):
    scores = np.array([s for s, _ in rows], dtype=float)
    positives = np.array([p for _, p in rows])
    assert abs(average_precision(scores, positives) - average_precision_score(positives, scores)) < 1e-12
