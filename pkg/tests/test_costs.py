import numpy as np
import pytest

from arnet import costs
from arnet.actions import AllResolutions, ChooseResolution, Skip
from arnet.backbones import default_specs
from arnet.policy import PolicySpec
from arnet.router import FrameRecord, PolicyTrace

PAPER = {0: 4.1103, 1: 2.2490, 2: 0.4683, 3: 0.0529}


def _trace(actions, table):
    """Trace for a fixed action list (skips cover later frames)."""
    frames, t = [], 0
    for index, action in actions:
        frames.append(FrameRecord(t, True, action, index, cost=costs.flops_of_action(action, table)))
        n = action.count if isinstance(action, Skip) else 1
        for j in range(1, n):
            frames.append(FrameRecord(t + j, False, skipped_by=t))
        t += n
    return PolicyTrace(frames, None, 7)


def test_paper_table_values():
    table = costs.paper_table()
    assert table.provenance == "paper"
    for level, value in PAPER.items():
        assert table.level_cost(level) == value


def test_efficientnet_family_levels():
    table = costs.paper_table("efficientnet")
    assert table.level_cost(0) == 1.8 and table.level_cost(3) == 0.0529


def test_uniform_video_cost():
    table = costs.paper_table()
    report = costs.video_cost(_trace([(0, ChooseResolution(0))] * 16, table), table)
    assert round(report.gflops_per_frame, 2) == 4.11
    assert report.gflops_per_video == pytest.approx(65.7648, abs=1e-12)


def test_multiscale_video_cost():
    table = costs.paper_table()
    report = costs.video_cost(_trace([(None, AllResolutions())] * 16, table), table)
    assert report.gflops_per_video == pytest.approx(16 * sum(PAPER.values()), abs=1e-12)


def test_skips_cost_nothing():
    table = costs.paper_table()
    trace = _trace([(6, Skip(4)), (0, ChooseResolution(0)), (5, Skip(2)), (3, ChooseResolution(3))], table)
    report = costs.video_cost(trace, table)
    assert report.gflops_per_video == pytest.approx(4.1103 + 0.0529)
    assert report.num_frames == 8


def test_hard_usage_credits_covered_frames():
    table = costs.paper_table()
    trace = _trace([(6, Skip(4)), (0, ChooseResolution(0))], table)
    usage = costs.hard_usage([trace], 7)
    np.testing.assert_allclose(usage, [0.2, 0, 0, 0, 0, 0, 0.8])


def test_full_accounting_adds_policy_steps():
    table = costs.paper_table()
    rec = FrameRecord(0, True, ChooseResolution(0), 0, cost=4.1103, policy_evaluated=True)
    assert costs.frame_cost(rec, table, "full") == pytest.approx(4.1103 + table.policy_gflops)
    low = FrameRecord(0, True, ChooseResolution(3), 3, cost=0.0529, policy_evaluated=True)
    # the lowest level reuses the policy features, so only the head is extra
    assert costs.frame_cost(low, table, "full") == pytest.approx(table.policy_gflops + table.head_gflops)
    with pytest.raises(ValueError):
        costs.frame_cost(rec, table, "bogus")


def test_layer_flops_conventions():
    assert costs.layer_flops(costs.conv(3, 2, 4, 5, 5)) == 2 * 3 * 3 * 2 * 4 * 25
    assert costs.layer_flops(costs.linear(10, 3)) == 2 * 30
    assert costs.layer_flops(costs.pointwise(17)) == 17


def test_analytic_table_is_monotone_in_resolution():
    table = costs.analytic_table(PolicySpec(7, 6), default_specs(6))
    assert table.provenance == "analytic"
    levels = [table.level_cost(l) for l in range(table.num_levels)]
    assert all(a > b for a, b in zip(levels, levels[1:]))


def test_table_csv_round_trip():
    table = costs.paper_table()
    again = costs.parse_table_csv(costs.write_table_csv(table), table.levels, "paper")
    assert dict(again.entries) == dict(table.entries)


def test_table_rejects_bad_input():
    with pytest.raises(ValueError):
        costs.parse_table_csv("network,resolution,gflops\nA,1,1.0\n", [("A", 1)], "paper")
    with pytest.raises(ValueError):
        costs.CostTable({("A", 1): 0.0}, (("A", 1),), "paper")
    with pytest.raises(ValueError):
        costs.CostTable({("A", 1): 1.0}, (("A", 1),), "measured")
    with pytest.raises(KeyError):
        costs.CostTable({("A", 1): 1.0}, (("B", 1),), "paper")
    with pytest.raises(KeyError):
        costs.paper_table().level_cost(4)


def test_scaled_table():
    table = costs.paper_table().scaled(2.0)
    assert table.level_cost(0) == pytest.approx(8.2206)
