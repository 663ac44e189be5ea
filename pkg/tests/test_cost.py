import json

import pytest

from core.config import NetworkConfig
from core.models import BlockVariant
from modules.nn.cost import count_flops, count_params, format_table, report_to_json, stage_output_shapes


@pytest.mark.parametrize("backbone, params, gflops", [("r50", 24.3e6, 33.0), ("r101", 42.9e6, 63.0)])
def test_backbone_totals_match_published_counts(backbone, params, gflops):
    report = count_flops(NetworkConfig.from_preset(f"vsn-{backbone}"))
    assert report.total_params == pytest.approx(params, rel=0.10)
    assert report.gflops == pytest.approx(gflops, rel=0.10)


def test_r50_exact_totals():
    report = count_flops(NetworkConfig.from_preset("vsn-r50"))
    assert report.total_params == 23_864_558
    assert 32.6 < report.gflops < 32.9


def test_shuffle_and_shift_add_no_parameters_or_madds():
    totals = set()
    for family in ("vsn", "tsm", "tsn", "compact", "headtail"):
        report = count_flops(NetworkConfig.from_preset(f"{family}-r50"))
        totals.add((report.total_params, report.total_madds))
    assert len(totals) == 1


def test_reordering_block_variants_keeps_totals():
    base = NetworkConfig.from_preset("vsn-r50")
    overrides = []
    for s, stage in enumerate(base.stages):
        overrides.append({"stage": s, "index": 0, "variant": "compact"})
        overrides.append({"stage": s, "index": stage.blocks - 1, "variant": "standard_with_shift"})
    moved = NetworkConfig.from_preset("vsn-r50", overrides=overrides)
    assert [row[0] for row in moved.variants()] == [BlockVariant.COMPACT] * 4
    a, b = count_flops(base), count_flops(moved)
    assert (a.total_params, a.total_madds) == (b.total_params, b.total_madds)


def test_shuffle_entries_are_free():
    report = count_flops(NetworkConfig.from_preset("vsn-r50"))
    shuffles = report.by_kind("shuffle")
    assert len(shuffles) == 8
    assert len(report.by_kind("shift")) == 12
    assert all(e.params == 0 and e.madds == 0 and e.elementwise == 0 for e in shuffles)


def test_madds_scale_linearly_with_frames():
    cfg = NetworkConfig.from_preset("tsn-r50")
    eight = count_flops(cfg, (8, 3, 224, 224))
    sixteen = count_flops(cfg, (16, 3, 224, 224))
    head = eight.by_kind("linear")[0].madds
    assert sixteen.total_madds - head == 2 * (eight.total_madds - head)
    assert sixteen.total_params == eight.total_params


def test_r50_stage_shapes():
    shapes = stage_output_shapes(count_flops(NetworkConfig.from_preset("vsn-r50")))
    assert shapes == {
        "res2": (256, 8, 56, 56),
        "res3": (512, 8, 28, 28),
        "res4": (1024, 8, 14, 14),
        "res5": (2048, 8, 7, 7),
    }


def test_counting_is_deterministic():
    cfg = NetworkConfig.from_preset("headtail-r101")
    assert report_to_json(count_flops(cfg), "a") == report_to_json(count_flops(cfg), "a")
    assert count_params(cfg).total_params == count_flops(cfg).total_params


def test_ops_are_twice_madds():
    report = count_flops(NetworkConfig.from_preset("vsn-toy"))
    assert report.total_ops == 2 * report.total_madds


def test_table_and_json_carry_totals():
    report = count_flops(NetworkConfig.from_preset("vsn-r50"))
    table = format_table(report, "vsn-r50")
    assert table.splitlines()[-1].startswith("total  params 23.86M (23,864,558)")
    assert "res5.2.relu_out" in table
    payload = json.loads(report_to_json(report, "vsn-r50"))
    assert payload["total_params"] == report.total_params
    assert payload["input_shape"] == [1, 8, 3, 224, 224]
    assert sum(layer["madds"] for layer in payload["layers"]) == payload["total_madds"]
