import csv
import io
import xml.etree.ElementTree as ET

import pytest

from schema_util import validate
from staticrd.cache import CacheConfig
from staticrd.oracle import ReuseHistogram
from staticrd.report import BinRow, ComparisonReport

H = ReuseHistogram({-1: 3, 0: 1, 1: 1, 2: 2, 900: 1200})


def test_identical_profiles_have_no_error():
    rep = ComparisonReport.build(H, H)
    assert all(r.abs_error == 0 and r.rel_error == 0 for r in rep.rows)
    assert rep.matched_mass == 1.0 and rep.max_hit_rate_gap == 0.0
    assert rep.total_a == rep.total_b == H.total and rep.cold_a == 3
    assert not rep.warnings


def test_relative_error_example():
    rep = ComparisonReport.build(ReuseHistogram({0: 1}), ReuseHistogram({0: 2}))
    (row,) = rep.rows
    assert row.abs_error == 1 and row.rel_error == pytest.approx(0.5)
    assert BinRow(4, 0, 0).rel_error == 0.0
    assert any("totals differ" in w for w in rep.warnings)


def test_outputs():
    other = ReuseHistogram({-1: 3, 0: 2, 2: 1, 900: 1000, 901: 200})
    rep = ComparisonReport.build(H, other, [CacheConfig.parse("32K")], label_a="static", label_b="oracle")
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["distance", "freq_static", "freq_oracle", "abs_error", "rel_error"]
    assert len(rows) == 1 + len(rep.rows)
    validate(rep.to_json(), "comparison_report.schema.json")
    assert "hit rate   32K" in rep.summary()
    svg = ET.fromstring(rep.to_svg(min_freq=800))
    bars = [e for e in svg.iter("{http://www.w3.org/2000/svg}rect") if e.get("fill") in ("#3b6ea5", "#e07b39")]
    assert len(bars) == 2 * 1 + 2  # bin 900 for both sides, plus the legend swatches
    assert "no bin above threshold" in rep.to_svg(min_freq=10 ** 6)


def test_empty_histograms():
    rep = ComparisonReport.build(ReuseHistogram(), ReuseHistogram())
    assert rep.matched_mass == 1.0
    assert all(v == (None, None) for v in rep.hit_rates.values())
