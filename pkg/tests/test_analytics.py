"""Yield decomposition, lambda sweeps, reports, and log round trips."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from veria.analytics import (
    SCHEMA_ID,
    CandidateRecord,
    EmptyLog,
    MissingRatios,
    YieldCounts,
    YieldReport,
    geo_pass_at,
    lambda_sweep,
    merge_reports,
    read_records,
    report,
    round2,
    sweep_svg,
    write_records,
    yield_decomposition,
)

from conftest import make_record, table_fixture

# (label, counts per 10k, expected percentages): reference acceptance rates
# per dataset and verifier/depth configuration - sem, geo, joint.
REFERENCE_RATES = [
    ("nuscenes-iv3-ud2", (8129, 8173, 7142), (81.29, 81.73, 71.42)),
    ("nuscenes-iv3-moge", (8129, 8360, 7205), (81.29, 83.60, 72.05)),
    ("nuscenes-qwen-ud2", (9171, 8173, 7599), (91.71, 81.73, 75.99)),
    ("nuscenes-qwen-moge", (9171, 8360, 7676), (91.71, 83.60, 76.76)),
    ("lyft-iv3-ud2", (8933, 7952, 7117), (89.33, 79.52, 71.17)),
    ("lyft-iv3-moge", (8933, 8927, 7987), (89.33, 89.27, 79.87)),
    ("lyft-qwen-ud2", (8624, 7952, 7061), (86.24, 79.52, 70.61)),
    ("lyft-qwen-moge", (8624, 8927, 7716), (86.24, 89.27, 77.16)),
]


class TestYieldDecomposition:
    @pytest.mark.parametrize("label,counts,expected", REFERENCE_RATES)
    def test_reference_rate_fixtures_exact(self, label, counts, expected):
        records = table_fixture(10_000, *counts)
        result = yield_decomposition(records)
        assert (result.p_sem, result.p_geo, result.p_joint) == expected

    def test_all_pass(self):
        records = [make_record(f"r{i}", True, True) for i in range(50)]
        result = yield_decomposition(records)
        assert (result.p_sem, result.p_geo, result.p_joint) == (100.0, 100.0, 100.0)

    def test_empty_log_rejected(self):
        with pytest.raises(EmptyLog):
            yield_decomposition([])

    def test_provider_errors_count_in_n_only(self):
        records = [make_record(f"r{i}", True, True) for i in range(8)]
        records += [make_record(f"e{i}", False, False, provider_error=True) for i in range(2)]
        result = yield_decomposition(records)
        assert result.n == 10
        assert result.counts.provider_errors == 2
        assert result.p_sem == 80.0
        assert result.fail_reasons["provider_error"] == 2

    def test_frechet_bounds_on_exact_counts(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 500))
            records = [
                make_record(f"r{i}", bool(rng.uniform() < 0.7), bool(rng.uniform() < 0.6))
                for i in range(n)
            ]
            result = yield_decomposition(records)
            c = result.counts
            assert max(0, c.sem + c.geo - c.n) <= c.joint <= min(c.sem, c.geo)

    def test_invalid_joint_count_rejected(self):
        with pytest.raises(ValueError):
            YieldReport(counts=YieldCounts(n=10, sem=5, geo=5, joint=6))

    def test_per_category_breakdown(self):
        records = table_fixture(100, 80, 70, 60, category="bicycle")
        records += table_fixture(50, 40, 30, 25, category="motorcycle")
        result = yield_decomposition(records)
        assert result.per_category["bicycle"].n == 100
        assert result.per_category["motorcycle"].joint == 25

    def test_merge_matches_joint_decomposition(self):
        a = table_fixture(100, 90, 80, 75)
        b = table_fixture(60, 30, 40, 20, category="motorcycle")
        merged = merge_reports(yield_decomposition(a), yield_decomposition(b))
        direct = yield_decomposition(a + b)
        assert merged.counts == direct.counts
        assert merged.per_category == direct.per_category
        assert merged.fail_reasons == direct.fail_reasons

    def test_merge_associative(self):
        parts = [table_fixture(40, 30, 20, 15), table_fixture(30, 10, 25, 5), table_fixture(20, 20, 20, 20)]
        reports = [yield_decomposition(p) for p in parts]
        left = merge_reports(merge_reports(reports[0], reports[1]), reports[2])
        right = merge_reports(reports[0], merge_reports(reports[1], reports[2]))
        assert left.counts == right.counts

    def test_round2_half_even(self):
        assert round2(1, 3) == 33.33
        assert round2(125, 1000) == 12.5
        # Exact .005 ties round half-to-even at 2 decimals.
        assert round2(25, 2000) == 1.25 - 0.0  # 1.25 exactly representable
        assert round2(12345, 1000000) == 1.23  # 1.2345 -> 1.23
        assert round2(15, 2000) == 0.75
        assert round2(5, 4000) == 0.12  # 0.125 -> 0.12 (half to even)
        assert round2(15, 4000) == 0.38  # 0.375 -> 0.38 (half to even)


class TestLambdaSweep:
    def test_zero_tolerance_only_exact_sizes(self):
        records = [
            make_record("a", True, True, ratios=(1.0, 1.0, 1.0)),
            make_record("b", True, True, ratios=(1.0, 1.0000001, 1.0)),
        ]
        sweep = lambda_sweep(records, [1e-9])
        assert sweep[0][1] == 50.0

    def test_lambda_one_equals_count_pass_rate_with_capped_ratios(self):
        # All ratios <= 2, so lambda=1 admits exactly the point-count passes.
        records = [
            make_record("a", True, True, ratios=(1.9, 0.5, 1.2), point_count=10),
            make_record("b", True, False, ratios=(2.0, 1.0, 1.0), point_count=10),
            make_record("c", True, False, ratios=(1.5, 1.5, 1.5), point_count=3),
        ]
        sweep = lambda_sweep(records, [1.0], p_n=5)
        assert sweep[0][1] == round2(2, 3)

    def test_ratios_above_two_fail_even_at_lambda_one(self):
        records = [make_record("a", True, True, ratios=(2.4, 1.0, 1.0))]
        assert lambda_sweep(records, [1.0])[0][1] == 0.0

    def test_monotone_and_nested_pass_sets(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            records = [
                make_record(
                    f"r{i}",
                    bool(rng.uniform() < 0.8),
                    True,
                    ratios=tuple(rng.uniform(0.2, 2.2, 3)),
                    point_count=int(rng.integers(1, 30)),
                )
                for i in range(100)
            ]
            grid = sorted(rng.uniform(0.05, 1.0, 5))
            sweep = lambda_sweep(records, grid)
            values = [v for _, v in sweep]
            assert values == sorted(values)
            # Nested pass sets.
            sets = [
                {r.candidate_id for r in records if r.sem_passed and geo_pass_at(r, lam, 5)}
                for lam in grid
            ]
            for smaller, larger in zip(sets, sets[1:]):
                assert smaller <= larger

    def test_missing_ratios_raises(self):
        record = make_record("a", True, True)
        stripped = CandidateRecord.from_json(
            {**record.to_json(), "geometric": {**record.to_json()["geometric"], "size_ratios": None}}
        )
        with pytest.raises(MissingRatios):
            lambda_sweep([stripped], [0.5])

    def test_point_count_failures_fail_at_every_lambda(self):
        record = make_record("a", True, False, ratios=(1.0, 1.0, 1.0), point_count=2)
        for lam in (0.1, 0.5, 1.0):
            assert not geo_pass_at(record, lam, 5)

    @given(
        ratios=st.tuples(
            st.floats(0.01, 3.0), st.floats(0.01, 3.0), st.floats(0.01, 3.0)
        ),
        lam_pair=st.tuples(st.floats(0.01, 1.0), st.floats(0.01, 1.0)),
        count=st.integers(1, 30),
    )
    def test_geo_pass_monotone_in_lambda_property(self, ratios, lam_pair, count):
        record = make_record("a", True, True, ratios=ratios, point_count=count)
        lo, hi = sorted(lam_pair)
        if geo_pass_at(record, lo, 5):
            assert geo_pass_at(record, hi, 5)

    def test_output_sorted_by_lambda(self):
        records = [make_record("a", True, True)]
        sweep = lambda_sweep(records, [0.9, 0.1, 0.5])
        assert [lam for lam, _ in sweep] == [0.1, 0.5, 0.9]


class TestReport:
    def test_markdown_contains_table_value(self):
        records = table_fixture(10_000, 9171, 8173, 7599)
        text = report(records, fmt="markdown")
        assert "75.99" in text
        assert "91.71" in text

    def test_empty_rejected(self):
        with pytest.raises(EmptyLog):
            report([], fmt="markdown")

    def test_deterministic_bytes(self):
        records = table_fixture(500, 400, 300, 250)
        assert report(records, fmt="markdown") == report(records, fmt="markdown")
        assert report(records, fmt="csv") == report(records, fmt="csv")

    def test_csv_shape(self):
        records = table_fixture(100, 80, 70, 60)
        lines = report(records, fmt="csv").strip().splitlines()
        assert lines[0] == "section,key,value"
        assert any(line.startswith("yield,p_joint,60.00") for line in lines)
        assert any(line.startswith("timing_mean_s,verify,") for line in lines)

    def test_conditional_geo_marking(self):
        # Sem-failed records without a geometric verdict mark P(S_geo) conditional.
        records = [make_record(f"p{i}", True, True) for i in range(6)]
        skipped = make_record("skip", False, False)
        skipped = CandidateRecord.from_json({**skipped.to_json(), "geometric": None, "point_count": 0})
        records.append(skipped)
        decomposition = yield_decomposition(records)
        assert decomposition.geo_is_conditional
        assert decomposition.p_geo_conditional == 100.0
        text = report(records, fmt="markdown")
        assert "conditional" in text
        csv_text = report(records, fmt="csv")
        assert "p_geo_given_sem" in csv_text

    def test_unconditional_geo_not_marked(self):
        records = table_fixture(50, 40, 30, 25)
        decomposition = yield_decomposition(records)
        assert not decomposition.geo_is_conditional
        assert "conditional" not in report(records, fmt="markdown")

    def test_timing_means_shape(self):
        records = [
            make_record("a", True, True, timings={"inpaint": 1.0, "verify": 2.0}),
            make_record("b", True, True, timings={"inpaint": 2.0, "verify": 4.0}),
        ]
        text = report(records, fmt="csv")
        assert "timing_mean_s,inpaint,1.5000" in text
        assert "timing_mean_s,verify,3.0000" in text

    def test_svg_plot_well_formed(self):
        sweep = [(0.1, 10.0), (0.5, 50.0), (1.0, 80.0)]
        svg = sweep_svg(sweep)
        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")
        assert svg.count("<circle") == 3

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            report(table_fixture(10, 5, 5, 5), fmt="xml")


class TestRecordSerialization:
    def test_round_trip_through_jsonl(self, tmp_path):
        records = [
            make_record("a", True, True),
            make_record("b", True, False),
            make_record("c", False, True),
            make_record("d", False, False, provider_error=True),
        ]
        path = tmp_path / "log.jsonl"
        write_records(path, records)
        loaded = list(read_records(path))
        assert loaded == records

    def test_header_schema_checked(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"schema": "other.v9"}\n', "utf-8")
        with pytest.raises(ValueError):
            list(read_records(path))

    def test_header_written_once(self, tmp_path):
        path = tmp_path / "log.jsonl"
        write_records(path, [make_record("a", True, True)])
        lines = path.read_text().splitlines()
        assert json.loads(lines[0]) == {"schema": SCHEMA_ID}
        assert sum(1 for line in lines if "schema" in line) == 1

    def test_status_invariant_enforced(self):
        with pytest.raises(ValueError):
            CandidateRecord(
                candidate_id="x",
                category="bicycle",
                subclass="",
                box7=(0.0,) * 7,
                semantic=None,
                decision=None,
                geometric=None,
                point_count=0,
                timings={},
                status="pass",
            )
