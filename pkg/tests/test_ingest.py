"""Ingestion: parsing, monthly differencing, assignment, aggregation,
conservation, moving average, and the miniature golden fixture."""

import datetime
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from epigrid import ingest, model
from epigrid.errors import DataError
from oracles import moving_average_oracle


def _fixture(name):
    return resources.files("epigrid") / "fixtures" / name


# ---------------------------------------------------------------------------
# readers

def test_read_nyt_reports_exclusions():
    records, rep = ingest.read_nyt(_fixture("mini_cases.csv"))
    assert rep.n_rows == 13
    assert rep.n_missing_fips == 1          # the Unknown-county row
    assert rep.n_skipped == 1               # the unparseable date
    assert len(records) == 11
    assert records[0] == (datetime.date(2020, 1, 5), "10005", 3)


def test_read_nyt_rejects_wrong_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("date,place,count\n")
    with pytest.raises(DataError, match="header"):
        ingest.read_nyt(p)


def test_read_centroids_validation(tmp_path):
    good = ingest.read_centroids(_fixture("mini_centroids.csv"))
    assert good["10001"] == (0.2, 0.5, 100.0)
    p = tmp_path / "c.csv"
    p.write_text("fips,lon,lat,population\n1,0,0,0\n")
    with pytest.raises(DataError, match="positive"):
        ingest.read_centroids(p)
    p.write_text("fips,lon,lat,population\n1,0,0,5\n1,1,1,5\n")
    with pytest.raises(DataError, match="duplicate"):
        ingest.read_centroids(p)
    p.write_text("wrong\n")
    with pytest.raises(DataError, match="header"):
        ingest.read_centroids(p)


def test_read_cells_validation(tmp_path):
    cells = ingest.read_cells(_fixture("mini_cells.csv"))
    assert cells[0] == (1, 0.0, 0.0, 1.0, 1.0)
    p = tmp_path / "cells.csv"
    p.write_text("cell_id,xmin,ymin,xmax,ymax\n1,0,0,1,1\n3,1,0,2,1\n")
    with pytest.raises(DataError, match="without gaps"):
        ingest.read_cells(p)
    p.write_text("cell_id,xmin,ymin,xmax,ymax\n1,1,0,1,1\n")
    with pytest.raises(DataError, match="empty extent"):
        ingest.read_cells(p)


# ---------------------------------------------------------------------------
# monthly differencing

def _months(*pairs):
    return list(pairs)


def test_monthly_increments_basic():
    records = [
        (datetime.date(2020, 1, 31), "A", 10),
        (datetime.date(2020, 2, 28), "A", 25),
    ]
    inc, _ = ingest.monthly_new_cases(records, _months((2020, 1), (2020, 2)))
    np.testing.assert_array_equal(inc["A"], [10, 15])


def test_single_month_equals_last_cumulative():
    records = [(datetime.date(2020, 3, 10), "B", 4),
               (datetime.date(2020, 3, 20), "B", 9)]
    inc, _ = ingest.monthly_new_cases(records, _months((2020, 3),))
    np.testing.assert_array_equal(inc["B"], [9])


def test_silent_months_carry_forward():
    records = [(datetime.date(2020, 1, 15), "C", 8)]
    inc, _ = ingest.monthly_new_cases(
        records, ingest.month_range((2020, 1), (2020, 4)))
    np.testing.assert_array_equal(inc["C"], [8, 0, 0, 0])


def test_baseline_before_range_is_subtracted():
    records = [
        (datetime.date(2019, 12, 20), "D", 6),
        (datetime.date(2020, 1, 10), "D", 10),
    ]
    inc, _ = ingest.monthly_new_cases(records, _months((2020, 1),))
    np.testing.assert_array_equal(inc["D"], [4])


def test_negative_increment_clamped_and_reported(caplog):
    records = [
        (datetime.date(2020, 1, 31), "E", 30),
        (datetime.date(2020, 2, 28), "E", 28),
    ]
    with caplog.at_level("WARNING", logger="epigrid.ingest"):
        inc, rep = ingest.monthly_new_cases(records, _months((2020, 1), (2020, 2)))
    np.testing.assert_array_equal(inc["E"], [30, 0])
    assert rep.n_clamped == 1 and rep.clamped_total == 2
    assert "clamped" in caplog.text


def test_month_range():
    assert ingest.month_range((2020, 11), (2021, 2)) == [
        (2020, 11), (2020, 12), (2021, 1), (2021, 2)]
    with pytest.raises(ValueError):
        ingest.month_range((2021, 2), (2020, 11))


# ---------------------------------------------------------------------------
# assignment and aggregation

def test_assignment_half_open_boundaries():
    cells = [(1, 0.0, 0.0, 1.0, 1.0), (2, 1.0, 0.0, 2.0, 1.0)]
    cents = {
        "in1": (0.5, 0.5, 10.0),
        "edge": (1.0, 0.0, 10.0),     # shared boundary goes to the right cell
        "top": (0.5, 1.0, 10.0),      # ymax excluded
        "out": (2.5, 0.5, 10.0),
    }
    a = ingest.assign_to_grid(cents, cells)
    assert a == {"in1": 1, "edge": 2, "top": None, "out": None}


def test_aggregate_sums_members_and_masks_empty_cells():
    cents = {"A": (0.1, 0.1, 100.0), "B": (0.2, 0.2, 50.0)}
    assignment = {"A": 1, "B": 1}
    inc = {"A": np.array([3, 0]), "B": np.array([4, 2])}
    obs, pop, rep = ingest.aggregate(inc, assignment, cents, n_cells=3)
    np.testing.assert_array_equal(obs.counts, [[7, 0, 0], [2, 0, 0]])
    np.testing.assert_array_equal(obs.mask, [[True, False, False]] * 2)
    np.testing.assert_array_equal(pop, [150.0, 1.0, 1.0])
    assert rep.total_assigned_increments == rep.total_aggregated == 9


def test_aggregation_order_independent():
    rng = np.random.default_rng(40)
    cells = [(1, 0.0, 0.0, 1.0, 1.0), (2, 1.0, 0.0, 2.0, 1.0)]
    cents = {f"f{i}": (2.0 * rng.random(), rng.random(), 1.0 + i)
             for i in range(12)}
    inc = {f: rng.integers(0, 9, size=4) for f in cents}
    a = ingest.assign_to_grid(cents, cells)
    o1, p1, _ = ingest.aggregate(inc, a, cents, 2)
    items = list(inc.items())[::-1]
    o2, p2, _ = ingest.aggregate(dict(items), a, dict(reversed(cents.items())), 2)
    np.testing.assert_array_equal(o1.counts, o2.counts)
    np.testing.assert_array_equal(p1, p2)


# ---------------------------------------------------------------------------
# moving average

def test_moving_average_constant_and_impulse():
    np.testing.assert_array_equal(ingest.moving_average(np.full(20, 3.0)),
                                  np.full(20, 3.0))
    x = np.zeros(15)
    x[7] = 7.0
    out = ingest.moving_average(x, 7)
    np.testing.assert_allclose(out[4:11], 1.0)
    assert out[3] == 0.0 and out[11] == 0.0


def test_moving_average_edges_truncate():
    x = np.arange(5.0)
    out = ingest.moving_average(x, 3)
    np.testing.assert_allclose(out, [0.5, 1.0, 2.0, 3.0, 3.5])


@settings(max_examples=60, deadline=None)
@given(hst.lists(hst.floats(-50, 50), min_size=1, max_size=40),
       hst.integers(min_value=1, max_value=11))
def test_moving_average_matches_oracle(vals, window):
    x = np.array(vals)
    np.testing.assert_allclose(ingest.moving_average(x, window),
                               moving_average_oracle(x, window), atol=1e-12)


# ---------------------------------------------------------------------------
# full pipeline on the miniature fixture

def test_mini_fixture_golden_bytes(tmp_path):
    obs, pop, months, rep = ingest.ingest(
        _fixture("mini_cases.csv"), _fixture("mini_centroids.csv"),
        _fixture("mini_cells.csv"))
    assert months == [(2020, 1), (2020, 2), (2020, 3)]

    from epigrid.grid import write_population
    cpath = tmp_path / "counts.csv"
    ppath = tmp_path / "pop.csv"
    model.write_counts(obs, cpath)
    write_population(pop, ppath)

    import pathlib
    golden = pathlib.Path(__file__).parent / "golden"
    assert cpath.read_bytes() == (golden / "mini_counts.csv").read_bytes()
    assert ppath.read_bytes() == (golden / "mini_population.csv").read_bytes()

    # report: one unknown-fips row, one unparseable row, one clamp, one
    # unassigned county carrying 100 cases
    assert rep.n_missing_fips == 1
    assert rep.n_skipped == 1
    assert rep.n_clamped == 1 and rep.clamped_total == 1
    assert rep.unassigned == {"10009": 100}
    assert rep.total_assigned_increments == rep.total_aggregated == 61
    assert "aggregated counts:    61" in rep.summary()


def test_conservation_on_generated_records(tmp_path):
    """Totals must balance exactly on a large random cumulative file."""
    rng = np.random.default_rng(41)
    months = ingest.month_range((2020, 4), (2021, 3))
    lines = ["date,county,state,fips,cases,deaths"]
    n_counties = 60
    for i in range(n_counties):
        fips = f"{20000 + i}"
        level = 0
        start = rng.integers(0, 6)
        for j, (y, m) in enumerate(months):
            if j < start:
                continue
            for _ in range(rng.integers(1, 4)):
                day = int(rng.integers(1, 28))
                # occasional corrections walk the cumulative backwards
                level = max(0, level + int(rng.integers(-3, 40)))
                lines.append(f"{y:04d}-{m:02d}-{day:02d},C{i},ST,{fips},{level},0")
    cases = tmp_path / "cases.csv"
    cases.write_text("\n".join(lines) + "\n")

    cents = ["fips,lon,lat,population"]
    for i in range(n_counties):
        # a few centroids fall outside the 2x2 cell fixture below
        cents.append(f"{20000 + i},{rng.uniform(0, 2.6):.4f},"
                     f"{rng.uniform(0, 1):.4f},{rng.integers(1, 9) * 100}")
    cpath = tmp_path / "centroids.csv"
    cpath.write_text("\n".join(cents) + "\n")

    cells = tmp_path / "cells.csv"
    cells.write_text("cell_id,xmin,ymin,xmax,ymax\n"
                     "1,0,0,1,0.5\n2,1,0,2,0.5\n3,0,0.5,1,1\n4,1,0.5,2,1\n")

    obs, pop, got_months, rep = ingest.ingest(cases, cpath, cells)
    assert got_months == months
    assert int(obs.counts.sum()) == rep.total_aggregated
    assert rep.total_aggregated == rep.total_assigned_increments
    # every case lands in a cell, an exclusion bucket, or a clamp report
    total_in = rep.total_assigned_increments + sum(rep.unassigned.values())
    per_county_final = {}
    for date, fips, cases_v in ingest.read_nyt(cases)[0]:
        cur = per_county_final.get(fips)
        # same-date duplicates resolve to the larger cumulative, matching
        # the pipeline's (date, value) sort
        if cur is None or (date, cases_v) >= cur:
            per_county_final[fips] = (date, cases_v)
    # increment totals equal final cumulative + clamped backwards steps
    want = sum(v for _, v in per_county_final.values()) + rep.clamped_total
    assert total_in == want


def test_ingest_explicit_month_window():
    obs, pop, months, rep = ingest.ingest(
        _fixture("mini_cases.csv"), _fixture("mini_centroids.csv"),
        _fixture("mini_cells.csv"), start=(2020, 2), end=(2020, 3))
    assert months == [(2020, 2), (2020, 3)]
    # January cumulatives become the baseline instead of month-1 counts
    np.testing.assert_array_equal(obs.counts, [[22, 0], [15, 11]])
