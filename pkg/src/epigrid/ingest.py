"""County-level cumulative case records -> monthly per-cell new-case counts.

Pipeline: parse the cumulative case CSV (`date,county,state,fips,cases,
deaths`, ISO dates), difference per-county cumulatives into monthly
increments (last value in month minus last value in the prior month,
carrying the last known cumulative forward across silent months), assign
each county to the grid cell containing its centroid, and sum member-county
increments per cell and month.  Cumulative corrections that would produce a
negative monthly increment are clamped to 0 and logged; rows without a
FIPS code and counties outside every cell are excluded and reported.

Cells are axis-aligned rectangles, half-open on both axes
([xmin, xmax) x [ymin, ymax)) so adjacent cells cannot double-claim a
boundary centroid.
"""

from __future__ import annotations

import calendar
import datetime
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .model import Observations

__all__ = [
    "IngestReport", "read_nyt", "read_centroids", "read_cells",
    "month_range", "monthly_new_cases", "assign_to_grid", "aggregate",
    "moving_average", "ingest",
]

log = logging.getLogger(__name__)


@dataclass
class IngestReport:
    n_rows: int = 0
    n_skipped: int = 0
    skipped_examples: list = field(default_factory=list)
    n_missing_fips: int = 0
    n_clamped: int = 0
    clamped_total: int = 0
    unassigned: dict = field(default_factory=dict)   # fips -> excluded total
    total_assigned_increments: int = 0
    total_aggregated: int = 0

    def summary(self) -> str:
        lines = [
            f"rows read:            {self.n_rows}",
            f"rows skipped:         {self.n_skipped}",
            f"rows missing fips:    {self.n_missing_fips}",
            f"increments clamped:   {self.n_clamped} (total {self.clamped_total})",
            f"unassigned counties:  {len(self.unassigned)}"
            f" (excluded {sum(self.unassigned.values())})",
            f"assigned increments:  {self.total_assigned_increments}",
            f"aggregated counts:    {self.total_aggregated}",
        ]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# readers

def read_nyt(path, report: IngestReport | None = None):
    """Parse the cumulative case CSV into (date, fips, cases) records.

    Rows with an empty FIPS are excluded (aggregated "Unknown" county rows
    in the source data); rows that fail to parse are skipped.  Both are
    counted in the report.
    """
    report = report if report is not None else IngestReport()
    records = []
    with open(path) as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        try:
            i_date = cols.index("date")
            i_fips = cols.index("fips")
            i_cases = cols.index("cases")
        except ValueError:
            raise DataError(
                f"{path}: header must contain date, fips and cases columns; "
                f"got {header!r}") from None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            report.n_rows += 1
            parts = line.split(",")
            if len(parts) != len(cols):
                report.n_skipped += 1
                if len(report.skipped_examples) < 5:
                    report.skipped_examples.append((lineno, "field count"))
                continue
            fips = parts[i_fips].strip()
            if not fips:
                report.n_missing_fips += 1
                continue
            try:
                date = datetime.date.fromisoformat(parts[i_date])
                cases = int(parts[i_cases])
                if cases < 0:
                    raise ValueError("negative cumulative")
            except ValueError as exc:
                report.n_skipped += 1
                if len(report.skipped_examples) < 5:
                    report.skipped_examples.append((lineno, str(exc)))
                continue
            records.append((date, fips, cases))
    return records, report


def read_centroids(path) -> dict:
    """CSV `fips,lon,lat,population` -> {fips: (lon, lat, population)}."""
    out = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "fips,lon,lat,population":
            raise DataError(f"{path}: expected header 'fips,lon,lat,population'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields")
            fips = parts[0].strip()
            try:
                lon, lat = float(parts[1]), float(parts[2])
                pop = float(parts[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad numeric field") from None
            if not pop > 0:
                raise DataError(f"{path}:{lineno}: population must be positive")
            if fips in out:
                raise DataError(f"{path}:{lineno}: duplicate fips {fips}")
            out[fips] = (lon, lat, pop)
    if not out:
        raise DataError(f"{path}: no centroid rows")
    return out


def read_cells(path) -> list:
    """CSV `cell_id,xmin,ymin,xmax,ymax` -> [(id, xmin, ymin, xmax, ymax)].

    Ids must be 1..S with no gaps; rectangles are validated for positive
    extent but not for overlap (the shipped fixtures do not overlap).
    """
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "cell_id,xmin,ymin,xmax,ymax":
            raise DataError(f"{path}: expected header 'cell_id,xmin,ymin,xmax,ymax'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields")
            try:
                cid = int(parts[0])
                xmin, ymin, xmax, ymax = map(float, parts[1:])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad numeric field") from None
            if not (xmax > xmin and ymax > ymin):
                raise DataError(f"{path}:{lineno}: cell {cid} has empty extent")
            rows.append((cid, xmin, ymin, xmax, ymax))
    if not rows:
        raise DataError(f"{path}: no cell rows")
    ids = sorted(r[0] for r in rows)
    if ids != list(range(1, len(rows) + 1)):
        raise DataError(f"{path}: cell ids must be 1..{len(rows)} without gaps")
    return rows


# ---------------------------------------------------------------------------
# monthly differencing

def month_range(start: tuple, end: tuple) -> list:
    """Inclusive [(year, month)] sequence."""
    y, m = start
    out = []
    while (y, m) <= tuple(end):
        out.append((y, m))
        m += 1
        if m == 13:
            y, m = y + 1, 1
    if not out:
        raise ValueError("empty month range")
    return out


def _month_end(ym: tuple) -> datetime.date:
    y, m = ym
    return datetime.date(y, m, calendar.monthrange(y, m)[1])


def monthly_new_cases(records, months, report: IngestReport | None = None) -> dict:
    """Per-county monthly increments over `months`.

    For each county and month, the cumulative level is the last reported
    value on or before the month's end (carried forward over silent
    months; 0 before the first report).  The increment is the difference
    of consecutive levels, clamped at 0 when a cumulative correction runs
    backwards.
    """
    report = report if report is not None else IngestReport()
    ends = [_month_end(ym) for ym in months]
    per_county = {}
    for date, fips, cases in records:
        per_county.setdefault(fips, []).append((date, cases))
    out = {}
    for fips, rows in per_county.items():
        rows.sort()
        inc = np.zeros(len(months), dtype=np.int64)
        j = 0
        level = 0
        # baseline: last report before the first month of the range
        while j < len(rows) and rows[j][0] <= ends[0].replace(day=1) - datetime.timedelta(days=1):
            level = rows[j][1]
            j += 1
        prev = level
        for k, end in enumerate(ends):
            while j < len(rows) and rows[j][0] <= end:
                level = rows[j][1]
                j += 1
            step = level - prev
            if step < 0:
                log.warning("county %s, %04d-%02d: cumulative decreased by %d; "
                            "increment clamped to 0", fips, *months[k], -step)
                report.n_clamped += 1
                report.clamped_total += -step
                step = 0
            inc[k] = step
            prev = level
        out[fips] = inc
    return out, report


# ---------------------------------------------------------------------------
# spatial assignment and aggregation

def assign_to_grid(centroids: dict, cells: list) -> dict:
    """{fips: cell_id or None}; half-open rectangle containment."""
    out = {}
    for fips, (lon, lat, _pop) in centroids.items():
        hit = None
        for cid, xmin, ymin, xmax, ymax in cells:
            if xmin <= lon < xmax and ymin <= lat < ymax:
                hit = cid
                break
        out[fips] = hit
    return out


def aggregate(increments: dict, assignment: dict, centroids: dict,
              n_cells: int, report: IngestReport | None = None):
    """Sum member-county increments per (month, cell).

    Returns (Observations, population).  Cells with no member county are
    masked missing and get a neutral population of 1; counties with no
    cell (or absent from the centroid file) are excluded and reported.
    """
    report = report if report is not None else IngestReport()
    T = len(next(iter(increments.values()))) if increments else 0
    if T == 0:
        raise DataError("no increments to aggregate")
    counts = np.zeros((T, n_cells), dtype=np.int64)
    pop = np.zeros(n_cells)
    member = np.zeros(n_cells, dtype=bool)
    for fips, inc in increments.items():
        cid = assignment.get(fips)
        if cid is None:
            report.unassigned[fips] = int(inc.sum())
            continue
        counts[:, cid - 1] += inc
        report.total_assigned_increments += int(inc.sum())
    for fips, (_, _, p) in centroids.items():
        cid = assignment.get(fips)
        if cid is not None:
            pop[cid - 1] += p
            member[cid - 1] = True
    pop[~member] = 1.0
    mask = np.repeat(member[None, :], T, axis=0)
    report.total_aggregated = int(counts[mask].sum())
    return Observations(counts=counts, mask=mask), pop, report


def moving_average(x, window: int = 7) -> np.ndarray:
    """Centered moving mean with edge truncation (shorter end windows)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-D series")
    if window < 1:
        raise ValueError("window must be positive")
    n = x.size
    out = np.empty(n)
    half = window // 2
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = x[lo:hi].mean()
    return out


# ---------------------------------------------------------------------------
# orchestration

def ingest(cases_path, centroids_path, cells_path,
           start: tuple | None = None, end: tuple | None = None):
    """Full pipeline; returns (Observations, population, months, report).

    Month t of the result (1-based in the counts file) is months[t-1];
    the range defaults to the span of the case records.
    """
    report = IngestReport()
    records, report = read_nyt(cases_path, report)
    if not records:
        raise DataError(f"{cases_path}: no usable case records")
    centroids = read_centroids(centroids_path)
    cells = read_cells(cells_path)
    dates = [r[0] for r in records]
    if start is None:
        d = min(dates)
        start = (d.year, d.month)
    if end is None:
        d = max(dates)
        end = (d.year, d.month)
    months = month_range(start, end)
    increments, report = monthly_new_cases(records, months, report)
    unknown = sorted(set(increments) - set(centroids))
    if unknown:
        # counties reporting cases but absent from the centroid table can't
        # be placed; treat like unassigned
        for fips in unknown:
            report.unassigned[fips] = int(increments[fips].sum())
            del increments[fips]
    assignment = assign_to_grid(centroids, cells)
    obs, pop, report = aggregate(increments, assignment, centroids,
                                 len(cells), report)
    return obs, pop, months, report
