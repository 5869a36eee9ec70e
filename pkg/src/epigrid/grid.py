"""Lattice geometry: active-cell masks, neighbor structure, grid-file I/O.

A grid is a rectangular nx-by-ny lattice of square-ish cells with spacings
(dx, dy) and a model time step dt.  A boolean mask selects the active cells;
inactive cells act as an absorbing (Dirichlet zero) boundary for the
propagator.  Active cells are numbered row-major from the north-west corner,
x = j*dx eastward, y = i*dy **southward** (so row index grows toward the
bottom of the rendered lattice and positive advection drifts mass toward the
bottom-right).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "Grid",
    "make_rect_grid",
    "make_masked_grid",
    "read_grid_file",
    "write_grid_file",
    "read_population",
    "write_population",
]


@dataclass(frozen=True)
class Grid:
    """Active-cell lattice with precomputed neighbor indices.

    Neighbor arrays hold the 0-based active-cell index of the adjacent cell
    in each direction, or -1 where the neighbor is inactive or off-lattice
    (the Dirichlet wall).  left/right step x by -dx/+dx, up/down step y by
    -dy/+dy (up = north = smaller row index).
    """

    nx: int
    ny: int
    dx: float
    dy: float
    dt: float
    mask: np.ndarray            # (ny, nx) bool
    n_cells: int = field(init=False)
    cell_index: np.ndarray = field(init=False)   # (ny, nx) int, -1 inactive
    rows: np.ndarray = field(init=False)         # (S,) row of each active cell
    cols: np.ndarray = field(init=False)         # (S,)
    left: np.ndarray = field(init=False)         # (S,) int
    right: np.ndarray = field(init=False)
    up: np.ndarray = field(init=False)
    down: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.ny, self.nx):
            raise ValueError(f"mask shape {mask.shape} != (ny={self.ny}, nx={self.nx})")
        for name in ("dx", "dy", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not mask.any():
            raise ValueError("grid has no active cells")
        object.__setattr__(self, "mask", mask)

        index = np.full((self.ny, self.nx), -1, dtype=np.int64)
        rr, cc = np.nonzero(mask)          # nonzero scans row-major: NW first
        index[rr, cc] = np.arange(rr.size)
        object.__setattr__(self, "cell_index", index)
        object.__setattr__(self, "n_cells", int(rr.size))
        object.__setattr__(self, "rows", rr)
        object.__setattr__(self, "cols", cc)

        def nbr(di, dj):
            r, c = rr + di, cc + dj
            ok = (r >= 0) & (r < self.ny) & (c >= 0) & (c < self.nx)
            out = np.full(rr.size, -1, dtype=np.int64)
            out[ok] = index[r[ok], c[ok]]   # stays -1 when inactive
            return out

        object.__setattr__(self, "left", nbr(0, -1))
        object.__setattr__(self, "right", nbr(0, 1))
        object.__setattr__(self, "up", nbr(-1, 0))
        object.__setattr__(self, "down", nbr(1, 0))

    def neighbors(self, s: int) -> dict[str, int]:
        """Active neighbors of cell s as {direction: index}, walls omitted."""
        out = {}
        for name in ("left", "right", "up", "down"):
            j = int(getattr(self, name)[s])
            if j >= 0:
                out[name] = j
        return out

    def degree(self, s: int) -> int:
        return len(self.neighbors(s))


def make_rect_grid(nx: int, ny: int, dx: float = 1.0, dy: float = 1.0,
                   dt: float = 1.0) -> Grid:
    """Fully-active nx-by-ny lattice."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    return Grid(nx=nx, ny=ny, dx=dx, dy=dy, dt=dt,
                mask=np.ones((ny, nx), dtype=bool))


def make_masked_grid(mask, dx: float = 1.0, dy: float = 1.0, dt: float = 1.0) -> Grid:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D (ny, nx)")
    return Grid(nx=mask.shape[1], ny=mask.shape[0], dx=dx, dy=dy, dt=dt, mask=mask)


# ---------------------------------------------------------------------------
# file formats
#
# grid file: one header line "nx ny dx dy dt", then ny rows of nx characters,
# '1' active / '0' inactive, north row first.  '#' lines are comments.

def write_grid_file(grid: Grid, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{grid.nx} {grid.ny} {grid.dx:g} {grid.dy:g} {grid.dt:g}\n")
        for i in range(grid.ny):
            fh.write("".join("1" if grid.mask[i, j] else "0" for j in range(grid.nx)))
            fh.write("\n")


def read_grid_file(path) -> Grid:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty grid file")
    head = lines[0].split()
    if len(head) != 5:
        raise DataError(f"{path}: header must be 'nx ny dx dy dt', got {lines[0]!r}")
    try:
        nx, ny = int(head[0]), int(head[1])
        dx, dy, dt = (float(v) for v in head[2:])
    except ValueError as e:
        raise DataError(f"{path}: bad header: {e}") from None
    body = lines[1:]
    if len(body) != ny:
        raise DataError(f"{path}: expected {ny} mask rows, got {len(body)}")
    mask = np.zeros((ny, nx), dtype=bool)
    for i, row in enumerate(body):
        if len(row) != nx or set(row) - {"0", "1"}:
            raise DataError(f"{path}: mask row {i} must be {nx} chars of 0/1, got {row!r}")
        mask[i] = [ch == "1" for ch in row]
    try:
        return Grid(nx=nx, ny=ny, dx=dx, dy=dy, dt=dt, mask=mask)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


# population file: CSV "cell_id,population", ids 1-based, one row per cell.

def write_population(pop: np.ndarray, path) -> None:
    pop = np.asarray(pop, dtype=float)
    with open(path, "w") as fh:
        fh.write("cell_id,population\n")
        for s, p in enumerate(pop, start=1):
            fh.write(f"{s},{p:g}\n")


def read_population(path, n_cells: int) -> np.ndarray:
    pop = np.full(n_cells, np.nan)
    with open(path) as fh:
        header = None
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if header is None:
                header = ln
                if header.replace(" ", "") != "cell_id,population":
                    raise DataError(f"{path}: expected header 'cell_id,population'")
                continue
            parts = ln.split(",")
            try:
                cid, p = int(parts[0]), float(parts[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}: bad population row {ln!r}") from None
            if not 1 <= cid <= n_cells:
                raise DataError(f"{path}: cell_id {cid} outside 1..{n_cells}")
            pop[cid - 1] = p
    if np.isnan(pop).any():
        missing = np.nonzero(np.isnan(pop))[0] + 1
        raise DataError(f"{path}: missing population for cells {missing.tolist()}")
    if (pop <= 0).any():
        raise DataError(f"{path}: populations must be positive")
    return pop
