"""Sparse one-step propagator for the latent log-intensity field.

The continuous dynamics are advection-diffusion-reaction,

    du/dt = -nu . grad(u) + div(delta(s) grad(u)) + zeta * u,

discretized forward in time and centered in space on the active-cell lattice.
One build produces the S-by-S matrix H with at most five nonzeros per row
(self, left, right, down, up); u_next = H @ u_prev.

Boundary condition is absorbing (Dirichlet zero): weights pointing at
inactive cells are dropped, so mass leaks off the active region.  Diffusion
coefficients referenced at inactive offset positions are replaced by the
center cell's value, which keeps the off-lattice field from entering the
stencil.

With spacing (dx, dy), step dt, center coefficient dc = delta(center):

    self : 1 - 2*dc*(dt/dx^2 + dt/dy^2) + zeta*dt
    left : dt/(4*dx^2) * (4*dc - dR + dL + 2*nu1*dx)
    right: dt/(4*dx^2) * (4*dc + dR - dL - 2*nu1*dx)
    up   : dt/(4*dy^2) * (4*dc - dD + dU + 2*nu2*dy)
    down : dt/(4*dy^2) * (4*dc + dD - dU - 2*nu2*dy)

where dL/dR/dU/dD are delta at the four offsets.  Every fully-interior row
sums to 1 + zeta*dt exactly (the delta cross terms and the advection terms
cancel pairwise), so zeta acts as per-step exponential growth.  Positive
(nu1, nu2) advect mass toward +x (east) and +y (south): the upwind weight
grows, the downwind weight shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid

__all__ = [
    "Propagator",
    "StabilityReport",
    "StencilBasis",
    "build",
    "stability_check",
    "make_basis",
    "get_basis",
]


def _expand(val, n: int, name: str, allow_negative: bool = True) -> np.ndarray:
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be scalar or shape ({n},), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if not allow_negative and (arr < 0).any():
        raise ValueError(f"{name} must be nonnegative")
    return arr


def _stencil_weights(grid: Grid, delta, nu1, nu2):
    """Per-cell neighbor weights before boundary dropping.

    Returns (wl, wr, wu, wd, pre_growth_diag), each (S,).  The weights are
    the formula values with center-substituted delta at inactive offsets;
    whether a weight is kept is decided by the caller from the neighbor
    index arrays.
    """
    dt, dx, dy = grid.dt, grid.dx, grid.dy
    dc = delta

    def off(idx):
        # delta at an offset, center value where the offset cell is inactive
        out = dc.copy()
        ok = idx >= 0
        out[ok] = dc[idx[ok]]
        return out

    dL, dR = off(grid.left), off(grid.right)
    dU, dD = off(grid.up), off(grid.down)

    cx, cy = dt / (4.0 * dx * dx), dt / (4.0 * dy * dy)
    wl = cx * (4.0 * dc - dR + dL + 2.0 * nu1 * dx)
    wr = cx * (4.0 * dc + dR - dL - 2.0 * nu1 * dx)
    wu = cy * (4.0 * dc - dD + dU + 2.0 * nu2 * dy)
    wd = cy * (4.0 * dc + dD - dU - 2.0 * nu2 * dy)
    diag0 = 1.0 - 2.0 * dc * (dt / (dx * dx) + dt / (dy * dy))
    return wl, wr, wu, wd, diag0


@dataclass(frozen=True)
class Propagator:
    """CSR one-step propagator; column order per row is (self, left, right, down, up)."""

    grid: Grid
    delta: np.ndarray
    zeta: float
    nu1: np.ndarray
    nu2: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_cells,):
            raise ValueError(f"field must have shape ({self.n_cells},), got {u.shape}")
        return np.add.reduceat(self.data * u[self.indices], self.indptr[:-1])

    def to_dense(self) -> np.ndarray:
        S = self.n_cells
        H = np.zeros((S, S))
        for s in range(S):
            lo, hi = self.indptr[s], self.indptr[s + 1]
            H[s, self.indices[lo:hi]] = self.data[lo:hi]
        return H

    def row(self, s: int) -> dict[int, float]:
        lo, hi = self.indptr[s], self.indptr[s + 1]
        return dict(zip(self.indices[lo:hi].tolist(), self.data[lo:hi].tolist()))

    def dump(self, path) -> None:
        """Write `row,col,weight` triples (1-based ids) in storage order."""
        with open(path, "w") as fh:
            fh.write("row,col,weight\n")
            for s in range(self.n_cells):
                lo, hi = self.indptr[s], self.indptr[s + 1]
                for k in range(lo, hi):
                    fh.write(f"{s + 1},{self.indices[k] + 1},{float(self.data[k])!r}\n")


def build(grid: Grid, delta, zeta: float = 0.0, nu1=0.0, nu2=0.0) -> Propagator:
    """Assemble H for one set of coefficients.

    delta is per-cell (scalar broadcast), must be nonnegative; nu1/nu2
    per-cell or scalar; zeta a scalar (growth is never spatial).
    """
    S = grid.n_cells
    delta = _expand(delta, S, "delta", allow_negative=False)
    nu1 = _expand(nu1, S, "nu1")
    nu2 = _expand(nu2, S, "nu2")
    zeta = float(zeta)
    if not np.isfinite(zeta):
        raise ValueError("zeta must be finite")

    wl, wr, wu, wd, diag0 = _stencil_weights(grid, delta, nu1, nu2)
    diag = diag0 + zeta * grid.dt

    indptr = np.zeros(S + 1, dtype=np.int64)
    indices, data = [], []
    # fixed order: self, left, right, down, up; dropped entries leak mass out
    for s in range(S):
        indices.append(s)
        data.append(diag[s])
        for idx, w in ((grid.left[s], wl[s]), (grid.right[s], wr[s]),
                       (grid.down[s], wd[s]), (grid.up[s], wu[s])):
            if idx >= 0:
                indices.append(idx)
                data.append(w)
        indptr[s + 1] = len(indices)
    return Propagator(grid=grid, delta=delta, zeta=zeta, nu1=nu1, nu2=nu2,
                      indptr=indptr, indices=np.array(indices, dtype=np.int64),
                      data=np.array(data, dtype=float))


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    warnings: list  # (cell_id 1-based, kind, message)

    def __str__(self):
        if self.ok:
            return "stability: ok"
        lines = [f"stability: {len(self.warnings)} warning(s)"]
        lines += [f"  cell {c}: [{k}] {m}" for c, k, m in self.warnings]
        return "\n".join(lines)


def stability_check(grid: Grid, delta, nu1=0.0, nu2=0.0) -> StabilityReport:
    """Flag cells where the explicit scheme loses its sign structure.

    Two failure modes: the diffusion number 2*delta*(dt/dx^2 + dt/dy^2)
    exceeding 1 (pre-growth diagonal goes negative), and advection strong
    enough relative to diffusion to flip a neighbor weight negative.
    """
    S = grid.n_cells
    delta = _expand(delta, S, "delta", allow_negative=False)
    nu1 = _expand(nu1, S, "nu1")
    nu2 = _expand(nu2, S, "nu2")

    wl, wr, wu, wd, diag0 = _stencil_weights(grid, delta, nu1, nu2)
    warnings = []
    r = 2.0 * delta * (grid.dt / grid.dx ** 2 + grid.dt / grid.dy ** 2)
    for s in np.nonzero(r > 1.0)[0]:
        warnings.append((int(s) + 1, "diffusion",
                         f"diffusion number {r[s]:.4g} > 1, diagonal negative"))
    for name, w, idx in (("left", wl, grid.left), ("right", wr, grid.right),
                         ("up", wu, grid.up), ("down", wd, grid.down)):
        for s in np.nonzero((w < 0.0) & (idx >= 0))[0]:
            warnings.append((int(s) + 1, "advection",
                             f"{name} weight {w[s]:.4g} < 0, advection dominates diffusion"))
    warnings.sort()
    return StabilityReport(ok=not warnings, warnings=warnings)


# ---------------------------------------------------------------------------
# affine decomposition
#
# H is affine in every coefficient:
#
#   H(delta, zeta, nu1, nu2) = I + sum_s delta[s] * D[s]
#                                + zeta*dt * I
#                                + sum_s nu1[s] * N1[s] + nu2[s] * N2[s]
#
# The basis below is extracted by probing `build` with unit coefficient
# vectors, so downstream consumers (sampler conditionals, dense stacks for
# the latent-field kernel) cannot disagree with the validated stencil.

@dataclass(frozen=True)
class StencilBasis:
    grid: Grid
    D: np.ndarray          # (S, S, S): D[s] = dH/d delta[s]
    n1_cols: np.ndarray    # (S, 2) target columns for dH/d nu1[s], -1 absent
    n1_coefs: np.ndarray   # (S, 2) matching weights (row s)
    n2_cols: np.ndarray
    n2_coefs: np.ndarray
    col_support: np.ndarray   # (S, k) rows with a nonzero in column s, -1 padded
    col_support_n: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def materialize(self, delta, zeta, nu1, nu2) -> np.ndarray:
        """Dense H stack for arrays of coefficients.

        delta: (S,); zeta: (K,); nu1/nu2: (K, S).  Returns (K, S, S).
        Used by the sampler where S is small; the sparse Propagator remains
        the public single-step interface.
        """
        S = self.n_cells
        delta = np.asarray(delta, dtype=float)
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        K = zeta.shape[0]
        nu1 = np.broadcast_to(np.asarray(nu1, dtype=float), (K, S))
        nu2 = np.broadcast_to(np.asarray(nu2, dtype=float), (K, S))

        base = np.eye(S) + np.tensordot(delta, self.D, axes=1)
        H = np.repeat(base[None, :, :], K, axis=0)
        H[:, np.arange(S), np.arange(S)] += zeta[:, None] * self.grid.dt
        rows = np.arange(S)
        for k in range(2):
            ok = self.n1_cols[:, k] >= 0
            H[:, rows[ok], self.n1_cols[ok, k]] += nu1[:, ok] * self.n1_coefs[ok, k]
            ok = self.n2_cols[:, k] >= 0
            H[:, rows[ok], self.n2_cols[ok, k]] += nu2[:, ok] * self.n2_coefs[ok, k]
        return H


def make_basis(grid: Grid) -> StencilBasis:
    S = grid.n_cells
    eye = np.eye(S)
    D = np.empty((S, S, S))
    for s in range(S):
        e = np.zeros(S)
        e[s] = 1.0
        D[s] = build(grid, delta=e).to_dense() - eye

    def nu_basis(which):
        cols = np.full((S, 2), -1, dtype=np.int64)
        coefs = np.zeros((S, 2))
        for s in range(S):
            e = np.zeros(S)
            e[s] = 1.0
            kw = {"nu1": e} if which == 1 else {"nu2": e}
            M = build(grid, delta=np.zeros(S), **kw).to_dense() - eye
            nz = np.nonzero(M[s])[0]
            assert (M[np.arange(S) != s] == 0).all()  # nu[s] only touches row s
            for k, c in enumerate(nz[:2]):
                cols[s, k] = c
                coefs[s, k] = M[s, c]
        return cols, coefs

    n1_cols, n1_coefs = nu_basis(1)
    n2_cols, n2_coefs = nu_basis(2)

    # column support of H: rows whose stencil references cell s (topology only)
    touch = [[] for _ in range(S)]
    full = build(grid, delta=np.ones(S), zeta=1.0,
                 nu1=np.ones(S), nu2=np.ones(S))
    for r in range(S):
        lo, hi = full.indptr[r], full.indptr[r + 1]
        for c in full.indices[lo:hi]:
            touch[c].append(r)
    width = max(len(t) for t in touch)
    col_support = np.full((S, width), -1, dtype=np.int64)
    col_support_n = np.zeros(S, dtype=np.int64)
    for s, t in enumerate(touch):
        col_support[s, :len(t)] = sorted(t)
        col_support_n[s] = len(t)
    return StencilBasis(grid=grid, D=D, n1_cols=n1_cols, n1_coefs=n1_coefs,
                        n2_cols=n2_cols, n2_coefs=n2_coefs,
                        col_support=col_support, col_support_n=col_support_n)


def get_basis(grid: Grid) -> StencilBasis:
    """Per-grid cached basis (probing costs S builds; grids are long-lived)."""
    b = getattr(grid, "_stencil_basis", None)
    if b is None:
        b = make_basis(grid)
        object.__setattr__(grid, "_stencil_basis", b)
    return b
