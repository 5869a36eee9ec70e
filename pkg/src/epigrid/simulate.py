"""Forward simulation of the latent field and Poisson counts.

Generation runs T steps from a supplied initial field u_0: step i
(i = 0..T-1) builds H from (delta, zeta[i], nu[i]) and sets

    u_{i+1} = H u_i + eps_{i+1},   n_{i+1} ~ Poisson(exp(u_{i+1}))

with eps iid N(0, sigma2 I) or stationary AR(1) over t.  Index i of a truth
array drives the step into time i+1, the same rule the fit uses (where index
0 is prior-only because u_1 is anchored directly).

Counts are drawn with numpy Generator.poisson (exact inversion /
transformed-rejection sampler), so a seed pins the dataset bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .grid import Grid, make_rect_grid
from .model import Observations
from .propagator import build

__all__ = [
    "SimConfig", "SimResult", "simulate", "scenario1", "scenario2",
    "write_truth", "read_truth",
]


def _time_space(val, T: int, S: int, name: str) -> np.ndarray:
    """Broadcast scalar/(T,)/(S,)/(T,S) truth input to (T, S)."""
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.broadcast_to(arr, (T, S))
    if arr.shape == (T,):
        return np.broadcast_to(arr[:, None], (T, S))
    if arr.shape == (S,):
        return np.broadcast_to(arr[None, :], (T, S))
    if arr.shape == (T, S):
        return arr
    raise ValueError(f"{name}: cannot broadcast shape {arr.shape} to ({T},{S})")


@dataclass
class SimConfig:
    grid: Grid
    T: int
    delta: np.ndarray | float = 0.1
    zeta: np.ndarray | float = 0.0
    nu1: np.ndarray | float = 0.0
    nu2: np.ndarray | float = 0.0
    sigma2: float = 0.1
    ar_errors: bool = False
    phi: float = 0.0
    u0: np.ndarray | float = 0.0
    pop: np.ndarray | None = None     # population factor, lambda = pop*exp(u)


@dataclass
class SimResult:
    config: SimConfig
    seed: int
    u: np.ndarray       # (T+1, S), row 0 = u_0
    eps: np.ndarray     # (T, S), eps_1..eps_T
    obs: Observations


def simulate(cfg: SimConfig, seed: int) -> SimResult:
    g = cfg.grid
    T, S = cfg.T, g.n_cells
    if T < 1:
        raise ValueError("T must be >= 1")
    zeta = np.broadcast_to(np.asarray(cfg.zeta, dtype=float), (T,))
    nu1 = _time_space(cfg.nu1, T, S, "nu1")
    nu2 = _time_space(cfg.nu2, T, S, "nu2")
    delta = np.broadcast_to(np.asarray(cfg.delta, dtype=float), (S,))
    if not cfg.sigma2 >= 0:
        raise ValueError("sigma2 must be nonnegative")
    if cfg.ar_errors and not abs(cfg.phi) < 1:
        raise ValueError("AR simulation needs |phi| < 1")

    rng = np.random.default_rng(seed)
    sd = np.sqrt(cfg.sigma2)
    u = np.empty((T + 1, S))
    u[0] = np.broadcast_to(np.asarray(cfg.u0, dtype=float), (S,))
    eps = np.empty((T, S))
    logpop = 0.0 if cfg.pop is None else np.log(np.asarray(cfg.pop, dtype=float))

    for i in range(T):
        H = build(g, delta=delta, zeta=zeta[i], nu1=nu1[i], nu2=nu2[i])
        drift = H.apply(u[i])
        if cfg.ar_errors:
            if i == 0:
                eps[0] = rng.normal(0.0, sd / np.sqrt(1.0 - cfg.phi ** 2), size=S)
            else:
                eps[i] = cfg.phi * eps[i - 1] + rng.normal(0.0, sd, size=S)
        else:
            eps[i] = rng.normal(0.0, sd, size=S)
        u[i + 1] = drift + eps[i]
        z = u[i + 1] + logpop
        if (z > 700.0).any():
            s_bad = int(np.argmax(z))
            raise NumericError(
                f"intensity overflow at t={i + 1}, cell={s_bad + 1}: "
                f"log-intensity {z[s_bad]:.3g}")

    lam = np.exp(u[1:] + logpop)
    counts = rng.poisson(lam)
    obs = Observations(counts=counts, mask=np.ones((T, S), dtype=bool))
    return SimResult(config=cfg, seed=seed, u=u, eps=eps, obs=obs)


# ---------------------------------------------------------------------------
# the two study scenarios: 5x5 unit lattice, T = 24, growth switching from
# 0.15 to 0.01 after step 6, advection +0.1 toward the bottom-right for the
# first half and -0.1 after, diffusion 0.1, innovation variance 0.1.  The
# initial field is a Gaussian bump over a low background (peak ~25 expected
# cases, background ~2) so the advection has a front to move: the count
# centroid drifts toward the bottom-right corner through t = 12 and back
# after.  A flat start would leave nothing to advect.

def _scenario_base(T: int = 24) -> SimConfig:
    zeta = np.where(np.arange(T) < 6, 0.15, 0.01)
    nu = np.where(np.arange(T) < T // 2, 0.1, -0.1)
    grid = make_rect_grid(5, 5, 1.0, 1.0, 1.0)
    rows, cols = np.meshgrid(np.arange(5.0), np.arange(5.0), indexing="ij")
    bump = 2.5 * np.exp(-((rows - 1.0) ** 2 + (cols - 1.0) ** 2) / (2 * 1.2 ** 2))
    return SimConfig(grid=grid, T=T, delta=0.1, zeta=zeta, nu1=nu, nu2=nu,
                     sigma2=0.1, u0=0.7 + bump[grid.mask])


def scenario1(T: int = 24) -> SimConfig:
    return _scenario_base(T)


def scenario2(T: int = 24) -> SimConfig:
    cfg = _scenario_base(T)
    cfg.ar_errors = True
    cfg.phi = 0.1
    return cfg


# ---------------------------------------------------------------------------
# truth file: CSV `name,t,cell,value`; u rows span t=0..T, eps t=1..T, the
# step parameters t=0..T-1 expanded over cells; scalars use t=0, cell=0.

def write_truth(res: SimResult, path) -> None:
    cfg = res.config
    T, S = cfg.T, cfg.grid.n_cells
    zeta = np.broadcast_to(np.asarray(cfg.zeta, dtype=float), (T,))
    nu1 = _time_space(cfg.nu1, T, S, "nu1")
    nu2 = _time_space(cfg.nu2, T, S, "nu2")
    delta = np.broadcast_to(np.asarray(cfg.delta, dtype=float), (S,))
    with open(path, "w") as fh:
        fh.write("name,t,cell,value\n")
        for t in range(T + 1):
            for s in range(S):
                fh.write(f"u,{t},{s + 1},{float(res.u[t, s])!r}\n")
        for t in range(T):
            for s in range(S):
                fh.write(f"eps,{t + 1},{s + 1},{float(res.eps[t, s])!r}\n")
        for s in range(S):
            fh.write(f"delta,0,{s + 1},{float(delta[s])!r}\n")
        for t in range(T):
            fh.write(f"zeta,{t},0,{float(zeta[t])!r}\n")
        for t in range(T):
            for s in range(S):
                fh.write(f"nu1,{t},{s + 1},{float(nu1[t, s])!r}\n")
                fh.write(f"nu2,{t},{s + 1},{float(nu2[t, s])!r}\n")
        fh.write(f"sigma2,0,0,{float(cfg.sigma2)!r}\n")
        if res.config.ar_errors:
            fh.write(f"phi,0,0,{float(cfg.phi)!r}\n")


def read_truth(path) -> dict[str, dict[tuple[int, int], float]]:
    out: dict[str, dict[tuple[int, int], float]] = {}
    with open(path) as fh:
        header = None
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if header is None:
                header = ln
                if header.replace(" ", "") != "name,t,cell,value":
                    raise DataError(f"{path}: expected header 'name,t,cell,value'")
                continue
            parts = ln.split(",")
            try:
                name, t, c, v = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
            except (ValueError, IndexError):
                raise DataError(f"{path}: bad truth row {ln!r}") from None
            out.setdefault(name, {})[(t, c)] = v
    return out
