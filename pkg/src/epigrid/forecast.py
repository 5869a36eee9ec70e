"""One-step-ahead prediction from a fitted parameter point.

The point forecast advances the posterior-mean latent field one step with
the propagator built from the final fitted coefficients (held constant past
the data window) and, under AR errors, adds the autocorrelated carry-over
phi * eps_T.  Intensities exponentiate (plus log population when the model
is population-adjusted).  The persistence baseline repeats the last latent
field unchanged.
"""

from __future__ import annotations

import numpy as np

from . import propagator
from .errors import DataError
from .grid import Grid
from .model import ModelSpec, ParamState, expand_nu, expand_zeta, param_shapes

__all__ = [
    "forecast_latent", "persistence_latent", "intensity",
    "evaluate", "state_from_summary",
    "write_prediction", "read_prediction", "write_difference",
    "posterior_predictive",
]


def forecast_latent(state: ParamState, grid: Grid, spec: ModelSpec) -> np.ndarray:
    """u_{T+1} = H(delta, zeta_T, nu_T) u_T (+ phi eps_T under AR)."""
    T, S = state.u.shape
    zeta = expand_zeta(state.zeta, T)
    if spec.nu_present:
        nu1 = expand_nu(state.nu1, T, S)[-1]
        nu2 = expand_nu(state.nu2, T, S)[-1]
    else:
        nu1 = nu2 = 0.0
    H = propagator.build(grid, delta=state.delta, zeta=float(zeta[-1]),
                         nu1=nu1, nu2=nu2)
    u_next = H.apply(state.u[-1])
    if spec.ar_errors and state.eps is not None:
        u_next = u_next + state.phi * state.eps[-1]
    return u_next


def persistence_latent(state: ParamState) -> np.ndarray:
    """Baseline: tomorrow looks like today."""
    return state.u[-1].copy()


def intensity(u: np.ndarray, spec: ModelSpec, pop=None) -> np.ndarray:
    """Expected counts for a latent field."""
    if spec.population_adjusted:
        if pop is None:
            raise ValueError("population-adjusted spec requires pop")
        return np.asarray(pop, dtype=float) * np.exp(u)
    return np.exp(u)


def evaluate(predicted: np.ndarray, observed: np.ndarray, mask=None) -> dict:
    """Per-cell differences and MSE of a count forecast.

    Differences are observed - predicted (NaN where masked out); the MSE
    averages over observed cells only.
    """
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError("predicted and observed must share a shape")
    if mask is None:
        mask = np.ones(predicted.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no observed cells to evaluate")
    diff = np.where(mask, observed - predicted, np.nan)
    mse = float(np.mean((observed[mask] - predicted[mask]) ** 2))
    return {"diff": diff, "mse": mse}


# ---------------------------------------------------------------------------
# rebuilding a parameter point from a fit summary

def _parse_ts(label: str, what: str) -> tuple[int, int]:
    try:
        t, s = label.split("-")
        return int(t), int(s)
    except ValueError:
        raise DataError(f"bad {what} index label {label!r}") from None


def state_from_summary(rows: list, spec: ModelSpec, T: int, S: int) -> ParamState:
    """Posterior-mean ParamState from summary rows (the `mean` column).

    Index labels follow the sampler's conventions: delta by 1-based cell,
    zeta/nu by stored transition index (0-based, possibly collapsed), u and
    eps by 1-based "t-s".
    """
    shapes = param_shapes(spec, T, S)
    arrays = {name: np.full(shape, np.nan) for name, shape in shapes.items()}
    sigma2 = None
    phi = 0.0
    for row in rows:
        name, label, mean = row["param"], row["index"], row["mean"]
        if name == "sigma2":
            sigma2 = mean
        elif name == "phi":
            phi = mean
        elif name == "delta":
            arrays["delta"][int(label) - 1] = mean
        elif name == "zeta":
            arrays["zeta"][int(label)] = mean
        elif name in ("nu1", "nu2"):
            if name in arrays:
                t, s = _parse_ts(label, name)
                arrays[name][t, s - 1] = mean
        elif name in ("u", "eps"):
            if name in arrays:
                t, s = _parse_ts(label, name)
                arrays[name][t - 1, s - 1] = mean
    if sigma2 is None:
        raise DataError("summary has no sigma2 row")
    for name, arr in arrays.items():
        if np.isnan(arr).any():
            raise DataError(f"summary is missing {name} entries")
    return ParamState(
        u=arrays["u"], delta=arrays["delta"], zeta=arrays["zeta"],
        sigma2=float(sigma2),
        nu1=arrays.get("nu1"), nu2=arrays.get("nu2"),
        phi=float(phi), eps=arrays.get("eps"),
    )


# ---------------------------------------------------------------------------
# files

def write_prediction(path, u_next: np.ndarray, lam: np.ndarray) -> None:
    """CSV `cell,pred_log,pred_count`, one row per cell (1-based)."""
    with open(path, "w") as fh:
        fh.write("cell,pred_log,pred_count\n")
        for s in range(u_next.shape[0]):
            fh.write(f"{s + 1},{float(u_next[s])!r},{float(lam[s])!r}\n")


def read_prediction(path) -> tuple[np.ndarray, np.ndarray]:
    u, lam = [], []
    with open(path) as fh:
        header = None
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if header is None:
                header = ln
                if header != "cell,pred_log,pred_count":
                    raise DataError(f"unexpected prediction header: {header!r}")
                continue
            parts = ln.split(",")
            if len(parts) != 3:
                raise DataError(f"bad prediction row {ln!r}")
            u.append(float(parts[1]))
            lam.append(float(parts[2]))
    if not u:
        raise DataError(f"{path}: no prediction rows")
    return np.array(u), np.array(lam)


def write_difference(path, predicted: np.ndarray, observed: np.ndarray,
                     mask=None) -> float:
    """CSV `cell,predicted,observed,diff` over observed cells; returns MSE."""
    res = evaluate(predicted, observed, mask)
    mask = np.ones(predicted.shape, dtype=bool) if mask is None \
        else np.asarray(mask, dtype=bool)
    with open(path, "w") as fh:
        fh.write("cell,predicted,observed,diff\n")
        for s in range(predicted.shape[0]):
            if mask[s]:
                fh.write(f"{s + 1},{float(predicted[s])!r},"
                         f"{float(observed[s])!r},{float(res['diff'][s])!r}\n")
    return res["mse"]


# ---------------------------------------------------------------------------
# beyond the point forecast

def posterior_predictive(samples, grid: Grid, spec: ModelSpec, seed: int = 0,
                         pop=None, max_draws: int | None = None):
    """Draws of (u_{T+1}, counts_{T+1}) propagating full posterior
    uncertainty: each retained MCMC draw is advanced one step, a fresh
    process innovation is added, and counts are sampled from the Poisson
    observation law.  Extension beyond the one-step point forecast above.

    Returns (latent_draws, count_draws), both (n_draws, S).
    """
    rng = np.random.default_rng(seed)
    d = samples.draws
    C, K = d["sigma2"].shape
    S = grid.n_cells
    idx = [(c, k) for c in range(C) for k in range(K)]
    if max_draws is not None and len(idx) > max_draws:
        sel = rng.choice(len(idx), size=max_draws, replace=False)
        idx = [idx[j] for j in sel]
    latent = np.empty((len(idx), S))
    logpop = np.log(np.asarray(pop, dtype=float)) \
        if spec.population_adjusted else 0.0
    if spec.population_adjusted and pop is None:
        raise ValueError("population-adjusted spec requires pop")
    for j, (c, k) in enumerate(idx):
        state = ParamState(
            u=d["u"][c, k], delta=d["delta"][c, k], zeta=d["zeta"][c, k],
            sigma2=float(d["sigma2"][c, k]),
            nu1=d["nu1"][c, k] if "nu1" in d else None,
            nu2=d["nu2"][c, k] if "nu2" in d else None,
            phi=float(d["phi"][c, k]) if "phi" in d else 0.0,
            eps=d["eps"][c, k] if "eps" in d else None,
        )
        mean = forecast_latent(state, grid, spec)
        latent[j] = mean + np.sqrt(state.sigma2) * rng.standard_normal(S)
    counts = rng.poisson(np.exp(np.clip(latent + logpop, None, 700.0)))
    return latent, counts
