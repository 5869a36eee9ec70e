"""Metropolis-within-Gibbs sampler for the hierarchical lattice model.

Update cycle, once per iteration:

  1. rebuild the dense propagator stack from the current coefficients and
     refresh the innovation matrix E wholesale (kills accumulated
     floating-point drift from the incremental updates below)
  2. random-walk Metropolis sweep over all latent sites (jitted kernel)
  3. conjugate Gaussian draws for nu1, nu2 and zeta
  4. sequential truncated-normal draws for the diffusion map delta
  5. under AR errors: exact Gaussian draw of the free initial innovation,
     then a random-walk Metropolis step on phi
  6. conjugate inverse-gamma draw for sigma2

Innovation bookkeeping: E[0] holds the free initial innovation under AR
errors (zeros otherwise), E[i] = U[i] - H_i U[i-1] for i >= 1, and every
parameter draw updates E incrementally so each conditional sees a state
consistent with the current parameters.

The conjugate blocks all reduce to one observation: each coefficient theta
enters the innovations linearly, E = c - theta * g with a gradient field g
that is zero outside the coefficient's footprint.  Under AR errors the
likelihood is Gaussian in eta_i = E_i - phi E_{i-1} instead, which stays
linear in theta; time-varying coefficients at adjacent indices share eta
terms, so those are drawn sequentially over t, while draws across cells at
a fixed t touch disjoint innovation entries and vectorize.

Proposal scales adapt toward `target_accept` during burn-in only, in
windows of `adapt_window` iterations, and are frozen afterwards so the
retained draws come from a fixed transition kernel.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import model
from ._kernels import u_sweep
from .errors import ConvergenceError
from .grid import Grid
from .model import (Hyperparams, ModelSpec, Observations, ParamState,
                    expand_nu, expand_zeta, latent_anchor, param_shapes)
from .propagator import get_basis

__all__ = [
    "SamplerConfig", "PosteriorSamples", "fit",
    "rhat", "ess", "summarize", "check_convergence",
    "write_samples", "read_samples", "write_summary", "read_summary",
]

_EXP_MAX = 700.0


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 4000
    n_burnin: int = 2000
    n_chains: int = 3
    thin: int = 1
    seed: int = 0
    adapt_window: int = 50
    target_accept: float = 0.35
    initial_scale: float = 0.5
    u_sweeps: int = 2
    n_threads: int = 1

    def __post_init__(self):
        if self.n_iter <= self.n_burnin:
            raise ValueError("n_iter must exceed n_burnin")
        if self.n_burnin < 0 or self.thin < 1 or self.n_chains < 1:
            raise ValueError("bad sampler configuration")
        if self.u_sweeps < 1:
            raise ValueError("u_sweeps must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.n_burnin) // self.thin


# ---------------------------------------------------------------------------
# conjugate machinery
#
# Shared per-scalar reduction: with E = c - theta * g (g zero outside the
# footprint) the Gaussian full conditional of theta under prior N(m0, v0) has
#   prec = 1/v0 + sum(Gt^2)/sigma2,   mean = (m0/v0 + sum(Gt * ct))/prec
# where Gt and ct are the regressor and offset in whatever residual carries
# the Gaussian density (E itself, or eta = E_i - phi E_{i-1} under AR).

def _shared_moments(g, E, phi, sigma2, theta, m0, v0, axis=None):
    """Conditional moments for theta multiplying g across all time rows.

    g, E: (T, S) with g[0] == 0 (row 0 of E never depends on propagator
    coefficients).  Every eta_i = E_i - phi E_{i-1} with i >= 1 is linear in
    theta with regressor Gt_i = g_i - phi g_{i-1}, covering both E_i and
    E_{i-1} contributions at once.  axis=None collapses to a scalar;
    axis=0 keeps per-column moments (valid when the per-column footprints
    are disjoint, as for space-varying nu).
    """
    eta = E[1:] - phi * E[:-1]
    Gt = g[1:] - phi * g[:-1]
    c = eta + theta * Gt
    prec = 1.0 / v0 + (Gt * Gt).sum(axis=axis) / sigma2
    lin = m0 / v0 + (Gt * c).sum(axis=axis) / sigma2
    var = 1.0 / prec
    return lin * var, var


def _row_moments(g_i, E, i, phi, sigma2, theta, m0, v0, reduce_cells):
    """Conditional moments for theta entering innovation row i only.

    eta_i = a - theta g and (when row i+1 exists) eta_{i+1} = b + phi theta g,
    so the draw sees regressors (g, -phi g) against offsets (a, b).  With
    reduce_cells the theta is shared across cells at this time index (a
    scalar); otherwise one theta per cell, valid jointly because the
    (eta_i(s), eta_{i+1}(s)) pairs are disjoint across s.
    """
    T = E.shape[0]
    eta_i = E[i] - phi * E[i - 1]
    a = eta_i + theta * g_i
    prec_dat = g_i * g_i
    lin_dat = g_i * a
    if i + 1 < T:
        eta_n = E[i + 1] - phi * E[i]
        b = eta_n - theta * (phi * g_i)
        prec_dat = prec_dat + (phi * g_i) ** 2
        lin_dat = lin_dat - (phi * g_i) * b
    if reduce_cells:
        prec_dat = prec_dat.sum()
        lin_dat = lin_dat.sum()
    prec = 1.0 / v0 + prec_dat / sigma2
    lin = m0 / v0 + lin_dat / sigma2
    var = 1.0 / prec
    return lin * var, var


def _zeta_gradient(U, dt):
    """dE[i]/dzeta_i = -dt * u_{i-1}; returns -that, the g convention."""
    T, S = U.shape
    g = np.zeros((T, S))
    g[1:] = dt * U[:-1]
    return g


def _nu_gradient(basis, U, which):
    """(T, S) field g with E[i, s] = ... - nu[i, s] * g[i, s]."""
    T, S = U.shape
    cols = basis.n1_cols if which == 1 else basis.n2_cols
    coefs = basis.n1_coefs if which == 1 else basis.n2_coefs
    g = np.zeros((T, S))
    for k in range(2):
        ok = cols[:, k] >= 0
        g[1:, ok] += coefs[ok, k] * U[:-1][:, cols[ok, k]]
    return g


def _delta_gradients(basis, U):
    """(S, T, S) stack; g_all[s, i] = D[s] @ u_{i-1}, zero at i = 0."""
    T, S = U.shape
    g = np.zeros((S, T, S))
    g[:, 1:, :] = np.einsum("qrc,tc->qtr", basis.D, U[:-1])
    return g


def _draw_trunc_pos(rng, mean, sd):
    """One draw from N(mean, sd^2) conditioned on x > 0 (inverse cdf)."""
    a = (0.0 - mean) / sd
    ta = ndtr(a)
    if ta < 1.0 - 1e-12:
        p = ta + rng.random() * (1.0 - ta)
        x = mean + sd * ndtri(p)
        if x > 0:
            return x
    # deep truncation: the remaining normal mass underflows the inverse cdf
    from scipy.stats import truncnorm
    return float(truncnorm.rvs(a, np.inf, loc=mean, scale=sd, random_state=rng))


def _phi_loglik(phi, e0_ss, A, B, C, S, sigma2):
    """Log conditional of phi up to a constant, from innovation cross sums.

    A = sum ||E_i||^2, B = sum <E_i, E_{i-1}>, C = sum ||E_{i-1}||^2 over
    i >= 1; e0_ss = ||E_0||^2.  The stationary initial term contributes
    (S/2) log(1 - phi^2) - (1 - phi^2) e0_ss / (2 sigma2).
    """
    if not abs(phi) < 1.0:
        return -np.inf
    out = 0.5 * S * math.log1p(-phi * phi)
    out -= (1.0 - phi * phi) * e0_ss / (2.0 * sigma2)
    out -= (A - 2.0 * phi * B + phi * phi * C) / (2.0 * sigma2)
    return out


# ---------------------------------------------------------------------------
# chain driver

@dataclass
class _Static:
    """Per-fit constants shared by all chains."""

    grid: Grid
    spec: ModelSpec
    hp: Hyperparams
    obs: Observations
    pop: np.ndarray | None
    basis: object
    counts: np.ndarray      # float64, zeros at missing entries
    mask: np.ndarray        # bool
    logpop: np.ndarray      # zeros when not population-adjusted
    anchor: np.ndarray
    T: int
    S: int


def _make_static(obs, grid, spec, hp, pop):
    T, S = obs.counts.shape
    if S != grid.n_cells:
        raise ValueError(f"counts have {S} cells, grid has {grid.n_cells}")
    if T < 2:
        raise ValueError("need at least two time steps to fit transitions")
    if spec.population_adjusted:
        if pop is None:
            raise ValueError("population-adjusted spec requires a population vector")
        pop = np.asarray(pop, dtype=float)
        if pop.shape != (S,) or (pop <= 0).any():
            raise ValueError("population must be positive with one entry per cell")
        logpop = np.log(pop)
    else:
        pop = None
        logpop = np.zeros(S)
    return _Static(
        grid=grid, spec=spec, hp=hp, obs=obs, pop=pop, basis=get_basis(grid),
        counts=np.ascontiguousarray(np.where(obs.mask, obs.counts, 0), dtype=np.float64),
        mask=np.ascontiguousarray(obs.mask, dtype=np.bool_),
        logpop=np.ascontiguousarray(logpop),
        anchor=np.ascontiguousarray(latent_anchor(obs, spec, pop)),
        T=T, S=S,
    )


def _init_params(st: _Static, rng):
    """Overdispersed start: data-anchored u, prior-centered coefficients."""
    spec, hp = st.spec, st.hp
    shapes = param_shapes(spec, st.T, st.S)

    def jit(*shape):
        return 0.1 * rng.standard_normal(shape)

    U = np.log(st.counts + 1.0) - st.logpop + jit(st.T, st.S)
    delta = np.maximum(hp.delta_mean, 0.01) + np.abs(jit(st.S))
    zeta = hp.zeta_mean + jit(*shapes["zeta"])
    nu1 = nu2 = None
    if spec.nu_present:
        nu1 = hp.nu1_mean + jit(*shapes["nu1"])
        nu2 = hp.nu2_mean + jit(*shapes["nu2"])
    sigma2 = 0.1 * math.exp(float(jit()))
    phi = float(np.clip(jit(), -0.9, 0.9)) if spec.ar_errors else 0.0
    return U, delta, zeta, nu1, nu2, sigma2, phi


def _materialize(st: _Static, delta, zeta, nu1, nu2):
    zf = expand_zeta(zeta, st.T)
    if st.spec.nu_present:
        n1 = expand_nu(nu1, st.T, st.S)
        n2 = expand_nu(nu2, st.T, st.S)
    else:
        n1 = n2 = np.zeros((st.T, st.S))
    return np.ascontiguousarray(st.basis.materialize(delta, zf, n1, n2))


def _refresh_innovations(E, U, H, eps1):
    E[0] = eps1
    E[1:] = U[1:] - np.einsum("tij,tj->ti", H[1:], U[:-1])


@dataclass
class _ChainResult:
    draws: dict
    kept_iters: np.ndarray
    accept_u: float
    accept_phi: float
    scales_burn: np.ndarray
    scales_final: np.ndarray
    phi_scale_burn: float
    phi_scale_final: float


def _run_chain(st: _Static, cfg: SamplerConfig, seed, fix_latent):
    rng = np.random.default_rng(seed)
    spec, hp = st.spec, st.hp
    T, S = st.T, st.S
    dt = st.grid.dt

    U, delta, zeta, nu1, nu2, sigma2, phi = _init_params(st, rng)
    if fix_latent is not None:
        U = np.array(fix_latent, dtype=float)
        if U.shape != (T, S):
            raise ValueError(f"fix_latent must have shape {(T, S)}")
    U = np.ascontiguousarray(U)
    eps1 = np.zeros(S)
    E = np.empty((T, S))

    scales = np.full((T, S), cfg.initial_scale)
    phi_scale = cfg.initial_scale
    win_acc = np.zeros((T, S))
    phi_win_acc = 0
    post_acc = 0.0
    post_prop = 0
    phi_post_acc = 0
    phi_post_prop = 0
    scales_burn = None
    phi_scale_burn = None

    shapes = param_shapes(spec, T, S)
    kept = {
        "u": np.empty((cfg.n_kept, T, S)),
        "delta": np.empty((cfg.n_kept, S)),
        "zeta": np.empty((cfg.n_kept,) + shapes["zeta"]),
        "sigma2": np.empty(cfg.n_kept),
    }
    if spec.nu_present:
        kept["nu1"] = np.empty((cfg.n_kept,) + shapes["nu1"])
        kept["nu2"] = np.empty((cfg.n_kept,) + shapes["nu2"])
    if spec.ar_errors:
        kept["phi"] = np.empty(cfg.n_kept)
        kept["eps"] = np.empty((cfg.n_kept, T, S))
    kept_iters = np.empty(cfg.n_kept, dtype=np.int64)
    k_out = 0

    zv = hp.zeta_var
    zm = hp.zeta_mean

    for it in range(1, cfg.n_iter + 1):
        in_burn = it <= cfg.n_burnin

        H = _materialize(st, delta, zeta, nu1, nu2)
        _refresh_innovations(E, U, H, eps1)

        # --- latent sweep; the latent block mixes slowest, so it gets
        # u_sweeps passes per iteration
        if fix_latent is None:
            acc = np.zeros((T, S), dtype=np.int64)
            for _ in range(cfg.u_sweeps):
                z = rng.standard_normal((T, S))
                lu = np.log(rng.random((T, S)))
                u_sweep(U, E, H, st.basis.col_support,
                        st.basis.col_support_n, st.counts, st.mask,
                        st.logpop, st.anchor, model._INIT_VAR,
                        phi, sigma2, scales, z, lu, acc)
            if in_burn:
                win_acc += acc
                if it % cfg.adapt_window == 0:
                    rate = win_acc / (cfg.adapt_window * cfg.u_sweeps)
                    scales *= np.exp(0.6 * (rate - cfg.target_accept))
                    np.clip(scales, 1e-3, 10.0, out=scales)
                    win_acc[:] = 0
            else:
                post_acc += acc.sum()
                post_prop += T * S * cfg.u_sweeps

        # --- advection coefficients
        if spec.nu_present:
            for which, arr, m0, v0 in ((1, nu1, hp.nu1_mean, hp.nu1_var),
                                       (2, nu2, hp.nu2_mean, hp.nu2_var)):
                g = _nu_gradient(st.basis, U, which)
                nt, ns = arr.shape
                if nt == 1 and ns == 1:
                    mean, var = _shared_moments(g, E, phi, sigma2,
                                                arr[0, 0], m0, v0)
                    new = rng.normal(mean, math.sqrt(var))
                    E += (arr[0, 0] - new) * g
                    arr[0, 0] = new
                elif nt == 1:
                    mean, var = _shared_moments(g, E, phi, sigma2,
                                                arr[0], m0, v0, axis=0)
                    new = rng.normal(mean, np.sqrt(var))
                    E += (arr[0] - new) * g
                    arr[0] = new
                else:
                    # sequential over t: adjacent indices share eta terms under AR
                    arr[0] = rng.normal(m0, math.sqrt(v0), size=ns)
                    for i in range(1, T):
                        th = arr[i] if ns == S else arr[i, 0]
                        mean, var = _row_moments(g[i], E, i, phi, sigma2,
                                                 th, m0, v0,
                                                 reduce_cells=(ns == 1))
                        new = rng.normal(mean, np.sqrt(var))
                        E[i] += (th - new) * g[i]
                        arr[i] = new

        # --- growth coefficient
        gz = _zeta_gradient(U, dt)
        if zeta.shape[0] == 1:
            mean, var = _shared_moments(gz, E, phi, sigma2, zeta[0], zm, zv)
            new = rng.normal(mean, math.sqrt(var))
            E += (zeta[0] - new) * gz
            zeta[0] = new
        else:
            zeta[0] = rng.normal(zm, math.sqrt(zv))
            for i in range(1, T):
                mean, var = _row_moments(gz[i], E, i, phi, sigma2,
                                         zeta[i], zm, zv, reduce_cells=True)
                new = rng.normal(mean, math.sqrt(var))
                E[i] += (zeta[i] - new) * gz[i]
                zeta[i] = new

        # --- diffusion map, sequential: delta[s] couples neighboring rows
        gd = _delta_gradients(st.basis, U)
        for s in range(S):
            mean, var = _shared_moments(gd[s], E, phi, sigma2,
                                        delta[s], hp.delta_mean, hp.delta_var)
            new = _draw_trunc_pos(rng, mean, math.sqrt(var))
            E += (delta[s] - new) * gd[s]
            delta[s] = new

        # --- AR blocks
        if spec.ar_errors:
            # initial innovation: prior (stationary) x eta_1 likelihood
            # collapses to N(phi * E_1, sigma2 I)
            eps1 = phi * E[1] + math.sqrt(sigma2) * rng.standard_normal(S)
            E[0] = eps1

            e0_ss = float(E[0] @ E[0])
            A = float((E[1:] * E[1:]).sum())
            B = float((E[1:] * E[:-1]).sum())
            C = float((E[:-1] * E[:-1]).sum())
            cand = phi + phi_scale * rng.standard_normal()
            lp0 = _phi_loglik(phi, e0_ss, A, B, C, S, sigma2)
            lp1 = _phi_loglik(cand, e0_ss, A, B, C, S, sigma2)
            accepted = math.log(rng.random()) < lp1 - lp0
            if accepted:
                phi = cand
            if in_burn:
                phi_win_acc += accepted
                if it % cfg.adapt_window == 0:
                    rate = phi_win_acc / cfg.adapt_window
                    phi_scale *= math.exp(0.6 * (rate - cfg.target_accept))
                    phi_scale = float(np.clip(phi_scale, 1e-3, 10.0))
                    phi_win_acc = 0
            else:
                phi_post_acc += accepted
                phi_post_prop += 1

        # --- innovation variance
        eta = E[1:] - phi * E[:-1]
        if spec.ar_errors:
            n_terms = T * S
            ssr = float((eta * eta).sum()) + (1.0 - phi * phi) * float(E[0] @ E[0])
        else:
            n_terms = (T - 1) * S
            ssr = float((eta * eta).sum())
        sigma2 = (hp.r + 0.5 * ssr) / rng.gamma(hp.q + 0.5 * n_terms)

        if it == cfg.n_burnin:
            scales_burn = scales.copy()
            phi_scale_burn = phi_scale

        if not in_burn and (it - cfg.n_burnin) % cfg.thin == 0:
            kept["u"][k_out] = U
            kept["delta"][k_out] = delta
            kept["zeta"][k_out] = zeta
            kept["sigma2"][k_out] = sigma2
            if spec.nu_present:
                kept["nu1"][k_out] = nu1
                kept["nu2"][k_out] = nu2
            if spec.ar_errors:
                kept["phi"][k_out] = phi
                kept["eps"][k_out] = E
            kept_iters[k_out] = it
            k_out += 1

    if scales_burn is None:   # n_burnin == 0: nothing ever adapted
        scales_burn = scales.copy()
        phi_scale_burn = phi_scale
    return _ChainResult(
        draws=kept, kept_iters=kept_iters,
        accept_u=post_acc / post_prop if post_prop else float("nan"),
        accept_phi=phi_post_acc / phi_post_prop if phi_post_prop else float("nan"),
        scales_burn=scales_burn, scales_final=scales,
        phi_scale_burn=phi_scale_burn, phi_scale_final=phi_scale,
    )


# ---------------------------------------------------------------------------
# results container

@dataclass
class PosteriorSamples:
    """Stacked post-burn-in draws from all chains.

    draws[name] has shape (n_chains, n_kept, *stored_shape); stored shapes
    follow param_shapes, so shared axes stay collapsed.  Row t of the u
    draws is the latent field at time t+1; eps rows use the same offset.
    """

    spec: ModelSpec
    hp: Hyperparams
    cfg: SamplerConfig
    T: int
    S: int
    draws: dict
    kept_iters: np.ndarray
    accept_u: np.ndarray
    accept_phi: np.ndarray
    scales_burn: np.ndarray
    scales_final: np.ndarray
    phi_scale_burn: np.ndarray
    phi_scale_final: np.ndarray
    _summary: list | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.accept_u.shape[0]

    def mean_state(self) -> ParamState:
        """Posterior-mean parameter point (not a valid sample path: the eps
        rows are means of residuals, not residuals of means)."""
        m = {k: v.mean(axis=(0, 1)) for k, v in self.draws.items()}
        return ParamState(
            u=m["u"], delta=m["delta"], zeta=m["zeta"],
            sigma2=float(m["sigma2"]),
            nu1=m.get("nu1"), nu2=m.get("nu2"),
            phi=float(m.get("phi", 0.0)),
            eps=m.get("eps"),
        )

    def summary(self) -> list:
        if self._summary is None:
            self._summary = summarize(self.draws)
        return self._summary

    def max_rhat(self) -> float:
        vals = [row["rhat"] for row in self.summary()]
        vals = [v for v in vals if np.isfinite(v)]
        return max(vals) if vals else float("nan")


def fit(obs: Observations, grid: Grid, spec: ModelSpec, hp: Hyperparams,
        cfg: SamplerConfig | None = None, population=None,
        fix_latent=None) -> PosteriorSamples:
    """Run `cfg.n_chains` independent chains and stack their draws.

    fix_latent: optional (T, S) array that pins the latent field (no u
    updates); used for conditional-correctness checks.
    """
    cfg = cfg or SamplerConfig()
    st = _make_static(obs, grid, spec, hp, population)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)

    if cfg.n_threads > 1 and cfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as ex:
            results = list(ex.map(
                lambda sd: _run_chain(st, cfg, sd, fix_latent), seeds))
    else:
        results = [_run_chain(st, cfg, sd, fix_latent) for sd in seeds]

    draws = {
        name: np.stack([r.draws[name] for r in results])
        for name in results[0].draws
    }
    return PosteriorSamples(
        spec=spec, hp=hp, cfg=cfg, T=st.T, S=st.S,
        draws=draws,
        kept_iters=results[0].kept_iters,
        accept_u=np.array([r.accept_u for r in results]),
        accept_phi=np.array([r.accept_phi for r in results]),
        scales_burn=np.stack([r.scales_burn for r in results]),
        scales_final=np.stack([r.scales_final for r in results]),
        phi_scale_burn=np.array([r.phi_scale_burn for r in results]),
        phi_scale_final=np.array([r.phi_scale_final for r in results]),
    )


def check_convergence(ps: PosteriorSamples, threshold: float = 1.1) -> float:
    """Return the largest finite split statistic; raise if it exceeds the
    threshold (degenerate NaN entries are ignored, not failures)."""
    worst = ps.max_rhat()
    if np.isfinite(worst) and worst > threshold:
        raise ConvergenceError(
            f"largest split convergence statistic {worst:.4f} exceeds {threshold}")
    return worst


# ---------------------------------------------------------------------------
# diagnostics

def rhat(chains) -> float:
    """Split convergence statistic over (n_chains, n_draws) samples.

    Each chain is halved; W is the mean within-half variance (ddof 1) over
    all 2m halves, and the between term averages, over the two half
    positions, the variance (ddof 1) across chains of the half means.
    sqrt((W + B) / W) is exactly 1 when chains are identical copies, about
    1 + 1/(2h) for iid draws, and grows when chains disagree.  NaN when
    every half is constant.  Chains shorter than 4 are left unsplit.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a (n_chains, n_draws) array")
    m, n = x.shape
    if m < 2 or n < 2:
        raise ValueError("need at least 2 chains with 2 draws each")
    h = n // 2
    if h >= 2:
        pieces = [x[:, :h], x[:, h:2 * h]]
    else:
        pieces = [x]
    W = float(np.mean([p.var(axis=1, ddof=1) for p in pieces]))
    if W == 0.0:
        return float("nan")
    B = float(np.mean([p.mean(axis=1).var(ddof=1) for p in pieces]))
    return math.sqrt((W + B) / W)


def ess(chains) -> float:
    """Effective sample size: Geyer initial-positive-sequence estimate of
    the autocorrelation time per chain, summed over chains.  NaN for
    constant or too-short chains."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        return float("nan")
    total = 0.0
    for c in range(m):
        v = x[c] - x[c].mean()
        acov = np.fft.irfft(np.abs(np.fft.rfft(v, 2 * n)) ** 2)[:n] / n
        if acov[0] <= 0:
            return float("nan")
        rho = acov / acov[0]
        tau = 1.0
        k = 1
        while k + 1 < n:
            pair = rho[k] + rho[k + 1]
            if pair < 0:
                break
            tau += 2.0 * pair
            k += 2
        total += n / tau
    return total


_PARAM_ORDER = ("delta", "zeta", "nu1", "nu2", "sigma2", "phi", "eps", "u")


def _index_labels(name, shape):
    """Labels for the flattened stored axes of one parameter block.

    delta: cell id (1-based).  zeta and nu use the stored transition index
    (0-based; index 0 is prior-only because the first transition predates
    the data).  u and eps use "t-s" with t the 1-based time of the field /
    innovation target.  Scalars get an empty label.
    """
    if name == "delta":
        return [str(s + 1) for s in range(shape[0])]
    if name == "zeta":
        return [str(t) for t in range(shape[0])]
    if name in ("nu1", "nu2"):
        nt, ns = shape
        return [f"{t}-{s + 1}" for t in range(nt) for s in range(ns)]
    if name in ("u", "eps"):
        T, S = shape
        return [f"{t + 1}-{s + 1}" for t in range(T) for s in range(S)]
    return [""]


def _scalar_stats(x) -> dict:
    """Summary row body for one scalar's (n_chains, n_draws) sample block."""
    flat = x.reshape(-1)
    q = np.percentile(flat, [2.5, 50.0, 97.5])
    m, n = x.shape
    if m >= 2 and n >= 2:
        r = rhat(x)
    else:
        r = float("nan")
    return {
        "mean": float(flat.mean()),
        "sd": float(flat.std(ddof=1)) if flat.size > 1 else float("nan"),
        "q2.5": float(q[0]), "q50": float(q[1]), "q97.5": float(q[2]),
        "rhat": float(r), "ess": float(ess(x)),
    }


def summarize(draws: dict) -> list:
    """Flatten a draws dict into ordered per-scalar summary rows."""
    rows = []
    for name in _PARAM_ORDER:
        if name not in draws:
            continue
        x = draws[name]
        shape = x.shape[2:]
        flat = x.reshape(x.shape[0], x.shape[1], -1)
        for j, label in enumerate(_index_labels(name, shape)):
            row = {"param": name, "index": label}
            row.update(_scalar_stats(flat[:, :, j]))
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# file formats

def write_samples(ps: PosteriorSamples, path, params=None) -> None:
    """Long-format dump: chain,iter,param,index,value (one row per scalar
    per kept iteration; the latent block dominates the size)."""
    names = [n for n in _PARAM_ORDER if n in ps.draws]
    if params is not None:
        names = [n for n in names if n in params]
    with open(path, "w") as fh:
        fh.write("chain,iter,param,index,value\n")
        for name in names:
            x = ps.draws[name]
            labels = _index_labels(name, x.shape[2:])
            flat = x.reshape(x.shape[0], x.shape[1], -1)
            for c in range(flat.shape[0]):
                for k in range(flat.shape[1]):
                    it = ps.kept_iters[k]
                    for j, label in enumerate(labels):
                        fh.write(f"{c + 1},{it},{name},{label},"
                                 f"{float(flat[c, k, j])!r}\n")


def read_samples(path) -> dict:
    """Parse a samples file into {(param, index): (n_chains, n_draws)}."""
    from .errors import DataError
    per = {}
    with open(path) as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                if header != "chain,iter,param,index,value":
                    raise DataError(f"unexpected samples header: {header!r}")
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DataError(f"line {lineno}: expected 5 fields")
            chain, _, name, label, value = parts
            per.setdefault((name, label), {}).setdefault(int(chain), []) \
               .append(float(value))
    if header is None:
        raise DataError(f"{path}: no samples header found")
    out = {}
    for key, by_chain in per.items():
        lens = {len(v) for v in by_chain.values()}
        if len(lens) != 1:
            raise DataError(f"ragged chains for {key}")
        out[key] = np.array([by_chain[c] for c in sorted(by_chain)])
    return out


_SUMMARY_HEADER = "param,index,mean,sd,q2.5,q50,q97.5,rhat,ess"


def write_summary(rows: list, path) -> None:
    with open(path, "w") as fh:
        fh.write(_SUMMARY_HEADER + "\n")
        for r in rows:
            fh.write(",".join([r["param"], r["index"]] +
                              [f"{float(r[k])!r}" for k in
                               ("mean", "sd", "q2.5", "q50", "q97.5",
                                "rhat", "ess")]) + "\n")


def read_summary(path) -> list:
    from .errors import DataError
    rows = []
    with open(path) as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                if header != _SUMMARY_HEADER:
                    raise DataError(f"unexpected summary header: {header!r}")
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise DataError(f"line {lineno}: expected 9 fields")
            row = {"param": parts[0], "index": parts[1]}
            for k, v in zip(("mean", "sd", "q2.5", "q50", "q97.5",
                             "rhat", "ess"), parts[2:]):
                row[k] = float(v)
            rows.append(row)
    if header is None:
        raise DataError(f"{path}: no summary header found")
    return rows
