"""Hierarchical count model: Poisson observations over a latent log-intensity
field driven by the advection-diffusion-reaction propagator.

    n(t,s) | u      ~ Poisson(lambda(t,s)),  lambda = exp(u)  or  pop*exp(u)
    u_t             = H(delta, zeta_{t-1}, nu_{t-1}) u_{t-1} + eps_t
    eps_t           ~ N(0, sigma2 I)   iid over t, or AR(1):
                      eps_t = phi eps_{t-1} + eta_t,  eta_t ~ N(0, sigma2 I)

Observed vectors are n_1..n_T; u_1 is a parameter with a diffuse prior
anchored at the first observation (see latent_init_logpdf); transitions run
t = 2..T, consuming zeta/nu indices 1..T-1 (index 0 only feeds a simulator's
u_0 -> u_1 step, so it is prior-only under a fit).

Parameter priors: zeta and nu components normal, delta(s) >= 0 truncated
normal (renormalized), sigma2 inverse-gamma(q, r), phi uniform on (-1, 1).
Under AR errors eps_1 is a free parameter with its stationary distribution
N(0, sigma2/(1-phi^2) I) as a factor of the process density.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import NumericError
from .grid import Grid
from .propagator import StencilBasis, get_basis

__all__ = [
    "ModelSpec", "Hyperparams", "ParamState", "Observations",
    "MODEL_PRESETS", "HYPERPARAM_PRESETS", "model_preset", "hyperparam_preset",
    "log_intensity", "obs_loglik", "process_loglik", "log_prior",
    "latent_init_logpdf", "log_posterior", "transition_matrices",
    "expand_zeta", "expand_nu", "read_counts", "write_counts",
]

# exp(u) overflows float64 just above this
_EXP_MAX = 700.0
_INIT_VAR = 10.0     # diffuse variance of the u_1 anchor prior


# ---------------------------------------------------------------------------
# specs and hyperparameters

@dataclass(frozen=True)
class ModelSpec:
    """Structural flags. delta is always spatial; zeta is never spatial."""

    nu_present: bool = True
    nu_time_varying: bool = False
    nu_space_varying: bool = True
    zeta_time_varying: bool = False
    population_adjusted: bool = False
    ar_errors: bool = False

    def __post_init__(self):
        if not self.nu_present and (self.nu_time_varying or not self.nu_space_varying):
            # nu flags are meaningless without nu; normalize so specs compare equal
            object.__setattr__(self, "nu_time_varying", False)
            object.__setattr__(self, "nu_space_varying", True)


MODEL_PRESETS: dict[str, ModelSpec] = {
    "wikle": ModelSpec(nu_present=False, zeta_time_varying=False),
    "m1": ModelSpec(nu_present=True, nu_time_varying=False, nu_space_varying=True),
    "m2": ModelSpec(nu_present=True, nu_time_varying=False, nu_space_varying=True,
                    zeta_time_varying=True),
    "m3": ModelSpec(nu_present=True, nu_time_varying=True, nu_space_varying=True,
                    zeta_time_varying=True),
    "m4": ModelSpec(nu_present=True, nu_time_varying=True, nu_space_varying=True,
                    zeta_time_varying=True, population_adjusted=True),
    "m5": ModelSpec(nu_present=True, nu_time_varying=True, nu_space_varying=True,
                    zeta_time_varying=True, population_adjusted=True, ar_errors=True),
}


def model_preset(name: str) -> ModelSpec:
    try:
        return MODEL_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}"
        ) from None


@dataclass(frozen=True)
class Hyperparams:
    nu1_mean: float = 0.0
    nu1_var: float = 0.1
    nu2_mean: float = 0.0
    nu2_var: float = 0.1
    zeta_mean: float = 0.0
    zeta_var: float = 0.1
    delta_mean: float = 0.0
    delta_var: float = 0.1
    q: float = 0.001
    r: float = 0.001

    def __post_init__(self):
        for name in ("nu1_var", "nu2_var", "zeta_var", "delta_var", "q", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


HYPERPARAM_PRESETS: dict[str, Hyperparams] = {
    # tight set used when generating/fitting the synthetic scenarios
    "sim": Hyperparams(),
    # vague sets for prior-sensitivity comparison
    "set1": Hyperparams(nu1_var=10, nu2_var=10, zeta_var=10, delta_var=10),
    "set2": Hyperparams(nu1_var=100, nu2_var=100, zeta_var=100, delta_var=100),
    "set3": Hyperparams(nu1_mean=0.1, nu2_mean=0.1, zeta_mean=0.1, delta_mean=0.1,
                        nu1_var=10, nu2_var=10, zeta_var=10, delta_var=10),
}


def hyperparam_preset(name: str) -> Hyperparams:
    try:
        return HYPERPARAM_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown hyperparameter preset {name!r}; choose from {sorted(HYPERPARAM_PRESETS)}"
        ) from None


# ---------------------------------------------------------------------------
# state

def param_shapes(spec: ModelSpec, T: int, S: int) -> dict[str, tuple]:
    """Canonical stored shapes; shared axes collapse to length 1."""
    shapes = {
        "u": (T, S),
        "delta": (S,),
        "zeta": (T,) if spec.zeta_time_varying else (1,),
    }
    if spec.nu_present:
        nt = T if spec.nu_time_varying else 1
        ns = S if spec.nu_space_varying else 1
        shapes["nu1"] = (nt, ns)
        shapes["nu2"] = (nt, ns)
    if spec.ar_errors:
        shapes["eps"] = (T, S)
    return shapes


def expand_zeta(zeta: np.ndarray, T: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(zeta, dtype=float), (T,))


def expand_nu(nu: np.ndarray, T: int, S: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(nu, dtype=float), (T, S))


@dataclass
class ParamState:
    """One point in parameter space.

    Stored shapes follow param_shapes: zeta (T,) or (1,); nu1/nu2 2-D with
    length-1 shared axes; eps only under AR errors, where eps[0] is the free
    initial innovation and rows 1..T-1 must equal the residuals implied by u
    (validate() checks).  sigma2 > 0, |phi| < 1 (phi fixed 0 without AR).
    """

    u: np.ndarray
    delta: np.ndarray
    zeta: np.ndarray
    sigma2: float
    nu1: np.ndarray | None = None
    nu2: np.ndarray | None = None
    phi: float = 0.0
    eps: np.ndarray | None = None

    def copy(self) -> "ParamState":
        return ParamState(
            u=self.u.copy(), delta=self.delta.copy(), zeta=np.array(self.zeta),
            sigma2=self.sigma2,
            nu1=None if self.nu1 is None else np.array(self.nu1),
            nu2=None if self.nu2 is None else np.array(self.nu2),
            phi=self.phi,
            eps=None if self.eps is None else self.eps.copy(),
        )

    def validate(self, grid: Grid, spec: ModelSpec) -> None:
        T, S = self.u.shape
        if S != grid.n_cells:
            raise ValueError(f"u has {S} cells, grid has {grid.n_cells}")
        shapes = param_shapes(spec, T, S)
        for name in ("delta", "zeta", "nu1", "nu2", "eps"):
            want = shapes.get(name)
            have = getattr(self, name)
            if want is None:
                if have is not None:
                    raise ValueError(f"{name} set but not part of this model spec")
                continue
            if have is None or np.asarray(have).shape != want:
                raise ValueError(f"{name} must have shape {want}")
        if (np.asarray(self.delta) < 0).any():
            raise ValueError("delta must be nonnegative")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if spec.ar_errors:
            if not abs(self.phi) < 1:
                raise ValueError("phi must lie in (-1, 1)")
            resid = residuals(self, grid, spec)
            if not np.allclose(self.eps[1:], resid[1:], atol=1e-8):
                raise ValueError("eps rows 1..T-1 inconsistent with u and the propagator")
        elif self.phi != 0.0:
            raise ValueError("phi must be 0 without AR errors")


# ---------------------------------------------------------------------------
# observations

@dataclass
class Observations:
    """Counts (T, S) with an observed-mask; mask False = missing."""

    counts: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.mask is None:
            self.mask = np.ones(self.counts.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.counts.shape != self.mask.shape or self.counts.ndim != 2:
            raise ValueError("counts and mask must share a (T, S) shape")
        if (self.counts[self.mask] < 0).any():
            raise ValueError("counts must be nonnegative")

    @property
    def T(self) -> int:
        return self.counts.shape[0]

    @property
    def S(self) -> int:
        return self.counts.shape[1]


def write_counts(obs: Observations, path) -> None:
    """CSV `t,cell,count`, 1-based labels; missing entries are omitted."""
    with open(path, "w") as fh:
        fh.write("t,cell,count\n")
        for t in range(obs.T):
            for s in range(obs.S):
                if obs.mask[t, s]:
                    fh.write(f"{t + 1},{s + 1},{int(obs.counts[t, s])}\n")


def read_counts(path, n_cells: int) -> Observations:
    from .errors import DataError
    rows = []
    with open(path) as fh:
        header = None
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if header is None:
                header = ln
                if header.replace(" ", "") != "t,cell,count":
                    raise DataError(f"{path}: expected header 't,cell,count'")
                continue
            parts = ln.split(",")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except (ValueError, IndexError):
                raise DataError(f"{path}: bad count row {ln!r}") from None
    if not rows:
        raise DataError(f"{path}: no count rows")
    T = max(r[0] for r in rows)
    counts = np.zeros((T, n_cells), dtype=np.int64)
    mask = np.zeros((T, n_cells), dtype=bool)
    for t, c, n in rows:
        if not (1 <= t and 1 <= c <= n_cells):
            raise DataError(f"{path}: row ({t},{c}) outside t>=1, cell 1..{n_cells}")
        if n < 0:
            raise DataError(f"{path}: negative count at t={t}, cell={c}")
        counts[t - 1, c - 1] = n
        mask[t - 1, c - 1] = True
    return Observations(counts=counts, mask=mask)


# ---------------------------------------------------------------------------
# densities

def log_intensity(u: np.ndarray, pop: np.ndarray | None = None) -> np.ndarray:
    """lambda = exp(u) or pop * exp(u); rejects non-finite u and overflow."""
    u = np.asarray(u, dtype=float)
    if not np.isfinite(u).all():
        raise NumericError("log-intensity field contains non-finite values")
    if pop is None:
        z = u
    else:
        pop = np.asarray(pop, dtype=float)
        if (pop <= 0).any():
            raise ValueError("populations must be positive")
        z = u + np.log(pop)
    if (z > _EXP_MAX).any():
        t = np.unravel_index(int(np.argmax(z)), z.shape)
        raise NumericError(f"intensity overflow at index {t}: log-intensity {z[t]:.3g}")
    return np.exp(z)


def obs_loglik(counts: np.ndarray, lam: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Sum of Poisson log-pmfs over observed entries."""
    counts = np.asarray(counts)
    lam = np.asarray(lam, dtype=float)
    if counts.shape != lam.shape:
        raise ValueError("counts and intensities must share a shape")
    if (lam < 0).any():
        raise ValueError("intensities must be nonnegative")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        counts, lam = counts[mask], lam[mask]
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    return float(np.sum(xlogy(counts, lam) - lam - gammaln(counts + 1.0)))


def transition_matrices(state: ParamState, grid: Grid, spec: ModelSpec) -> np.ndarray:
    """Dense H_t stack, index t = 0..T-1; the fit consumes rows 1..T-1."""
    T, S = state.u.shape
    basis = get_basis(grid)
    zeta = expand_zeta(state.zeta, T)
    if spec.nu_present:
        nu1 = expand_nu(state.nu1, T, S)
        nu2 = expand_nu(state.nu2, T, S)
    else:
        nu1 = nu2 = np.zeros((T, S))
    return basis.materialize(state.delta, zeta, nu1, nu2)


def residuals(state: ParamState, grid: Grid, spec: ModelSpec,
              H: np.ndarray | None = None) -> np.ndarray:
    """(T, S) innovation matrix; row 0 is eps_1 (AR) or zeros (iid)."""
    T, S = state.u.shape
    if H is None:
        H = transition_matrices(state, grid, spec)
    E = np.zeros((T, S))
    for i in range(1, T):
        E[i] = state.u[i] - H[i] @ state.u[i - 1]
    if spec.ar_errors and state.eps is not None:
        E[0] = state.eps[0]
    return E


def _gauss(x: np.ndarray, var: float) -> float:
    x = np.asarray(x, dtype=float)
    return float(-0.5 * x.size * np.log(2.0 * np.pi * var) - 0.5 * np.sum(x * x) / var)


def process_loglik(state: ParamState, grid: Grid, spec: ModelSpec) -> float:
    """Log density of the innovations given the propagator parameters.

    iid: sum over t=2..T of N(eps_t; 0, sigma2 I).  AR(1): stationary
    N(eps_1; 0, sigma2/(1-phi^2) I) plus N(eta_t; 0, sigma2 I) for the
    differences eta_t = eps_t - phi eps_{t-1}; this sequential form equals
    the dense joint Gaussian over all T*S innovations (checked in tests).
    """
    T, S = state.u.shape
    E = residuals(state, grid, spec)
    if not spec.ar_errors:
        if T < 2:
            return 0.0
        return _gauss(E[1:], state.sigma2)
    out = _gauss(E[0], state.sigma2 / (1.0 - state.phi ** 2))
    if T >= 2:
        out += _gauss(E[1:] - state.phi * E[:-1], state.sigma2)
    return out


def _trunc_normal_logpdf(x: np.ndarray, mean: float, var: float) -> float:
    """Normal(mean, var) truncated to x >= 0, renormalized."""
    x = np.asarray(x, dtype=float)
    if (x < 0).any():
        return -np.inf
    sd = np.sqrt(var)
    from scipy.stats import norm
    log_tail = norm.logsf(-mean / sd)     # log P(X >= 0) under the untruncated law
    return float(np.sum(norm.logpdf(x, mean, sd) - log_tail))


def _invgamma_logpdf(x: float, q: float, r: float) -> float:
    if not x > 0:
        return -np.inf
    return float(q * np.log(r) - gammaln(q) - (q + 1.0) * np.log(x) - r / x)


def log_prior(state: ParamState, hp: Hyperparams, spec: ModelSpec) -> float:
    """Prior over every stored scalar block (u is not a prior term here)."""
    out = _gauss(np.asarray(state.zeta) - hp.zeta_mean, hp.zeta_var)
    if spec.nu_present:
        out += _gauss(np.asarray(state.nu1) - hp.nu1_mean, hp.nu1_var)
        out += _gauss(np.asarray(state.nu2) - hp.nu2_mean, hp.nu2_var)
    out += _trunc_normal_logpdf(state.delta, hp.delta_mean, hp.delta_var)
    out += _invgamma_logpdf(state.sigma2, hp.q, hp.r)
    if spec.ar_errors:
        out += -np.log(2.0) if abs(state.phi) < 1 else -np.inf
    return float(out)


def latent_anchor(obs: Observations, spec: ModelSpec,
                  pop: np.ndarray | None = None) -> np.ndarray:
    """Center of the diffuse u_1 prior: log(n_1 + 1), minus log pop when
    population-adjusted; missing first-month cells anchor at n = 0."""
    n1 = np.where(obs.mask[0], obs.counts[0], 0)
    a = np.log(n1 + 1.0)
    if spec.population_adjusted:
        if pop is None:
            raise ValueError("population-adjusted spec requires pop")
        a = a - np.log(np.asarray(pop, dtype=float))
    return a


def latent_init_logpdf(u1: np.ndarray, obs: Observations, spec: ModelSpec,
                       pop: np.ndarray | None = None) -> float:
    return _gauss(np.asarray(u1) - latent_anchor(obs, spec, pop), _INIT_VAR)


def log_posterior(state: ParamState, obs: Observations, grid: Grid,
                  hp: Hyperparams, spec: ModelSpec,
                  pop: np.ndarray | None = None) -> float:
    """obs_loglik summed over t + process_loglik + log_prior + the u_1 anchor."""
    if spec.population_adjusted and pop is None:
        raise ValueError("population-adjusted spec requires pop")
    lam = log_intensity(state.u, pop if spec.population_adjusted else None)
    out = obs_loglik(obs.counts, lam, obs.mask)
    out += process_loglik(state, grid, spec)
    out += log_prior(state, hp, spec)
    out += latent_init_logpdf(state.u[0], obs, spec,
                              pop if spec.population_adjusted else None)
    return float(out)
