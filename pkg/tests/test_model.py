import numpy as np
import pytest
from scipy import stats

from epigrid.errors import DataError, NumericError
from epigrid.grid import make_rect_grid
from epigrid.model import (
    HYPERPARAM_PRESETS, MODEL_PRESETS, Hyperparams, ModelSpec, Observations,
    ParamState, hyperparam_preset, latent_anchor, latent_init_logpdf,
    log_intensity, log_posterior, log_prior, model_preset, obs_loglik,
    param_shapes, process_loglik, read_counts, residuals, transition_matrices,
    write_counts,
)
from epigrid.propagator import build

from oracles import ar1_joint_logpdf


def make_state(grid, spec, T, rng, sigma2=0.5, phi=0.0):
    S = grid.n_cells
    shapes = param_shapes(spec, T, S)
    st_ = ParamState(
        u=rng.normal(size=(T, S)),
        delta=rng.uniform(0.0, 0.3, size=S),
        zeta=rng.normal(0, 0.2, size=shapes["zeta"]),
        sigma2=sigma2,
        nu1=rng.normal(0, 0.2, size=shapes["nu1"]) if spec.nu_present else None,
        nu2=rng.normal(0, 0.2, size=shapes["nu2"]) if spec.nu_present else None,
        phi=phi if spec.ar_errors else 0.0,
    )
    if spec.ar_errors:
        E = residuals(st_, grid, spec)
        E[0] = rng.normal(0, 0.3, size=S)
        st_.eps = E
    return st_


# --- presets -------------------------------------------------------------------

def test_model_presets_table():
    assert set(MODEL_PRESETS) == {"wikle", "m1", "m2", "m3", "m4", "m5"}
    w = model_preset("wikle")
    assert not w.nu_present and not w.zeta_time_varying and not w.ar_errors
    m1 = model_preset("m1")
    assert m1.nu_present and m1.nu_space_varying and not m1.nu_time_varying
    assert not m1.zeta_time_varying
    m2 = model_preset("m2")
    assert m2.zeta_time_varying and not m2.nu_time_varying
    m3 = model_preset("m3")
    assert m3.zeta_time_varying and m3.nu_time_varying and m3.nu_space_varying
    assert not m3.population_adjusted and not m3.ar_errors
    m4 = model_preset("m4")
    assert m4.population_adjusted and not m4.ar_errors
    m5 = model_preset("m5")
    assert m5.population_adjusted and m5.ar_errors
    with pytest.raises(ValueError, match="m1"):
        model_preset("m7")


def test_hyperparam_presets():
    sim = hyperparam_preset("sim")
    assert sim.zeta_var == sim.delta_var == sim.nu1_var == 0.1
    assert sim.q == sim.r == 0.001
    assert hyperparam_preset("set1").zeta_var == 10
    assert hyperparam_preset("set2").delta_var == 100
    s3 = hyperparam_preset("set3")
    assert s3.zeta_mean == s3.delta_mean == 0.1 and s3.zeta_var == 10
    with pytest.raises(ValueError):
        hyperparam_preset("set9")
    with pytest.raises(ValueError):
        Hyperparams(zeta_var=0.0)
    with pytest.raises(ValueError):
        Hyperparams(q=-1)


def test_param_shapes_collapse():
    spec = model_preset("m3")
    shapes = param_shapes(spec, 7, 4)
    assert shapes["zeta"] == (7,) and shapes["nu1"] == (7, 4)
    shapes = param_shapes(model_preset("m1"), 7, 4)
    assert shapes["zeta"] == (1,) and shapes["nu1"] == (1, 4)
    shapes = param_shapes(model_preset("wikle"), 7, 4)
    assert "nu1" not in shapes and "eps" not in shapes
    assert "eps" in param_shapes(model_preset("m5"), 7, 4)


# --- intensities and observations ------------------------------------------------

def test_log_intensity_values():
    np.testing.assert_allclose(log_intensity(np.zeros(3)), 1.0)
    np.testing.assert_allclose(log_intensity(np.log(5.0) * np.ones(2)), 5.0)
    np.testing.assert_allclose(
        log_intensity(np.zeros(2), pop=np.array([100.0, 7.0])), [100.0, 7.0])


def test_log_intensity_errors():
    with pytest.raises(NumericError):
        log_intensity(np.array([0.0, np.nan]))
    with pytest.raises(NumericError):
        log_intensity(np.array([10.0, 800.0]))
    with pytest.raises(NumericError):
        log_intensity(np.array([500.0]), pop=np.array([1e100]))
    with pytest.raises(ValueError):
        log_intensity(np.zeros(2), pop=np.array([1.0, 0.0]))


def test_obs_loglik_pinned():
    assert obs_loglik(np.array([0]), np.array([1.0])) == pytest.approx(-1.0)
    assert obs_loglik(np.array([1]), np.array([1.0])) == pytest.approx(-1.0)
    want = stats.poisson.logpmf(3, 2.5)
    assert obs_loglik(np.array([3]), np.array([2.5])) == pytest.approx(want, abs=1e-12)


def test_obs_loglik_matches_scipy(rng):
    n = rng.poisson(4.0, size=40)
    lam = rng.uniform(0.1, 9.0, size=40)
    want = stats.poisson.logpmf(n, lam).sum()
    assert obs_loglik(n, lam) == pytest.approx(want, abs=1e-10)


def test_obs_loglik_permutation_invariant(rng):
    n = rng.poisson(3.0, size=30)
    lam = rng.uniform(0.5, 5.0, size=30)
    per = rng.permutation(30)
    assert obs_loglik(n, lam) == pytest.approx(obs_loglik(n[per], lam[per]), abs=1e-10)


def test_obs_loglik_mask_and_errors(rng):
    n = np.array([2, 5, 1])
    lam = np.array([1.0, 2.0, 3.0])
    mask = np.array([True, False, True])
    want = stats.poisson.logpmf(n[mask], lam[mask]).sum()
    assert obs_loglik(n, lam, mask) == pytest.approx(want)
    with pytest.raises(ValueError):
        obs_loglik(np.array([-1]), np.array([1.0]))
    with pytest.raises(ValueError):
        obs_loglik(np.array([1, 2]), np.array([1.0]))
    with pytest.raises(ValueError):
        obs_loglik(np.array([1]), np.array([-0.5]))


def test_observations_validation():
    with pytest.raises(ValueError):
        Observations(counts=np.array([[-1, 2]]), mask=np.ones((1, 2), bool))
    # negative counts under a False mask are tolerated (missing)
    obs = Observations(counts=np.array([[-1, 2]]), mask=np.array([[False, True]]))
    assert obs.T == 1 and obs.S == 2


def test_counts_round_trip(tmp_path, rng):
    counts = rng.poisson(5.0, size=(4, 3))
    mask = rng.random((4, 3)) < 0.8
    mask[0, 0] = True
    obs = Observations(counts=np.where(mask, counts, 0), mask=mask)
    p = tmp_path / "counts.csv"
    write_counts(obs, p)
    back = read_counts(p, 3)
    assert back.T == 4
    np.testing.assert_array_equal(back.mask, mask)
    np.testing.assert_array_equal(back.counts[mask], obs.counts[mask])


def test_read_counts_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("t,cell,count\n")
    with pytest.raises(DataError):
        read_counts(p, 2)
    p.write_text("t,cell,count\n1,5,2\n")
    with pytest.raises(DataError):
        read_counts(p, 2)
    p.write_text("t,cell,count\n1,1,-3\n")
    with pytest.raises(DataError):
        read_counts(p, 2)
    p.write_text("bad\n1,1,1\n")
    with pytest.raises(DataError):
        read_counts(p, 2)


# --- process density ---------------------------------------------------------------

def test_process_loglik_single_cell_identity():
    g = make_rect_grid(1, 1)
    spec = ModelSpec(nu_present=False)
    st_ = ParamState(u=np.zeros((2, 1)), delta=np.zeros(1), zeta=np.zeros(1),
                     sigma2=1.0)
    # H = I at zero coefficients, u stays put: one N(0|0,1) term
    assert process_loglik(st_, g, spec) == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_process_loglik_exact_propagation(grid3, rng):
    spec = model_preset("m3")
    T, S = 5, 9
    delta = rng.uniform(0, 0.2, S)
    zeta = rng.normal(0, 0.1, T)
    nu1 = rng.normal(0, 0.1, (T, S))
    nu2 = rng.normal(0, 0.1, (T, S))
    u = np.empty((T, S))
    u[0] = rng.normal(size=S)
    for i in range(1, T):
        u[i] = build(grid3, delta, zeta[i], nu1[i], nu2[i]).apply(u[i - 1])
    st_ = ParamState(u=u, delta=delta, zeta=zeta, sigma2=0.1, nu1=nu1, nu2=nu2)
    want = (T - 1) * S * stats.norm.logpdf(0.0, scale=np.sqrt(0.1))
    assert process_loglik(st_, grid3, spec) == pytest.approx(want, rel=1e-12)


def test_process_loglik_matches_dense_gaussian(grid3, rng):
    spec = model_preset("m3")
    st_ = make_state(grid3, spec, T=4, rng=rng, sigma2=0.37)
    E = residuals(st_, grid3, spec)[1:]
    want = stats.multivariate_normal(
        mean=np.zeros(E.size), cov=0.37 * np.eye(E.size)).logpdf(E.ravel())
    assert process_loglik(st_, grid3, spec) == pytest.approx(want, rel=1e-10)


def test_process_loglik_ar_matches_joint_covariance(grid3, rng):
    spec = model_preset("m5")
    st_ = make_state(grid3, spec, T=5, rng=rng, sigma2=0.21, phi=0.4)
    E = residuals(st_, grid3, spec)
    E[0] = st_.eps[0]
    want = ar1_joint_logpdf(E, 0.21, 0.4)
    assert process_loglik(st_, grid3, spec) == pytest.approx(want, rel=1e-9)


def test_process_loglik_monotone_in_residual(grid3):
    spec = ModelSpec(nu_present=False)
    base = ParamState(u=np.zeros((3, 9)), delta=np.zeros(9), zeta=np.zeros(1),
                      sigma2=0.5)
    bumped = base.copy()
    bumped.u[2, 4] = 1.0
    assert process_loglik(bumped, grid3, spec) < process_loglik(base, grid3, spec)


# --- priors --------------------------------------------------------------------------

def test_log_prior_matches_scipy(grid3, rng):
    spec = model_preset("m5")
    hp = Hyperparams(nu1_mean=0.05, nu1_var=0.3, nu2_mean=-0.1, nu2_var=0.2,
                     zeta_mean=0.02, zeta_var=0.15, delta_mean=0.1,
                     delta_var=0.4, q=1.5, r=0.7)
    st_ = make_state(grid3, spec, T=4, rng=rng, sigma2=0.8, phi=0.3)
    sd = np.sqrt(hp.delta_var)
    a = (0 - hp.delta_mean) / sd
    want = (
        stats.norm.logpdf(st_.zeta, hp.zeta_mean, np.sqrt(hp.zeta_var)).sum()
        + stats.norm.logpdf(st_.nu1, hp.nu1_mean, np.sqrt(hp.nu1_var)).sum()
        + stats.norm.logpdf(st_.nu2, hp.nu2_mean, np.sqrt(hp.nu2_var)).sum()
        + stats.truncnorm.logpdf(st_.delta, a, np.inf, hp.delta_mean, sd).sum()
        + stats.invgamma.logpdf(st_.sigma2, hp.q, scale=hp.r)
        - np.log(2.0)
    )
    assert log_prior(st_, hp, spec) == pytest.approx(want, rel=1e-10)


def test_log_prior_half_normal_at_zero(grid3):
    # delta prior with mean 0 truncated at 0 doubles the normal density
    spec = ModelSpec(nu_present=False)
    hp = Hyperparams()
    st_ = ParamState(u=np.zeros((2, 9)), delta=np.zeros(9),
                     zeta=np.array([0.0]), sigma2=0.1)
    got = log_prior(st_, hp, spec)
    delta_part = 9 * (np.log(2.0) + stats.norm.logpdf(0.0, 0.0, np.sqrt(0.1)))
    rest = (stats.norm.logpdf(0.0, 0.0, np.sqrt(0.1))
            + stats.invgamma.logpdf(0.1, 0.001, scale=0.001))
    assert got == pytest.approx(delta_part + rest, rel=1e-10)


def test_log_prior_negative_delta_is_impossible(grid3):
    spec = ModelSpec(nu_present=False)
    st_ = ParamState(u=np.zeros((2, 9)), delta=np.full(9, -0.1),
                     zeta=np.array([0.0]), sigma2=0.1)
    assert log_prior(st_, Hyperparams(), spec) == -np.inf


# --- posterior assembly -----------------------------------------------------------

def test_log_posterior_is_sum_of_factors(grid3, rng):
    spec = model_preset("m4")
    hp = hyperparam_preset("set1")
    T, S = 4, 9
    st_ = make_state(grid3, spec, T=T, rng=rng)
    pop = rng.uniform(50, 200, size=S)
    counts = rng.poisson(3.0, size=(T, S))
    mask = rng.random((T, S)) < 0.9
    obs = Observations(counts=counts, mask=mask)

    lam = pop[None, :] * np.exp(st_.u)
    want = (stats.poisson.logpmf(counts, lam)[mask].sum()
            + process_loglik(st_, grid3, spec)
            + log_prior(st_, hp, spec)
            + stats.norm.logpdf(
                st_.u[0],
                np.log(np.where(mask[0], counts[0], 0) + 1.0) - np.log(pop),
                np.sqrt(10.0)).sum())
    got = log_posterior(st_, obs, grid3, hp, spec, pop=pop)
    assert got == pytest.approx(want, rel=1e-10)


def test_latent_anchor_values():
    obs = Observations(counts=np.array([[9, 0]]), mask=np.array([[True, False]]))
    spec = ModelSpec(nu_present=False)
    np.testing.assert_allclose(latent_anchor(obs, spec), [np.log(10.0), 0.0])
    pa = model_preset("m4")
    np.testing.assert_allclose(
        latent_anchor(obs, pa, pop=np.array([5.0, 2.0])),
        [np.log(10.0) - np.log(5.0), -np.log(2.0)])
    got = latent_init_logpdf(np.zeros(2), obs, spec)
    want = stats.norm.logpdf([np.log(10.0), 0.0], 0.0, np.sqrt(10.0)).sum()
    assert got == pytest.approx(want)


def test_collapsed_and_expanded_likelihood_agree(grid3, rng):
    """A time-varying state with all-equal entries must produce the same
    likelihood terms as the collapsed shared-parameter state."""
    T, S = 5, 9
    tv, shared = model_preset("m3"), model_preset("m1")
    st_shared = make_state(grid3, shared, T=T, rng=rng)
    st_tv = ParamState(
        u=st_shared.u.copy(), delta=st_shared.delta.copy(),
        zeta=np.repeat(st_shared.zeta, T), sigma2=st_shared.sigma2,
        nu1=np.repeat(st_shared.nu1, T, axis=0),
        nu2=np.repeat(st_shared.nu2, T, axis=0))
    np.testing.assert_allclose(transition_matrices(st_tv, grid3, tv),
                               transition_matrices(st_shared, grid3, shared))
    assert process_loglik(st_tv, grid3, tv) == pytest.approx(
        process_loglik(st_shared, grid3, shared), rel=1e-12)


def test_state_validation(grid3, rng):
    spec = model_preset("m3")
    st_ = make_state(grid3, spec, T=4, rng=rng)
    st_.validate(grid3, spec)       # sane state passes
    bad = st_.copy()
    bad.delta = np.full(9, -0.01)
    with pytest.raises(ValueError, match="delta"):
        bad.validate(grid3, spec)
    bad = st_.copy()
    bad.sigma2 = 0.0
    with pytest.raises(ValueError, match="sigma2"):
        bad.validate(grid3, spec)
    bad = st_.copy()
    bad.zeta = np.zeros(1)
    with pytest.raises(ValueError, match="zeta"):
        bad.validate(grid3, spec)
    bad = st_.copy()
    bad.phi = 0.5
    with pytest.raises(ValueError, match="phi"):
        bad.validate(grid3, spec)

    ar = model_preset("m5")
    st_ar = make_state(grid3, ar, T=4, rng=rng, phi=0.3)
    st_ar.validate(grid3, ar)
    st_ar.eps[2, 0] += 1.0
    with pytest.raises(ValueError, match="eps"):
        st_ar.validate(grid3, ar)
