"""Reference sampler: target density, adaptation and diagnostics."""

import numpy as np
import pytest
from scipy import stats

from sgcinla import rng
from sgcinla.errors import InsufficientSamples
from sgcinla.mcmc import (
    ChainConfig,
    effective_sample_size,
    make_core_logpost,
    metropolis_componentwise,
    run_reference,
    split_rhat,
)
from sgcinla.model import ModelSpec, make_family


def gaussian_regression():
    gen = rng.stream(77)
    n = 20
    z = gen.normal(size=n)
    y = 0.5 - 1.2 * z + gen.normal(size=n) * 0.7
    return ModelSpec(
        make_family("gaussian", tau=1 / 0.49),
        y=y,
        covariates=z,
        covariate_names=("z",),
        tau_beta=0.5,
    )


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(chains=1)
    with pytest.raises(ValueError):
        ChainConfig(keep=0)


def test_core_logpost_matches_factorized_density():
    gen = rng.stream(321)
    grp = np.repeat(np.arange(3), 4)
    y = gen.normal(size=12)
    spec = ModelSpec(
        make_family("gaussian", tau=2.0), y=y, group=grp, tau_beta=0.5, re_prior=(1.5, 0.7)
    )
    logpost = make_core_logpost(spec)
    v = np.array([[0.3, -0.4, 0.1, 0.6, -0.2]])  # intercept, u_1..u_3, log tau_u
    eta = 0.3 + np.array([-0.4, -0.4, -0.4, -0.4, 0.1, 0.1, 0.1, 0.1, 0.6, 0.6, 0.6, 0.6])
    tau_u = np.exp(-0.2)
    expected = (
        stats.norm.logpdf(y, eta, np.sqrt(0.5)).sum()
        + stats.norm.logpdf(0.3, 0.0, np.sqrt(2.0))
        + stats.norm.logpdf([-0.4, 0.1, 0.6], 0.0, 1 / np.sqrt(tau_u)).sum()
        + stats.gamma.logpdf(tau_u, 1.5, scale=1 / 0.7)
        + np.log(tau_u)  # change of variables to the log scale
    )
    assert logpost(v)[0] == pytest.approx(expected, abs=1e-10)


def test_metropolis_recovers_correlated_normal():
    cov = np.array([[1.0, 0.6], [0.6, 1.0]])
    q = np.linalg.inv(cov)

    def logpost(x):
        return -0.5 * np.einsum("ci,ij,cj->c", x, q, x)

    cfg = ChainConfig(chains=4, burn=3000, keep=50000)
    draws, accept = metropolis_componentwise(logpost, np.zeros((4, 2)), cfg, seed=11)
    pooled = draws.reshape(-1, 2)
    assert np.all((accept > 0.15) & (accept < 0.5))
    assert np.max(np.abs(np.cov(pooled.T) / cov - 1.0)) < 0.03
    assert np.all(split_rhat(draws) < 1.01)
    assert np.all(effective_sample_size(draws) > 5000)


def test_reference_run_matches_conjugate_posterior():
    spec = gaussian_regression()
    b = spec.fixed_design()
    a = b.T @ b / 0.49 + 0.5 * np.eye(2)
    post_mean = np.linalg.solve(a, b.T @ spec.y / 0.49)
    post_sd = np.sqrt(np.diag(np.linalg.inv(a)))

    run = run_reference(spec, ChainConfig(chains=4, burn=2000, keep=20000), seed=3)
    pooled = run.pooled()
    se = pooled.std(axis=0, ddof=1) / np.sqrt(run.ess())
    assert np.all(np.abs(pooled.mean(axis=0) - post_mean) < 3 * se)
    np.testing.assert_allclose(pooled.std(axis=0, ddof=1), post_sd, rtol=0.05)
    assert np.all((run.accept_rate > 0.15) & (run.accept_rate < 0.5))
    assert np.all(run.rhat() < 1.02)
    assert run.names == ("intercept", "beta_z")


def test_reference_run_is_reproducible():
    spec = gaussian_regression()
    cfg = ChainConfig(chains=2, burn=200, keep=300)
    a = run_reference(spec, cfg, seed=5)
    b = run_reference(spec, cfg, seed=5)
    c = run_reference(spec, cfg, seed=6)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)


def test_latent_draw_reconstruction():
    gen = rng.stream(909)
    grp = np.repeat(np.arange(6), 5)
    u = gen.normal(size=6) * 0.8
    y = gen.poisson(np.exp(0.4 + u[grp])).astype(float)
    spec = ModelSpec(make_family("poisson"), y=y, group=grp, tau_beta=0.5)

    run = run_reference(spec, ChainConfig(chains=2, burn=500, keep=500), seed=8)
    latent = run.latent_draws()
    assert latent.shape == (1000, spec.n_latent)
    core = run.pooled()
    manual = core[:, :1] @ spec.fixed_design().T + core[:, 1:7] @ spec.group_design().T
    np.testing.assert_allclose(latent[:, : spec.n_obs], manual, atol=1e-12)
    assert run.names[-1] == "log_tau_u"
    assert run.hyper_draws().shape == (1000, 1)
    assert np.all(np.isfinite(run.hyper_draws()))


def test_split_rhat_flags_disagreeing_chains():
    gen = rng.stream(14)
    good = gen.normal(size=(4, 1000, 1))
    assert split_rhat(good)[0] < 1.01
    bad = good.copy()
    bad[0] += 5.0
    assert split_rhat(bad)[0] > 1.5
    with pytest.raises(InsufficientSamples):
        split_rhat(good[:, :3])


def test_effective_sample_size_behaviour():
    gen = rng.stream(15)
    iid = gen.normal(size=(4, 2000, 1))
    ess_iid = effective_sample_size(iid)[0]
    assert 4000 < ess_iid <= 10000
    walk = np.cumsum(gen.normal(size=(4, 2000, 1)), axis=1)
    assert effective_sample_size(walk)[0] < 500
