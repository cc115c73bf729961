import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgebo import (
    EpOptions,
    GpState,
    KernelHyperparams,
    Observation,
    ProbitSite,
    VirtualSignObservation,
    energy,
    ep_fit,
    fit_state,
    log_marginal_gaussian,
    predict_df,
    predict_f,
    probit_likelihood,
    sign_support,
)
from edgebo.ep import _tilted_moments
from edgebo.kernels import LatentIndex, LatentKind
from oracles import quadrature_oracle

PHI_1 = 0.8413447460685429  # standard normal CDF at 1, literature constant


def make_state(hp, x, y, virtuals=()):
    obs = [Observation(np.atleast_1d(x[i]), y[i]) for i in range(len(y))]
    return GpState(hp, obs, list(virtuals))


def random_config(seed, n_sites=1):
    """A random 1-d dataset with border sign sites, for oracle comparisons."""
    rng = np.random.default_rng(seed)
    hp = KernelHyperparams(
        float(rng.uniform(0.5, 1.5)),
        [float(rng.uniform(0.15, 0.6))],
        noise_variance=float(rng.uniform(1e-3, 0.05)),
    )
    n = int(rng.integers(2, 6))
    x = rng.uniform(0.1, 0.9, size=(n, 1))
    y = rng.normal(scale=0.8, size=n)
    if n_sites == 1:
        side = int(rng.integers(2))
        sites = [(np.array([float(side)]), 0, 1 if side else -1)]
    else:
        sites = [(np.array([0.0]), 0, -1), (np.array([1.0]), 0, 1)]
    probes = rng.uniform(0.0, 1.0, size=(5, 1))
    return hp, x, y, sites, probes


def to_virtual(sites):
    return [VirtualSignObservation(s[0], s[1], s[2]) for s in sites]


def test_probit_at_zero_is_half():
    for m in (-1, 1):
        for nu in (1e-6, 0.5, 2.0):
            assert probit_likelihood(0.0, m, nu) == 0.5


def test_probit_matches_normal_cdf():
    assert probit_likelihood(1.0, 1, 1.0) == pytest.approx(PHI_1, abs=1e-12)
    assert probit_likelihood(-1.0, -1, 1.0) == pytest.approx(PHI_1, abs=1e-12)


def test_probit_step_function_limit():
    assert probit_likelihood(1e-3, 1, 1e-6) == pytest.approx(1.0, abs=1e-12)
    assert probit_likelihood(-1e-3, 1, 1e-6) == pytest.approx(0.0, abs=1e-12)


def test_probit_rejects_bad_nu():
    with pytest.raises(ValueError):
        probit_likelihood(0.0, 1, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30), st.sampled_from([1e-6, 1e-2, 1.0]))
def test_probit_monotone_in_z_times_m(z1, z2, nu):
    if z1 > z2:
        z1, z2 = z2, z1
    assert probit_likelihood(z1, 1, nu) <= probit_likelihood(z2, 1, nu) + 1e-15


def test_tilted_moments_match_quadrature():
    # direct check of the site-update primitive against numerical integration
    from scipy.integrate import quad

    for m_cav, v_cav, sign, nu in [(0.4, 1.3, 1, 0.5), (-2.0, 0.5, 1, 1e-3), (1.0, 2.0, -1, 1e-6)]:
        log_z, mean, var = _tilted_moments(m_cav, v_cav, sign, nu)
        sd = np.sqrt(v_cav)

        def f(t, k):
            pdf = np.exp(-0.5 * (t - m_cav) ** 2 / v_cav) / np.sqrt(2 * np.pi * v_cav)
            return t**k * pdf * probit_likelihood(t, sign, nu)

        # split at the probit transition layer (width ~nu) so quad resolves it
        pieces = sorted({m_cav - 10 * sd, -10 * nu, 0.0, 10 * nu, m_cav + 10 * sd})
        pieces = [p for p in pieces if m_cav - 10 * sd <= p <= m_cav + 10 * sd]
        kwargs = {"limit": 200, "epsabs": 1e-14, "epsrel": 1e-12}
        z0 = sum(quad(f, a, b, args=(0,), **kwargs)[0] for a, b in zip(pieces, pieces[1:]))
        z1 = sum(quad(f, a, b, args=(1,), **kwargs)[0] for a, b in zip(pieces, pieces[1:]))
        z2 = sum(quad(f, a, b, args=(2,), **kwargs)[0] for a, b in zip(pieces, pieces[1:]))
        assert log_z == pytest.approx(np.log(z0), abs=1e-8)
        assert mean == pytest.approx(z1 / z0, abs=1e-8)
        assert var == pytest.approx(z2 / z0 - (z1 / z0) ** 2, abs=1e-8)


def test_ep_zero_sites_reduces_to_exact_gaussian():
    rng = np.random.default_rng(0)
    hp = KernelHyperparams(1.2, [0.4], noise_variance=0.02)
    x = rng.uniform(size=(5, 1))
    y = rng.normal(size=5)
    state = make_state(hp, x, y)
    result = ep_fit(state.joint_gram(), y, hp.noise_variance, [])
    assert result.converged
    assert result.log_marginal_approx == pytest.approx(log_marginal_gaussian(state), abs=1e-10)
    # exact joint posterior over the training latents themselves
    gram = state.joint_gram()
    k_inv = np.linalg.inv(gram + hp.noise_variance * np.eye(5))
    np.testing.assert_allclose(result.mean, gram @ k_inv @ y, atol=1e-10)
    np.testing.assert_allclose(result.cov, gram - gram @ k_inv @ gram, atol=1e-10)


def test_single_site_posterior_mean_has_site_sign():
    hp = KernelHyperparams(1.0, [0.3])
    for sign, border in ((1, 1.0), (-1, 0.0)):
        state = GpState(hp, [], [VirtualSignObservation(np.array([border]), 0, sign)])
        fit_state(state)
        mean, _ = predict_df(state, [border], 0)
        assert np.sign(mean) == sign


@pytest.mark.parametrize("seed", range(5))
def test_ep_matches_quadrature_oracle_one_site(seed):
    hp, x, y, sites, probes = random_config(seed, n_sites=1)
    state = make_state(hp, x, y, to_virtual(sites))
    fit_state(state)
    post = predict_f(state, probes)
    energy_oracle, mean_oracle, var_oracle = quadrature_oracle(hp, x, y, sites, probes)
    np.testing.assert_allclose(post.mean, mean_oracle, atol=1e-3)
    np.testing.assert_allclose(post.variance, var_oracle, atol=1e-3)
    assert energy(state) == pytest.approx(energy_oracle, abs=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_ep_matches_quadrature_oracle_two_sites(seed):
    hp, x, y, sites, probes = random_config(seed + 50, n_sites=2)
    state = make_state(hp, x, y, to_virtual(sites))
    fit_state(state)
    post = predict_f(state, probes)
    energy_oracle, mean_oracle, var_oracle = quadrature_oracle(hp, x, y, sites, probes)
    np.testing.assert_allclose(post.mean, mean_oracle, atol=1e-3)
    np.testing.assert_allclose(post.variance, var_oracle, atol=1e-3)
    assert energy(state) == pytest.approx(energy_oracle, abs=1e-3)


def test_energy_reduces_to_negative_log_marginal():
    rng = np.random.default_rng(3)
    hp = KernelHyperparams(1.0, [0.5], noise_variance=0.1)
    x = rng.uniform(size=(4, 1))
    y = rng.normal(size=4)
    state = make_state(hp, x, y)
    assert energy(state) == -log_marginal_gaussian(state)


def test_energy_zero_point_holdout_is_zero():
    hp = KernelHyperparams(1.0, [0.5], noise_variance=0.1)
    state = make_state(hp, np.array([[0.2]]), np.array([0.4]))
    assert energy(state, holdout=(np.zeros(0), np.zeros((0, 1)))) == 0.0


def test_energy_holdout_is_difference_of_joint_and_base():
    rng = np.random.default_rng(4)
    hp = KernelHyperparams(1.0, [0.4], noise_variance=0.05)
    x = rng.uniform(size=(4, 1))
    y = rng.normal(size=4)
    site = VirtualSignObservation(np.array([1.0]), 0, 1)
    state = make_state(hp, x[:3], y[:3], [site])
    joint = make_state(hp, x, y, [site])
    expected = energy(joint) - energy(state)
    got = energy(state, holdout=(y[3:], x[3:]))
    assert got == pytest.approx(expected, abs=1e-10)


def test_single_site_energy_difference_matches_oracle():
    hp, x, y, sites, probes = random_config(123, n_sites=1)
    point, dim, _ = sites[0]
    diffs = {}
    for sign in (1, -1):
        state = make_state(hp, x, y, [VirtualSignObservation(point, dim, sign)])
        diffs[sign] = energy(state)
        oracle_e, _, _ = quadrature_oracle(hp, x, y, [(point, dim, sign)], probes)
        assert diffs[sign] == pytest.approx(oracle_e, abs=1e-3)
    o_plus, _, _ = quadrature_oracle(hp, x, y, [(point, dim, 1)], probes)
    o_minus, _, _ = quadrature_oracle(hp, x, y, [(point, dim, -1)], probes)
    assert diffs[1] - diffs[-1] == pytest.approx(o_plus - o_minus, abs=1e-3)


def test_ep_log_marginal_invariant_to_site_order():
    rng = np.random.default_rng(9)
    hp = KernelHyperparams(1.0, [0.35], noise_variance=0.01)
    x = rng.uniform(0.2, 0.8, size=(4, 1))
    y = rng.normal(size=4)
    sites = [
        VirtualSignObservation(np.array([0.0]), 0, -1),
        VirtualSignObservation(np.array([1.0]), 0, 1),
    ]
    e_fwd = energy(make_state(hp, x, y, sites))
    e_rev = energy(make_state(hp, x, y, sites[::-1]))
    assert e_fwd == pytest.approx(e_rev, abs=1e-8)


def test_posterior_sign_follows_strong_energy_gap():
    # monotone increasing data toward the upper border supports sign +1 there
    hp = KernelHyperparams(1.0, [0.4], noise_variance=1e-3)
    x = np.linspace(0.1, 0.9, 5)[:, None]
    y = 2.0 * x[:, 0]
    state = make_state(hp, x, y)
    preferred, gap = sign_support(state, np.array([1.0]), 0)
    assert preferred == 1
    e_oracle_plus, _, _ = quadrature_oracle(hp, x, y, [(np.array([1.0]), 0, 1)], x[:3])
    e_oracle_minus, _, _ = quadrature_oracle(hp, x, y, [(np.array([1.0]), 0, -1)], x[:3])
    assert e_oracle_plus < e_oracle_minus  # oracle agrees with the ordering
    if gap > 0.5:
        strong = make_state(hp, x, y, [VirtualSignObservation(np.array([1.0]), 0, 1)])
        fit_state(strong)
        mean, _ = predict_df(strong, [1.0], 0)
        assert mean > 0


def test_sign_support_tie_on_empty_state():
    hp = KernelHyperparams(1.0, [0.3])
    preferred, gap = sign_support(GpState(hp), np.array([0.0]), 0)
    assert preferred == 0
    assert gap == 0.0


def test_sign_support_rejects_duplicate_site():
    hp = KernelHyperparams(1.0, [0.3])
    state = GpState(hp, [], [VirtualSignObservation(np.array([0.0]), 0, -1)])
    with pytest.raises(ValueError):
        sign_support(state, np.array([0.0]), 0)


def test_sign_support_gap_grows_with_consistent_data():
    # steeper increasing data never makes the upper-border +1 gap smaller
    hp = KernelHyperparams(1.0, [0.4], noise_variance=1e-3)
    x = np.linspace(0.1, 0.9, 5)[:, None]
    gaps = []
    for slope in (0.5, 1.0, 2.0, 4.0):
        state = make_state(hp, x, slope * x[:, 0])
        preferred, gap = sign_support(state, np.array([1.0]), 0)
        assert preferred == 1
        gaps.append(gap)
    assert all(b >= a - 1e-9 for a, b in zip(gaps, gaps[1:]))


def test_ep_non_convergence_is_flagged_not_fatal():
    hp = KernelHyperparams(1.0, [0.3], noise_variance=1e-3)
    x = np.linspace(0.05, 0.95, 6)[:, None]
    y = 3.0 * x[:, 0]
    state = make_state(hp, x, y, [VirtualSignObservation(np.array([1.0]), 0, -1)])
    result = fit_state(state, EpOptions(max_sweeps=1))
    assert not result.converged
    assert np.isfinite(result.log_marginal_approx)


def test_probit_site_validation():
    latent_v = LatentIndex(LatentKind.VALUE, 0)
    latent_d = LatentIndex(LatentKind.PARTIAL_DERIVATIVE, 0, dim=0)
    with pytest.raises(ValueError):
        ProbitSite(latent_v, 1)
    with pytest.raises(ValueError):
        ProbitSite(latent_d, 2)
    with pytest.raises(ValueError):
        ProbitSite(latent_d, 1, nu=0.0)
    with pytest.raises(ValueError):
        ProbitSite(latent_d, 1, site_precision=-1.0)
