"""Expectation propagation for derivative-sign sites with probit likelihood.

A sign observation ``m`` on latent derivative ``z`` contributes the factor
``Phi(z * m / nu)``; as ``nu -> 0`` this approaches a unit step, turning the
site into a hard sign constraint.  Each probit factor is approximated by an
unnormalized Gaussian site ``exp(-0.5*tau*z^2 + loc*z)`` whose parameters are
iterated to match the moments of the tilted (cavity times probit) marginal.

The Gaussian value observations are conjugate, so they are handled exactly:
EP iterates only on the q-dimensional marginal of the site latents under the
Gaussian-conditioned prior ``N(m0, V0)``.  This keeps the linear algebra
well-conditioned even for near-noiseless data and hard (nu -> 0) sites, and
the total evidence splits as ``log p(y, m) = log p(y) + log Z_sites``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtr

from .domain import VirtualSignObservation
from .gp import LOG2PI, GpState, _EpCache, log_marginal_gaussian
from .kernels import LatentIndex, LatentKind

DEFAULT_NU = 1e-6

# Beyond this standardized deviation the probit ratio phi/Phi switches to its
# asymptotic series: the direct exp(log phi - log Phi) form loses the digits
# that the z + ratio cancellation needs.
_SERIES_THRESHOLD = -50.0


@dataclass
class EpOptions:
    max_sweeps: int = 50
    damping: float = 0.8
    tol: float = 1e-6


@dataclass
class ProbitSite:
    """One probit sign factor and its current Gaussian site approximation."""

    latent: LatentIndex
    sign: int
    nu: float = DEFAULT_NU
    site_precision: float = 0.0
    site_location: float = 0.0

    def __post_init__(self):
        if self.latent.kind != LatentKind.PARTIAL_DERIVATIVE:
            raise ValueError("probit sites attach to derivative latents only")
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be -1 or +1, got {self.sign}")
        if not self.nu > 0:
            raise ValueError(f"nu must be > 0, got {self.nu}")
        if self.site_precision < 0:
            raise ValueError("site precision must be nonnegative")


@dataclass
class ApproxPosterior:
    """Joint Gaussian approximation over all latents plus solver byproducts."""

    mean: np.ndarray
    cov: np.ndarray
    log_marginal_approx: float
    converged: bool
    sweeps: int
    skipped_updates: int
    site_precision: np.ndarray
    site_location: np.ndarray
    chol_obs: np.ndarray
    alpha_obs: np.ndarray
    w_obs_sites: np.ndarray
    mean_shift: np.ndarray
    cov_shift: np.ndarray


def probit_likelihood(z, m, nu: float):
    """Phi(z * m / nu), the probability of sign m for derivative value z."""
    if not nu > 0:
        raise ValueError(f"nu must be > 0, got {nu}")
    return ndtr(np.asarray(z, dtype=float) * (m / nu))


def _tilted_moments(m_cav: float, v_cav: float, sign: int, nu: float):
    """log normalizer, mean and variance of N(z|m_cav,v_cav)*Phi(z*sign/nu)."""
    denom2 = nu * nu + v_cav
    denom = math.sqrt(denom2)
    z = sign * m_cav / denom
    log_zhat = float(log_ndtr(z))
    if z > _SERIES_THRESHOLD:
        ratio = math.exp(-0.5 * z * z - 0.5 * LOG2PI - log_zhat)
        z_plus_ratio = z + ratio
    else:
        zi = 1.0 / z
        zi3 = zi * zi * zi
        ratio = -z - zi + 2.0 * zi3 - 10.0 * zi3 * zi * zi
        z_plus_ratio = -zi + 2.0 * zi3 - 10.0 * zi3 * zi * zi
    mean = m_cav + sign * v_cav * ratio / denom
    var = v_cav - v_cav * v_cav * ratio * z_plus_ratio / denom2
    var = max(var, 1e-14 * v_cav)
    return log_zhat, mean, var


def _chol_psd(mat: np.ndarray) -> np.ndarray:
    """Cholesky with relative jitter escalation for nearly singular PSD input."""
    scale = max(float(np.max(np.diag(mat))), 1e-300)
    bump = 0.0
    while True:
        try:
            return np.linalg.cholesky(mat + bump * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            bump = 1e-12 * scale if bump == 0.0 else 2.0 * bump
            if bump > 1e-2 * scale:
                raise


def _site_posterior(v0, m0, site_tau, site_nu):
    sqrt_tau = np.sqrt(site_tau)
    b = np.eye(v0.shape[0]) + sqrt_tau[:, None] * v0 * sqrt_tau[None, :]
    chol_b = np.linalg.cholesky(b)
    v = solve_triangular(chol_b, sqrt_tau[:, None] * v0, lower=True)
    sigma = v0 - v.T @ v
    mu = m0 + sigma @ (site_nu - site_tau * m0)
    return chol_b, sigma, mu


def ep_fit(
    gram: np.ndarray,
    y,
    noise_variance: float,
    sites: list[ProbitSite],
    options: EpOptions | None = None,
    warm_start=None,
) -> ApproxPosterior:
    """Fit the EP approximation for latents [values..., site derivatives...].

    ``gram`` covers all latents; the first ``len(y)`` are value latents with
    Gaussian noise, the remaining ones line up with ``sites``.  Returns the
    joint Gaussian approximation and the EP log-marginal estimate.
    """
    opts = options or EpOptions()
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    q = len(sites)
    if gram.shape[0] != n + q:
        raise ValueError(f"gram size {gram.shape[0]} does not match {n} obs + {q} sites")

    k_oo = gram[:n, :n]
    k_oz = gram[:n, n:]
    k_zz = gram[n:, n:]

    # exact Gaussian part
    if n:
        chol_obs = np.linalg.cholesky(k_oo + noise_variance * np.eye(n))
        alpha_obs = cho_solve((chol_obs, True), y)
        log_py = (
            -0.5 * float(y @ alpha_obs)
            - float(np.sum(np.log(np.diag(chol_obs))))
            - 0.5 * n * LOG2PI
        )
        w_oz = cho_solve((chol_obs, True), k_oz)
        m0 = k_oz.T @ alpha_obs
        v0 = k_zz - k_oz.T @ w_oz
    else:
        chol_obs = np.zeros((0, 0))
        alpha_obs = np.zeros(0)
        log_py = 0.0
        w_oz = np.zeros((0, q))
        m0 = np.zeros(q)
        v0 = k_zz.copy()

    # EP sweeps on the site-latent marginal
    if warm_start is not None and len(warm_start[0]) == q:
        site_tau = np.asarray(warm_start[0], dtype=float).copy()
        site_nu = np.asarray(warm_start[1], dtype=float).copy()
    else:
        site_tau = np.zeros(q)
        site_nu = np.zeros(q)

    eta = opts.damping
    converged = q == 0
    skipped = 0
    sweeps_done = 0
    if q:
        chol_b, sigma, mu = _site_posterior(v0, m0, site_tau, site_nu)
        for sweep in range(opts.max_sweeps):
            max_delta = 0.0
            for i, site in enumerate(sites):
                var_i = sigma[i, i]
                if var_i <= 0.0:
                    skipped += 1
                    continue
                tau_cav = 1.0 / var_i - site_tau[i]
                nu_cav = mu[i] / var_i - site_nu[i]
                if tau_cav <= 0.0:
                    skipped += 1
                    continue
                v_cav = 1.0 / tau_cav
                m_cav = nu_cav * v_cav
                _, m_hat, v_hat = _tilted_moments(m_cav, v_cav, site.sign, site.nu)
                tau_target = max(1.0 / v_hat - tau_cav, 0.0)
                nu_target = m_hat / v_hat - nu_cav
                tau_new = (1.0 - eta) * site_tau[i] + eta * tau_target
                nu_new = (1.0 - eta) * site_nu[i] + eta * nu_target
                dtau = tau_new - site_tau[i]
                dnu = nu_new - site_nu[i]
                scale = 1.0 + dtau * var_i
                if scale <= 1e-14:
                    skipped += 1
                    continue
                col = sigma[:, i].copy()
                sigma -= np.outer(col, col) * (dtau / scale)
                site_tau[i] = tau_new
                site_nu[i] = nu_new
                mu = m0 + sigma @ (site_nu - site_tau * m0)
                max_delta = max(max_delta, abs(dtau), abs(dnu))
            sweeps_done = sweep + 1
            chol_b, sigma, mu = _site_posterior(v0, m0, site_tau, site_nu)
            if max_delta < opts.tol:
                converged = True
                break
        log_sites, bad = _site_log_marginal(sites, site_tau, site_nu, chol_b, sigma, mu, m0)
        skipped += bad
    else:
        chol_b = np.zeros((0, 0))
        sigma = np.zeros((0, 0))
        mu = np.zeros(0)
        log_sites = 0.0

    # propagation operators for prediction: mean shift c = V0^-1 (mu - m0),
    # covariance correction M = V0^-1 (Sigma - V0) V0^-1
    if q:
        chol_v0 = _chol_psd(v0)
        mean_shift = cho_solve((chol_v0, True), mu - m0)
        half = cho_solve((chol_v0, True), sigma - v0)
        cov_shift = cho_solve((chol_v0, True), half.T).T
        cov_shift = 0.5 * (cov_shift + cov_shift.T)
    else:
        mean_shift = np.zeros(0)
        cov_shift = np.zeros((0, 0))

    # joint posterior over [values, site latents]
    cov_g_oz = k_oz - k_oo @ w_oz
    mean_obs = k_oo @ alpha_obs + cov_g_oz @ mean_shift
    if n:
        v_oo = solve_triangular(chol_obs, k_oo, lower=True)
        sig_g_oo = k_oo - v_oo.T @ v_oo
    else:
        sig_g_oo = k_oo.copy()
    cov_oo = sig_g_oo + cov_g_oz @ cov_shift @ cov_g_oz.T
    mean = np.concatenate((mean_obs, mu))
    cov = np.zeros((n + q, n + q))
    cov[:n, :n] = cov_oo
    if q:
        cov_oz_post = cov_g_oz + cov_g_oz @ cov_shift @ v0
        cov[:n, n:] = cov_oz_post
        cov[n:, :n] = cov_oz_post.T
        cov[n:, n:] = sigma

    return ApproxPosterior(
        mean=mean,
        cov=cov,
        log_marginal_approx=log_py + log_sites,
        converged=converged,
        sweeps=sweeps_done,
        skipped_updates=skipped,
        site_precision=site_tau,
        site_location=site_nu,
        chol_obs=chol_obs,
        alpha_obs=alpha_obs,
        w_obs_sites=w_oz,
        mean_shift=mean_shift,
        cov_shift=cov_shift,
    )


def _site_log_marginal(sites, site_tau, site_nu, chol_b, sigma, mu, m0):
    """log of the site-marginal evidence integral at the converged sites."""
    total = 0.0
    bad_cavities = 0
    for i, site in enumerate(sites):
        var_i = sigma[i, i]
        if var_i <= 0.0:
            bad_cavities += 1
            continue
        tau_cav = 1.0 / var_i - site_tau[i]
        if tau_cav <= 0.0:
            bad_cavities += 1
            continue
        nu_cav = mu[i] / var_i - site_nu[i]
        v_cav = 1.0 / tau_cav
        m_cav = nu_cav * v_cav
        log_zhat, _, _ = _tilted_moments(m_cav, v_cav, site.sign, site.nu)
        total += (
            log_zhat
            + 0.5 * math.log1p(site_tau[i] * v_cav)
            + 0.5 * nu_cav * nu_cav * v_cav
            - 0.5 * (nu_cav + site_nu[i]) ** 2 / (tau_cav + site_tau[i])
        )
    shifted = site_nu - site_tau * m0
    total += float(site_nu @ m0) - 0.5 * float((site_tau * m0) @ m0)
    total -= float(np.sum(np.log(np.diag(chol_b))))
    total += 0.5 * float(shifted @ (mu - m0))
    return total, bad_cavities


# -- state-level helpers ------------------------------------------------------


def sites_for_state(state: GpState, nu: float = DEFAULT_NU) -> list[ProbitSite]:
    """Fresh probit sites for the state's virtual observations, in order."""
    return [
        ProbitSite(
            latent=LatentIndex(LatentKind.PARTIAL_DERIVATIVE, point_index=i, dim=v.dim),
            sign=v.sign,
            nu=nu,
        )
        for i, v in enumerate(state.virtual_obs)
    ]


def fit_state(
    state: GpState,
    options: EpOptions | None = None,
    nu: float = DEFAULT_NU,
    warm_start=None,
) -> ApproxPosterior:
    """Run EP on the state's data and cache the resulting factorization."""
    sites = sites_for_state(state, nu)
    gram = state.joint_gram()
    result = ep_fit(
        gram, state.train_y(), state.hyperparams.noise_variance, sites, options, warm_start
    )
    state._cache = _EpCache(
        chol_obs=result.chol_obs,
        alpha_obs=result.alpha_obs,
        w_obs_sites=result.w_obs_sites,
        mean_shift=result.mean_shift,
        cov_shift=result.cov_shift,
        log_marginal=result.log_marginal_approx,
        converged=result.converged,
        sweeps=result.sweeps,
        skipped_updates=result.skipped_updates,
        mean=result.mean,
        cov=result.cov,
        site_precision=result.site_precision,
        site_location=result.site_location,
    )
    return result


def energy(state: GpState, holdout=None, *, nu: float = DEFAULT_NU, options=None) -> float:
    """Negative log marginal likelihood of the (approximate) model.

    With ``holdout=(y_star, x_star)`` returns the predictive energy of the
    holdout given the state's data, computed as the difference of the joint
    and base energies.
    """
    if holdout is not None:
        y_star, x_star = holdout
        y_star = np.atleast_1d(np.asarray(y_star, dtype=float))
        x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
        if y_star.shape[0] == 0:
            return 0.0
        from .domain import Observation

        extra = [Observation(x_star[i], y_star[i]) for i in range(y_star.shape[0])]
        joint = state.clone(extra_observations=extra)
        return energy(joint, nu=nu, options=options) - energy(state, nu=nu, options=options)

    if not state.virtual_obs:
        return -log_marginal_gaussian(state)
    cache = state._cache
    if isinstance(cache, _EpCache):
        return -cache.log_marginal
    return -fit_state(state, options, nu).log_marginal_approx


def sign_support(
    state: GpState, x_tilde, j: int, *, nu: float = DEFAULT_NU, options=None
) -> tuple[int, float]:
    """Which derivative sign at (x_tilde, j) the data supports, and by how much.

    Fits one candidate site per sign and compares energies; returns
    ``(preferred_sign, energy_gap)`` with ``preferred_sign = 0`` on a tie.
    """
    x_tilde = np.atleast_1d(np.asarray(x_tilde, dtype=float))
    for v in state.virtual_obs:
        if v.dim == j and np.array_equal(v.x, x_tilde):
            raise ValueError(f"a virtual site already exists at {x_tilde} dim {j}")
    energies = {}
    for m in (1, -1):
        candidate = VirtualSignObservation(x_tilde, j, m)
        trial = state.clone(extra_virtual=[candidate])
        energies[m] = energy(trial, nu=nu, options=options)
    if energies[1] == energies[-1]:
        return 0, 0.0
    preferred = 1 if energies[1] < energies[-1] else -1
    return preferred, energies[-preferred] - energies[preferred]
