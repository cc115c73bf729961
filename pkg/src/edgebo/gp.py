"""Exact GP regression over joint value/derivative latents.

The latent vector of a state is ``[f(x_1) .. f(x_n), df/dx_{j_1}(v_1) ..
df/dx_{j_q}(v_q)]``: one value latent per observation followed by one
derivative latent per virtual sign observation.  With no virtual
observations everything reduces to classic GP regression (Cholesky of
``K + noise*I``); with sign sites present the posterior factorization is
produced by expectation propagation (see ``edgebo.ep``) and cached here.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .domain import Observation, VirtualSignObservation
from .kernels import (
    MAX_JITTER_SCALE,
    KernelHyperparams,
    LatentKind,
    gram_from_arrays,
    mixed_cov_arrays,
    prior_variances,
)

LOG2PI = math.log(2.0 * math.pi)


class SurrogateStateError(RuntimeError):
    """The state is not in a condition to serve the request (e.g. unfitted EP sites)."""


class FactorizationError(RuntimeError):
    """A Cholesky factorization failed even after jitter escalation."""


@dataclass
class GpPosterior:
    """Predictive mean/variance (and optionally the full covariance)."""

    mean: np.ndarray
    variance: np.ndarray
    cov: np.ndarray | None = None


@dataclass
class _GaussCache:
    """Factorization of the classic regression path: chol(K_ff + jitter + noise I)."""

    chol: np.ndarray
    alpha: np.ndarray
    log_marginal: float


@dataclass
class _EpCache:
    """EP factorization: exact Gaussian conditioning plus site-marginal shifts.

    A test latent t with Gaussian-conditional cross-covariance c(t) to the
    site latents has posterior mean mu_g(t) + c(t) @ mean_shift and variance
    var_g(t) + c(t) @ cov_shift @ c(t).
    """

    chol_obs: np.ndarray
    alpha_obs: np.ndarray
    w_obs_sites: np.ndarray
    mean_shift: np.ndarray
    cov_shift: np.ndarray
    log_marginal: float
    converged: bool
    sweeps: int
    skipped_updates: int
    mean: np.ndarray
    cov: np.ndarray
    site_precision: np.ndarray
    site_location: np.ndarray


class GpState:
    """Training data, hyperparameters, EP sites and cached factorizations."""

    def __init__(self, hyperparams: KernelHyperparams, observations=(), virtual_obs=()):
        self.hyperparams = hyperparams
        self.observations: list[Observation] = list(observations)
        self.virtual_obs: list[VirtualSignObservation] = list(virtual_obs)
        self._cache: _GaussCache | _EpCache | None = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    @property
    def n_virtual(self) -> int:
        return len(self.virtual_obs)

    @property
    def dimension(self) -> int:
        return self.hyperparams.dimension

    @property
    def is_fresh(self) -> bool:
        return self._cache is not None

    def invalidate(self) -> None:
        self._cache = None

    def add_observation(self, x, y) -> None:
        self.observations.append(Observation(x, y))
        self.invalidate()

    def add_virtual_observation(self, v: VirtualSignObservation) -> None:
        self.virtual_obs.append(v)
        self.invalidate()

    def remove_virtual_observations(self, keep_mask) -> int:
        keep = list(np.asarray(keep_mask, dtype=bool))
        if len(keep) != self.n_virtual:
            raise ValueError("mask length does not match virtual observation count")
        removed = keep.count(False)
        if removed:
            self.virtual_obs = [v for v, k in zip(self.virtual_obs, keep) if k]
            self.invalidate()
        return removed

    def set_hyperparams(self, hp: KernelHyperparams) -> None:
        self.hyperparams = hp
        self.invalidate()

    def clone(self, extra_observations=(), extra_virtual=()) -> "GpState":
        return GpState(
            self.hyperparams,
            self.observations + list(extra_observations),
            self.virtual_obs + list(extra_virtual),
        )

    # -- latent layout ----------------------------------------------------

    def train_x(self) -> np.ndarray:
        if not self.observations:
            return np.zeros((0, self.dimension))
        return np.asarray([o.x for o in self.observations], dtype=float)

    def train_y(self) -> np.ndarray:
        return np.asarray([o.y for o in self.observations], dtype=float)

    def latent_arrays(self):
        """(X, kinds, dims) over value latents then derivative latents."""
        n, q, d = self.n_obs, self.n_virtual, self.dimension
        x = np.zeros((n + q, d))
        kinds = np.zeros(n + q, dtype=np.uint8)
        dims = np.zeros(n + q, dtype=np.int64)
        if n:
            x[:n] = self.train_x()
        for i, v in enumerate(self.virtual_obs):
            x[n + i] = v.x
            kinds[n + i] = int(LatentKind.PARTIAL_DERIVATIVE)
            dims[n + i] = v.dim
        return x, kinds, dims

    def joint_gram(self) -> np.ndarray:
        x, kinds, dims = self.latent_arrays()
        return gram_from_arrays(x, kinds, dims, self.hyperparams)


def cholesky_with_escalation(mat: np.ndarray, hp: KernelHyperparams) -> np.ndarray:
    """Lower Cholesky factor, doubling the jitter up to 1e-2*sigma_f^2 on failure."""
    extra = hp.jitter
    bump = 0.0
    limit = MAX_JITTER_SCALE * hp.signal_variance
    while True:
        try:
            return np.linalg.cholesky(mat + bump * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            bump = extra if bump == 0.0 else 2.0 * bump
            if bump > limit:
                raise FactorizationError(
                    f"Cholesky failed at jitter {bump:.3e} (limit {limit:.3e}); "
                    f"matrix size {mat.shape[0]}, hyperparams {hp}"
                ) from None


def _gauss_cache(state: GpState) -> _GaussCache:
    n = state.n_obs
    if n == 0:
        return _GaussCache(np.zeros((0, 0)), np.zeros(0), 0.0)
    hp = state.hyperparams
    x = state.train_x()
    kinds = np.zeros(n, dtype=np.uint8)
    dims = np.zeros(n, dtype=np.int64)
    k_y = gram_from_arrays(x, kinds, dims, hp)
    k_y[np.diag_indices_from(k_y)] += hp.noise_variance
    chol = cholesky_with_escalation(k_y, hp)
    y = state.train_y()
    alpha = cho_solve((chol, True), y)
    log_marginal = (
        -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * n * LOG2PI
    )
    return _GaussCache(chol, alpha, log_marginal)


def ensure_factorization(state: GpState):
    """Return a fresh cache, building the classic one lazily when site-free."""
    if state._cache is not None:
        return state._cache
    if state.virtual_obs:
        raise SurrogateStateError(
            "state has virtual sign observations but no fitted EP sites; run ep.fit_state first"
        )
    state._cache = _gauss_cache(state)
    return state._cache


def predict_latents(state: GpState, x, kinds, dims, full_cov: bool = False) -> GpPosterior:
    """Joint posterior over arbitrary test latents (values and/or derivatives)."""
    hp = state.hyperparams
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    kinds = np.asarray(kinds, dtype=np.uint8)
    dims = np.asarray(dims, dtype=np.int64)
    prior_diag = prior_variances(kinds, dims, hp)

    if state.n_obs == 0 and state.n_virtual == 0:
        mean = np.zeros(xs.shape[0])
        cov = mixed_cov_arrays(xs, kinds, dims, xs, kinds, dims, hp) if full_cov else None
        return GpPosterior(mean, prior_diag.copy(), cov)

    cache = ensure_factorization(state)
    xt, kt, dt = state.latent_arrays()
    n = state.n_obs

    if isinstance(cache, _GaussCache):
        k_star = mixed_cov_arrays(xs, kinds, dims, xt[:n], kt[:n], dt[:n], hp)
        mean = k_star @ cache.alpha
        v = solve_triangular(cache.chol, k_star.T, lower=True)
        variance = np.maximum(prior_diag - np.einsum("ij,ij->j", v, v), 0.0)
        cov = None
        if full_cov:
            k_ss = mixed_cov_arrays(xs, kinds, dims, xs, kinds, dims, hp)
            cov = k_ss - v.T @ v
        return GpPosterior(mean, variance, cov)

    k_to = mixed_cov_arrays(xs, kinds, dims, xt[:n], kt[:n], dt[:n], hp)
    k_tz = mixed_cov_arrays(xs, kinds, dims, xt[n:], kt[n:], dt[n:], hp)
    if n:
        v = solve_triangular(cache.chol_obs, k_to.T, lower=True)
        cross = k_tz - k_to @ cache.w_obs_sites
        mean = k_to @ cache.alpha_obs + cross @ cache.mean_shift
        gauss_var = prior_diag - np.einsum("ij,ij->j", v, v)
    else:
        v = np.zeros((0, xs.shape[0]))
        cross = k_tz
        mean = cross @ cache.mean_shift
        gauss_var = prior_diag.astype(float).copy()
    correction = cross @ cache.cov_shift
    variance = np.maximum(gauss_var + np.einsum("ij,ij->i", correction, cross), 0.0)
    cov = None
    if full_cov:
        k_ss = mixed_cov_arrays(xs, kinds, dims, xs, kinds, dims, hp)
        cov = k_ss - v.T @ v + correction @ cross.T
    return GpPosterior(mean, variance, cov)


def predict_f(state: GpState, x_test, full_cov: bool = False) -> GpPosterior:
    """Posterior of the latent function at the given test points."""
    xs = np.atleast_2d(np.asarray(x_test, dtype=float))
    kinds = np.zeros(xs.shape[0], dtype=np.uint8)
    dims = np.zeros(xs.shape[0], dtype=np.int64)
    return predict_latents(state, xs, kinds, dims, full_cov)


def predict_df(state: GpState, x_star, g: int) -> tuple[float, float]:
    """Posterior mean/variance of the partial derivative along axis g at one point."""
    if not 0 <= g < state.dimension:
        raise ValueError(f"dim index {g} out of range for dimension {state.dimension}")
    xs = np.atleast_2d(np.asarray(x_star, dtype=float))
    kinds = np.ones(1, dtype=np.uint8)
    dims = np.asarray([g], dtype=np.int64)
    post = predict_latents(state, xs, kinds, dims)
    return float(post.mean[0]), float(post.variance[0])


def log_marginal_gaussian(state: GpState) -> float:
    """log p(y | X, theta) of the exact Gaussian model (no sign sites allowed)."""
    if state.virtual_obs:
        raise SurrogateStateError("log_marginal_gaussian requires a state without sign sites")
    if state.n_obs == 0:
        return 0.0
    cache = ensure_factorization(state)
    return cache.log_marginal


# -- hyperparameter fitting -------------------------------------------------


@dataclass
class HyperparamBounds:
    """Box constraints for the log-space hyperparameter search.

    Defaults assume unit-scaled inputs and standardized outputs.
    """

    log_signal_variance: tuple[float, float] = (math.log(1e-2), math.log(1e2))
    log_lengthscale: tuple[float, float] = (math.log(1e-2), math.log(10.0))
    log_noise_variance: tuple[float, float] = (math.log(1e-8), 0.0)

    def arrays(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array(
            [self.log_signal_variance[0]]
            + [self.log_lengthscale[0]] * d
            + [self.log_noise_variance[0]]
        )
        hi = np.array(
            [self.log_signal_variance[1]]
            + [self.log_lengthscale[1]] * d
            + [self.log_noise_variance[1]]
        )
        return lo, hi


def _pack(hp: KernelHyperparams) -> np.ndarray:
    return np.concatenate(
        (
            [math.log(hp.signal_variance)],
            np.log(hp.lengthscales),
            [math.log(max(hp.noise_variance, 1e-12))],
        )
    )


def _unpack(phi: np.ndarray) -> KernelHyperparams:
    d = phi.shape[0] - 2
    return KernelHyperparams(
        signal_variance=math.exp(phi[0]),
        lengthscales=np.exp(phi[1 : 1 + d]),
        noise_variance=math.exp(phi[-1]),
    )


def _gauss_value_grad(phi, x, y, sq_dists):
    """Gaussian log marginal and gradient in phi = [log sv, log l_1.., log nv]."""
    n, d = x.shape
    hp = _unpack(phi)
    inv2 = hp.inv_len2
    k = hp.signal_variance * np.exp(-0.5 * np.tensordot(sq_dists, inv2, axes=(2, 0)))
    k_y = k + (hp.jitter + hp.noise_variance) * np.eye(n)
    chol = cholesky_with_escalation(k_y, hp)
    alpha = cho_solve((chol, True), y)
    logz = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * n * LOG2PI
    k_inv = cho_solve((chol, True), np.eye(n))
    outer = np.outer(alpha, alpha) - k_inv
    grad = np.empty(d + 2)
    grad[0] = 0.5 * float(np.sum(outer * (k + hp.jitter * np.eye(n))))
    for g in range(d):
        grad[1 + g] = 0.5 * float(np.sum(outer * (k * sq_dists[:, :, g] * inv2[g])))
    grad[-1] = 0.5 * hp.noise_variance * float(np.trace(outer))
    return logz, grad


def _ep_value_grad(phi, state, sites, warm, ep_options):
    """EP log marginal and gradient at fixed converged sites.

    Kernel-parameter derivatives use the standard stationarity of the EP
    evidence in the site parameters: d logZ / d theta = 0.5 * a' dK a
    - 0.5 * tr(R dK) with a the representer weights and R = (K + D)^{-1},
    D holding the noise variance on value latents and inverse site
    precisions on site latents (zero-precision sites drop out of R).
    """
    from . import ep as ep_mod

    hp = _unpack(phi)
    x, kinds, dims = state.latent_arrays()
    gram = gram_from_arrays(x, kinds, dims, hp)
    y = state.train_y()
    res = ep_mod.ep_fit(
        gram,
        y,
        hp.noise_variance,
        sites,
        ep_options,
        warm_start=warm.get("params"),
    )
    warm["params"] = (res.site_precision.copy(), res.site_location.copy())
    n = y.shape[0]
    big_n = gram.shape[0]

    alpha = np.concatenate(
        (res.alpha_obs - res.w_obs_sites @ res.mean_shift, res.mean_shift)
    )
    active = np.concatenate(
        (np.ones(n, dtype=bool), res.site_precision > 1e-280)
    )
    d_diag = np.concatenate(
        (
            np.full(n, hp.noise_variance),
            np.divide(
                1.0,
                res.site_precision,
                out=np.zeros_like(res.site_precision),
                where=res.site_precision > 1e-280,
            ),
        )
    )
    r_mat = np.zeros((big_n, big_n))
    if active.any():
        idx = np.where(active)[0]
        sub = gram[np.ix_(idx, idx)] + np.diag(d_diag[idx])
        chol = cholesky_with_escalation(sub, hp)
        r_mat[np.ix_(idx, idx)] = cho_solve((chol, True), np.eye(idx.shape[0]))
    outer = np.outer(alpha, alpha) - r_mat

    d = hp.dimension
    grad = np.empty(d + 2)
    grad[0] = 0.5 * float(np.sum(outer * gram))
    h = 1e-5
    for g in range(d):
        hp_plus = hp.replace(lengthscales=hp.lengthscales * np.exp(h * (np.arange(d) == g)))
        hp_minus = hp.replace(lengthscales=hp.lengthscales * np.exp(-h * (np.arange(d) == g)))
        dk = (
            gram_from_arrays(x, kinds, dims, hp_plus) - gram_from_arrays(x, kinds, dims, hp_minus)
        ) / (2 * h)
        grad[1 + g] = 0.5 * float(np.sum(outer * dk))
    if n:
        resid = y - res.mean[:n]
        var_obs = np.diag(res.cov)[:n]
        nv = max(hp.noise_variance, 1e-12)
        grad[-1] = float(np.sum((resid * resid + var_obs) / (2.0 * nv) - 0.5))
    else:
        grad[-1] = 0.0
    return res.log_marginal_approx, grad


def fit_hyperparams(
    state: GpState,
    bounds: HyperparamBounds | None = None,
    *,
    rng=None,
    n_starts: int = 5,
    maxiter: int = 40,
    ep_options=None,
) -> KernelHyperparams:
    """Maximize the (EP-approximated, when sites are present) log marginal likelihood.

    Multistart L-BFGS-B in log-space within `bounds`; the returned
    hyperparameters achieve the best objective value seen across every
    evaluation, so they are never worse than any multistart seed point.
    """
    if state.n_obs < 2:
        raise ValueError("hyperparameter fitting needs at least 2 observations")
    bounds = bounds or HyperparamBounds()
    rng = np.random.default_rng(rng)
    d = state.dimension
    lo, hi = bounds.arrays(d)

    x = state.train_x()
    y = state.train_y()
    if state.virtual_obs:
        from . import ep as ep_mod

        sites = ep_mod.sites_for_state(state)
        warm: dict = {}

        def objective(phi):
            logz, grad = _ep_value_grad(phi, state, sites, warm, ep_options)
            return logz, grad

    else:
        diffs = x[:, None, :] - x[None, :, :]
        sq_dists = diffs * diffs

        def objective(phi):
            return _gauss_value_grad(phi, x, y, sq_dists)

    best = {"value": -np.inf, "phi": None}

    def neg_objective(phi):
        try:
            value, grad = objective(phi)
        except FactorizationError:
            return 1e12, np.zeros_like(phi)
        if value > best["value"]:
            best["value"] = value
            best["phi"] = phi.copy()
        return -value, -grad

    starts = [np.clip(_pack(state.hyperparams), lo, hi)]
    for _ in range(max(n_starts - 1, 0)):
        starts.append(rng.uniform(lo, hi))

    n_failed = 0
    for phi0 in starts:
        try:
            minimize(
                neg_objective,
                phi0,
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options={"maxiter": maxiter},
            )
        except Exception:
            n_failed += 1
    if best["phi"] is None:
        warnings.warn("all hyperparameter searches failed; keeping current values")
        return state.hyperparams
    if n_failed == len(starts):
        warnings.warn("every hyperparameter search aborted; returning best evaluated point")
    return _unpack(best["phi"])
