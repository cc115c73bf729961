"""Lower-confidence-bound acquisition and its multistart inner optimization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .domain import BoxDomain
from .gp import GpState, predict_f

_FD_STEP = 1e-6


@dataclass
class LcbParams:
    """Exploration weight for mean - beta * sd, constant or scheduled.

    The theoretical schedule is beta_n = 2*log(n^(d/2+2) * pi^2 / (3*delta)),
    the usual no-regret choice for confidence-bound search.
    """

    beta: float = 2.0
    schedule: str = "constant"  # "constant" | "theoretical"
    delta: float = 0.1

    def __post_init__(self):
        if self.schedule not in ("constant", "theoretical"):
            raise ValueError(f"unknown beta schedule {self.schedule!r}")
        if self.schedule == "constant" and self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    def value(self, n_evals: int, dimension: int) -> float:
        if self.schedule == "constant":
            return self.beta
        n = max(n_evals, 1)
        return max(2.0 * math.log(n ** (dimension / 2.0 + 2.0) * math.pi**2 / (3.0 * self.delta)), 0.0)


def lcb_value(mean, sd, beta):
    """mean - beta * sd (minimization convention)."""
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("standard deviation must be nonnegative")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return np.asarray(mean, dtype=float) - beta * sd


def propose_next(
    state: GpState,
    domain: BoxDomain,
    params: LcbParams,
    rng,
    n_starts: int | None = None,
    max_evals_per_start: int = 200,
) -> np.ndarray:
    """Minimize the LCB of the posterior over the closed box.

    Runs bounded L-BFGS-B from ``10*d`` low-discrepancy starts plus the
    incumbent; gradients come from batched central differences of the
    posterior.  Deterministic given the rng; ties break on the earliest
    start.
    """
    rng = np.random.default_rng(rng)
    d = domain.dimension
    n_starts = n_starts if n_starts is not None else 10 * d
    beta = params.value(state.n_obs, d)

    def acq(points: np.ndarray) -> np.ndarray:
        post = predict_f(state, points)
        return lcb_value(post.mean, np.sqrt(post.variance), beta)

    eye = np.eye(d)

    def value_and_grad(u: np.ndarray):
        pts = np.vstack((u[None, :], u[None, :] + _FD_STEP * eye, u[None, :] - _FD_STEP * eye))
        vals = acq(pts)
        grad = (vals[1 : 1 + d] - vals[1 + d :]) / (2.0 * _FD_STEP)
        return float(vals[0]), grad

    sampler = qmc.Sobol(d, scramble=True, seed=rng)
    n_draw = 1 << max(int(np.ceil(np.log2(max(n_starts, 1)))), 0)
    starts = domain.lower + sampler.random(n_draw)[:n_starts] * domain.edge
    if state.n_obs:
        incumbent = state.observations[int(np.argmin(state.train_y()))].x
        starts = np.vstack((starts, domain.clip(incumbent)[None, :]))

    box = list(zip(domain.lower, domain.upper))
    best_val = math.inf
    best_x = None
    n_failures = 0
    for u0 in starts:
        val0 = float(acq(u0[None, :])[0])
        cand_x, cand_val = u0, val0
        try:
            res = minimize(
                value_and_grad,
                u0,
                jac=True,
                method="L-BFGS-B",
                bounds=box,
                options={"maxfun": max_evals_per_start},
            )
            if np.isfinite(res.fun) and res.fun <= val0:
                cand_x, cand_val = res.x, float(res.fun)
        except Exception:
            n_failures += 1
        if cand_val < best_val:
            best_val = cand_val
            best_x = cand_x
    if n_failures == len(starts):
        import warnings

        warnings.warn("every acquisition search failed; falling back to best seed point")
    return domain.clip(best_x)
