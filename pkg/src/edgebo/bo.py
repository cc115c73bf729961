"""The optimization loops: plain confidence-bound search plus the two
border-aware variants that convert near-boundary proposals into virtual
derivative-sign observations.

Variants
--------
vbo   : evaluate every acquisition proposal as-is.
dbo   : proposals within ``epsilon_b`` of a border (per dimension, on the
        unit scale) are projected onto the border and replaced by a virtual
        outward-gradient sign observation; the acquisition is re-optimized.
adbo  : as dbo, but a candidate sign observation is only added when the
        energy of the model does not prefer the opposite (inward) sign, and
        virtual observations near a new regular observation are dropped.

Internally the loop works on the unit hypercube with y standardized to zero
mean and unit variance; thresholds (`epsilon_b`, `removal_radius`) are
fractions of the edge length, which the unit scale makes exact.  Traces
report points in original coordinates.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import ep as ep_mod
from .acquisition import LcbParams, propose_next
from .domain import BoxDomain, Observation, VirtualSignObservation, unit_box
from .gp import GpState, HyperparamBounds, KernelHyperparams, fit_hyperparams
from .objectives import factorial_design

VBO = "vbo"
DBO = "dbo"
ADBO = "adbo"
VARIANTS = (VBO, DBO, ADBO)

EVALUATION = "evaluation"
VIRTUAL_ADDED = "virtual-added"
VIRTUAL_REMOVED = "virtual-removed"
VIRTUAL_REJECTED = "virtual-rejected"

_HYPER_STREAM = 1
_ACQ_STREAM = 2


@dataclass
class BoConfig:
    """Settings of one optimization run.

    ``budget`` counts objective evaluations in total, including the
    ``2^d``-point initial design.  ``epsilon_b`` and ``removal_radius`` are
    fractions of the edge length.  ``init_inset`` keeps the factorial design
    off the exact corners so it cannot collide with border sites.
    """

    variant: str
    budget: int
    epsilon_b: float = 0.01
    removal_radius: float = 0.01
    beta: LcbParams = field(default_factory=LcbParams)
    max_virtual_retries: int = 3
    seed: int = 0
    nu: float = ep_mod.DEFAULT_NU
    init_inset: float = 0.01
    hyperfit_stride: int = 1
    n_hyper_starts: int = 5
    ep_options: ep_mod.EpOptions = field(default_factory=ep_mod.EpOptions)
    hyper_bounds: HyperparamBounds = field(default_factory=HyperparamBounds)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.epsilon_b < 0.5:
            raise ValueError(f"epsilon_b must lie in [0, 0.5), got {self.epsilon_b}")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if self.removal_radius < 0:
            raise ValueError(f"removal_radius must be >= 0, got {self.removal_radius}")
        if self.max_virtual_retries < 0:
            raise ValueError("max_virtual_retries must be >= 0")
        if self.hyperfit_stride < 1:
            raise ValueError("hyperfit_stride must be >= 1")


@dataclass
class BoEvent:
    """One trace record; wall_time is excluded from equality on purpose."""

    iteration: int
    kind: str
    point: tuple[float, ...]
    y: float | None
    incumbent: float | None
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class BoTrace:
    events: list[BoEvent] = field(default_factory=list)

    def append(self, event: BoEvent) -> None:
        self.events.append(event)

    def evaluations(self) -> list[BoEvent]:
        return [e for e in self.events if e.kind == EVALUATION]

    @property
    def n_evaluations(self) -> int:
        return sum(1 for e in self.events if e.kind == EVALUATION)

    def incumbent_curve(self) -> np.ndarray:
        return np.array([e.incumbent for e in self.evaluations()], dtype=float)


def near_boundary_dims(x, domain: BoxDomain, epsilon_b: float):
    """Dimensions whose coordinate is within epsilon_b edge-fractions of a face."""
    p = np.asarray(x, dtype=float)
    edge = domain.edge
    out = []
    for g in range(domain.dimension):
        if p[g] - domain.lower[g] <= epsilon_b * edge[g]:
            out.append((g, "lower"))
        elif domain.upper[g] - p[g] <= epsilon_b * edge[g]:
            out.append((g, "upper"))
    return out

def project_and_signs(x, domain: BoxDomain, dims):
    """Snap the flagged coordinates onto their faces and emit outward signs."""
    if not dims:
        raise ValueError("dims must be nonempty; produced by near_boundary_dims")
    x_t = np.asarray(x, dtype=float).copy()
    for g, side in dims:
        x_t[g] = domain.lower[g] if side == "lower" else domain.upper[g]
    obs = [
        VirtualSignObservation(x_t, g, -1 if side == "lower" else 1) for g, side in dims
    ]
    return x_t, obs


def remove_conflicting_virtual(state: GpState, x, radius: float) -> int:
    """Drop virtual observations within `radius` of x (state coordinates)."""
    if not state.virtual_obs:
        return 0
    p = np.asarray(x, dtype=float)
    keep = [bool(np.linalg.norm(v.x - p) >= radius) for v in state.virtual_obs]
    return state.remove_virtual_observations(keep)


def adbo_gate(state: GpState, candidate: VirtualSignObservation, *, nu, options) -> bool:
    """True when the candidate outward sign should be added to the model.

    The candidate is rejected only when the energy strictly prefers the
    inward sign; ties (and EP failures, conservatively) add.
    """
    try:
        preferred, gap = ep_mod.sign_support(state, candidate.x, candidate.dim, nu=nu, options=options)
    except Exception as exc:  # EP trouble: fall back to the prior assumption
        warnings.warn(f"sign support check failed ({exc}); adding virtual observation")
        return True
    return preferred in (0, candidate.sign) or gap <= 0.0


class BoLoop:
    """Driver for one seeded optimization run over a box domain."""

    def __init__(self, objective, domain: BoxDomain, config: BoConfig):
        self.objective = objective
        self.domain = domain
        self.config = config
        self.unit = unit_box(domain.dimension)
        self.trace = BoTrace()
        self._unit_x: list[np.ndarray] = []
        self._raw_y: list[float] = []
        self._virtuals: list[VirtualSignObservation] = []
        self._theta = KernelHyperparams(1.0, np.full(domain.dimension, 0.3), 1e-2)
        self._warm_sites = None
        self._evals_at_last_fit: int | None = None
        self.state: GpState | None = None
        self._t0 = time.perf_counter()

    # -- data plumbing --------------------------------------------------

    @property
    def n_evaluations(self) -> int:
        return len(self._raw_y)

    @property
    def incumbent(self) -> float | None:
        return min(self._raw_y) if self._raw_y else None

    def _standardized_y(self) -> np.ndarray:
        y = np.asarray(self._raw_y, dtype=float)
        if y.shape[0] < 2:
            return y - (y.mean() if y.shape[0] else 0.0)
        std = y.std()
        return (y - y.mean()) / (std if std > 1e-8 else 1.0)

    def _rebuild_state(self) -> None:
        ys = self._standardized_y()
        obs = [Observation(u, ys[i]) for i, u in enumerate(self._unit_x)]
        self.state = GpState(self._theta, obs, list(self._virtuals))

    def _rng(self, stream: int, *extra: int):
        return np.random.default_rng([self.config.seed, stream, *extra])

    def _refit(self, fit_hyper: bool) -> None:
        self._rebuild_state()
        cfg = self.config
        if fit_hyper and self.state.n_obs >= 2:
            self._theta = fit_hyperparams(
                self.state,
                cfg.hyper_bounds,
                rng=self._rng(_HYPER_STREAM, self.n_evaluations),
                n_starts=cfg.n_hyper_starts,
                ep_options=cfg.ep_options,
            )
            self.state.set_hyperparams(self._theta)
            self._evals_at_last_fit = self.n_evaluations
        if self._virtuals:
            result = ep_mod.fit_state(
                self.state, cfg.ep_options, cfg.nu, warm_start=self._warm_sites
            )
            self._warm_sites = (result.site_precision.copy(), result.site_location.copy())

    def _record(self, kind: str, point_unit, y: float | None) -> BoEvent:
        event = BoEvent(
            iteration=self.n_evaluations + (0 if kind == EVALUATION else 1),
            kind=kind,
            point=tuple(float(v) for v in self.domain.from_unit(point_unit)),
            y=y,
            incumbent=self.incumbent,
            wall_time=time.perf_counter() - self._t0,
        )
        self.trace.append(event)
        return event

    def _evaluate(self, u: np.ndarray) -> BoEvent:
        if self.config.variant == ADBO and self._virtuals:
            state = GpState(self._theta, virtual_obs=list(self._virtuals))
            removed_count = remove_conflicting_virtual(state, u, self.config.removal_radius)
            if removed_count:
                removed = [v for v in self._virtuals if v not in state.virtual_obs]
                self._virtuals = list(state.virtual_obs)
                self._warm_sites = None
                for v in removed:
                    self._record(VIRTUAL_REMOVED, v.x, None)
        x = self.domain.from_unit(u)
        y = float(self.objective(x))
        self._unit_x.append(np.asarray(u, dtype=float))
        self._raw_y.append(y)
        return self._record(EVALUATION, u, y)

    def _clip_inward(self, u: np.ndarray) -> np.ndarray:
        eps = self.config.epsilon_b
        return np.clip(u, eps, 1.0 - eps)

    def _near_existing(self, candidate: VirtualSignObservation) -> bool:
        return any(
            v.dim == candidate.dim
            and np.linalg.norm(v.x - candidate.x) < self.config.removal_radius
            for v in self._virtuals
        )

    # -- the loop ---------------------------------------------------------

    def initialize(self) -> None:
        pts = factorial_design(self.domain, self.config.init_inset)
        for p in pts[: self.config.budget]:
            self._evaluate(self.domain.to_unit(p))

    def _propose(self, attempt: int) -> np.ndarray:
        return propose_next(
            self.state,
            self.unit,
            self.config.beta,
            rng=self._rng(_ACQ_STREAM, self.n_evaluations, attempt),
        )

    def step(self) -> BoEvent:
        cfg = self.config
        fit_hyper = (
            self._evals_at_last_fit is None
            or self.n_evaluations - self._evals_at_last_fit >= cfg.hyperfit_stride
        )
        self._refit(fit_hyper)
        proposal = self._propose(0)

        if cfg.variant != VBO and cfg.epsilon_b > 0.0:
            attempts = 0
            while True:
                flagged = near_boundary_dims(proposal, self.unit, cfg.epsilon_b)
                if not flagged:
                    break
                _, candidates = project_and_signs(proposal, self.unit, flagged)
                if any(self._near_existing(c) for c in candidates):
                    if cfg.variant == DBO:
                        proposal = self._clip_inward(proposal)
                    # adbo: evaluate the border proposal itself; conflicting
                    # sites are removed by _evaluate
                    break
                if attempts >= cfg.max_virtual_retries:
                    proposal = self._clip_inward(proposal)
                    break
                if cfg.variant == ADBO:
                    kept = []
                    for c in candidates:
                        if adbo_gate(self.state, c, nu=cfg.nu, options=cfg.ep_options):
                            kept.append(c)
                        else:
                            self._record(VIRTUAL_REJECTED, c.x, None)
                    if not kept:
                        break  # evaluate exactly at the rejected border proposal
                    candidates = kept
                for c in candidates:
                    self._virtuals.append(c)
                    self._record(VIRTUAL_ADDED, c.x, None)
                self._refit(fit_hyper=False)
                attempts += 1
                proposal = self._propose(attempts)

        return self._evaluate(proposal)

    def run(self) -> BoTrace:
        self.initialize()
        while self.n_evaluations < self.config.budget:
            self.step()
        return self.trace


def run(objective, domain: BoxDomain, config: BoConfig) -> BoTrace:
    """Run one seeded optimization: factorial init, then steps until the budget."""
    return BoLoop(objective, domain, config).run()
