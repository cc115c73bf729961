"""Synthetic objective suites, noise model and initial design for the benchmarks.

All objectives are minimization problems; density-based families are negated
so the bump peak becomes the global minimum.  Evaluators accept a single
point or an (n, d) batch.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import BoxDomain, unit_box

_MND_STREAM = 0x6F626A  # namespace tag so objective draws never collide with loop seeds


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Additive zero-mean Gaussian observation noise with standard deviation std."""

    std: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """A noise-free synthetic objective with (optional) documented minimum."""

    name: str
    dimension: int
    domain: BoxDomain
    evaluator: Callable[[np.ndarray], np.ndarray]
    known_minimum: tuple[np.ndarray, float] | None
    family: str

    def __post_init__(self):
        if self.known_minimum is not None:
            point, value = self.known_minimum
            point = np.atleast_1d(np.asarray(point, dtype=float))
            object.__setattr__(self, "known_minimum", (point, float(value)))
            if not self.domain.contains(point):
                raise ValueError(f"{self.name}: documented minimum {point} not inside the domain")
            got = float(self.evaluator(point))
            if abs(got - value) > 1e-9:
                raise ValueError(
                    f"{self.name}: documented minimum value {value} != evaluator value {got}"
                )

    def __call__(self, x) -> float:
        return float(self.evaluator(np.asarray(x, dtype=float)))


def add_noise(y: float, noise: NoiseModel, rng) -> float:
    """y plus one draw of the noise model (exact y when std is zero)."""
    if noise.std == 0.0:
        return float(y)
    return float(y + noise.std * rng.standard_normal())


def factorial_design(domain: BoxDomain, inset: float = 0.0) -> np.ndarray:
    """All 2^d corner combinations, pulled `inset` edge-fractions inwards."""
    if not 0.0 <= inset < 0.5:
        raise ValueError(f"inset must lie in [0, 0.5), got {inset}")
    lo = domain.lower + inset * domain.edge
    hi = domain.upper - inset * domain.edge
    levels = [(lo[g], hi[g]) for g in range(domain.dimension)]
    return np.array(list(itertools.product(*levels)), dtype=float)


# -- two-Gaussian bump function (2-d showcase) --------------------------------

_TG_CENTERS = (np.array([0.25, 0.75]), np.array([0.65, 0.35]))
_TG_DEPTHS = (0.6, 1.0)
_TG_WIDTHS = (0.18, 0.15)
# argmin/value refined numerically to full precision once and frozen here
_TG_MINIMUM = (
    np.array([0.6487725000170109, 0.35122750001858466]),
    -1.0043653421711674,
)


def _two_gaussian_eval(x: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(x)
    total = np.zeros(pts.shape[0])
    for center, depth, width in zip(_TG_CENTERS, _TG_DEPTHS, _TG_WIDTHS):
        sq = np.sum((pts - center) ** 2, axis=1)
        total -= depth * np.exp(-0.5 * sq / width**2)
    return total if x.ndim > 1 else total[0]


def two_gaussian_2d() -> ObjectiveSpec:
    """Two interior Gaussian wells of unequal depth on the unit square."""
    return ObjectiveSpec(
        name="two_gaussian_2d",
        dimension=2,
        domain=unit_box(2),
        evaluator=_two_gaussian_eval,
        known_minimum=_TG_MINIMUM,
        family="two_gaussian",
    )


# -- random multivariate-normal bump functions --------------------------------


class _NegativeGaussianDensity:
    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = mean
        self.inv_cov = np.linalg.inv(cov)
        d = mean.shape[0]
        _, logdet = np.linalg.slogdet(cov)
        self.log_norm = -0.5 * (d * math.log(2.0 * math.pi) + logdet)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(x)
        delta = pts - self.mean
        q = np.einsum("ni,ij,nj->n", delta, self.inv_cov, delta)
        vals = -np.exp(self.log_norm - 0.5 * q)
        return vals if x.ndim > 1 else vals[0]


def random_mnd(seed: int, d: int = 3, interior: bool = True) -> ObjectiveSpec:
    """Negative density of a randomly drawn multivariate normal on the unit box.

    interior=True keeps the minimizer strictly inside (rejecting draws whose
    dense-grid argmin comes within 1% of a border); interior=False plants the
    mean exactly on a uniformly chosen boundary facet instead.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    rng = np.random.default_rng([seed, _MND_STREAM])
    domain = unit_box(d)
    for _ in range(1000):
        mean = rng.uniform(0.1, 0.9, size=d)
        if not interior:
            facet = int(rng.integers(d))
            mean[facet] = float(rng.integers(2))
        a = rng.standard_normal((d, d))
        raw = a @ a.T + 0.01 * np.eye(d)
        scale_to_corr = 1.0 / np.sqrt(np.diag(raw))
        corr = raw * np.outer(scale_to_corr, scale_to_corr)
        stds = rng.uniform(0.1, 0.5, size=d)
        cov = corr * np.outer(stds, stds)
        if np.linalg.cond(cov) > 100.0:
            continue
        evaluator = _NegativeGaussianDensity(mean, cov)
        if interior and d <= 3 and _grid_argmin_near_border(evaluator, domain, 0.01):
            continue
        tag = "interior" if interior else "border"
        return ObjectiveSpec(
            name=f"mnd-{tag}-d{d}-seed{seed}",
            dimension=d,
            domain=domain,
            evaluator=evaluator,
            known_minimum=(mean, float(evaluator(mean))),
            family="mnd" if interior else "mnd_border",
        )
    raise RuntimeError(f"could not draw an acceptable MND objective after 1000 tries (seed {seed})")


def _grid_argmin_near_border(evaluator, domain: BoxDomain, margin: float, points: int = 41) -> bool:
    axes = [np.linspace(domain.lower[g], domain.upper[g], points) for g in range(domain.dimension)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dimension)
    argmin = grid[int(np.argmin(evaluator(grid)))]
    dist = np.minimum(argmin - domain.lower, domain.upper - argmin) / domain.edge
    return bool(np.any(dist < margin))


# -- named library functions (stand-in for an external benchmark set) ----------


def _branin_eval(x: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(x)
    x1, x2 = pts[:, 0], pts[:, 1]
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    t = 1.0 / (8.0 * math.pi)
    vals = (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0
    return vals if x.ndim > 1 else vals[0]


_HART3_A = np.array([[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]])
_HART3_C = np.array([1.0, 1.2, 3.0, 3.2])
_HART3_P = 1e-4 * np.array(
    [[3689.0, 1170.0, 2673.0], [4699.0, 4387.0, 7470.0], [1091.0, 8732.0, 5547.0], [381.0, 5743.0, 8828.0]]
)


def _hartmann3_eval(x: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(x)
    sq = np.sum(_HART3_A[None, :, :] * (pts[:, None, :] - _HART3_P[None, :, :]) ** 2, axis=2)
    vals = -np.sum(_HART3_C * np.exp(-sq), axis=1)
    return vals if x.ndim > 1 else vals[0]


def _camel6_eval(x: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(x)
    x1, x2 = pts[:, 0], pts[:, 1]
    vals = (4.0 - 2.1 * x1**2 + x1**4 / 3.0) * x1**2 + x1 * x2 + (-4.0 + 4.0 * x2**2) * x2**2
    return vals if x.ndim > 1 else vals[0]


def library_suite() -> list[ObjectiveSpec]:
    """Three well-known multimodal minimization problems with interior minima.

    Branin (three global minima, value 5/(4*pi) exactly), Hartmann-3 and the
    six-hump camel; documented minima refined numerically and frozen.
    """
    branin = ObjectiveSpec(
        name="branin",
        dimension=2,
        domain=BoxDomain(np.array([-5.0, 0.0]), np.array([10.0, 15.0])),
        evaluator=_branin_eval,
        known_minimum=(np.array([math.pi, 2.275]), 5.0 / (4.0 * math.pi)),
        family="library",
    )
    hartmann3 = ObjectiveSpec(
        name="hartmann3",
        dimension=3,
        domain=unit_box(3),
        evaluator=_hartmann3_eval,
        known_minimum=(
            np.array([0.11458887483682521, 0.5556488932751209, 0.8525469842479309]),
            -3.862779787332663,
        ),
        family="library",
    )
    camel = ObjectiveSpec(
        name="camel6",
        dimension=2,
        domain=BoxDomain(np.array([-3.0, -2.0]), np.array([3.0, 2.0])),
        evaluator=_camel6_eval,
        known_minimum=(
            np.array([0.08984201315306924, -0.7126564032584802]),
            -1.0316284534898774,
        ),
        family="library",
    )
    return [branin, hartmann3, camel]
