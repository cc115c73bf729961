"""Squared-exponential kernel with analytic derivative cross-covariances.

The kernel is the anisotropic SE

    k(x1, x2) = signal_variance * exp(-0.5 * sum_g (x1_g - x2_g)^2 / l_g^2)

extended to latents that are partial derivatives of the function: since
differentiation is linear, cov(df/dx1_g, f) = d/dx1_g cov(f, f) and
cov(df/dx1_g, df/dx2_h) = d^2/dx1_g dx2_h cov(f, f), both available in
closed form for the SE family.

Matrix assembly is delegated to a backend: the compiled extension
``edgebo._covcy`` when importable, else the pure-numpy ``edgebo._covnp``.
Set ``EDGEBO_BACKEND=numpy`` (or ``cython``) to force one.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

_requested = os.environ.get("EDGEBO_BACKEND")
if _requested not in (None, "", "numpy", "cython"):
    raise ImportError(f"EDGEBO_BACKEND must be 'numpy' or 'cython', got {_requested!r}")
if _requested == "numpy":
    from . import _covnp as _backend

    _BACKEND_NAME = "numpy"
else:
    try:
        from . import _covcy as _backend

        _BACKEND_NAME = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from . import _covnp as _backend

        _BACKEND_NAME = "numpy"

DEFAULT_JITTER_SCALE = 1e-8
MAX_JITTER_SCALE = 1e-2


def active_backend() -> str:
    """Name of the covariance backend in use ('cython' or 'numpy')."""
    return _BACKEND_NAME


class LatentKind(IntEnum):
    VALUE = 0
    PARTIAL_DERIVATIVE = 1


@dataclass(frozen=True)
class LatentIndex:
    """Reference to one latent: a function value or a partial derivative.

    ``point_index`` refers to a row of the points array handed to
    :func:`build_joint_gram`; ``dim`` is the differentiation axis and must be
    given exactly when ``kind`` is PARTIAL_DERIVATIVE.
    """

    kind: LatentKind
    point_index: int
    dim: int | None = None

    def __post_init__(self):
        if self.kind == LatentKind.PARTIAL_DERIVATIVE:
            if self.dim is None:
                raise ValueError("derivative latent requires a dim index")
            if self.dim < 0:
                raise ValueError(f"dim index must be nonnegative, got {self.dim}")
        elif self.dim is not None:
            raise ValueError("value latent must not carry a dim index")


@dataclass(frozen=True, eq=False)
class KernelHyperparams:
    """SE kernel and Gaussian-likelihood hyperparameters.

    ``jitter`` is the diagonal stabilizer added by :func:`build_joint_gram`;
    it defaults to ``1e-8 * signal_variance``.
    """

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0
    jitter: float | None = None

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.jitter is None:
            object.__setattr__(self, "jitter", DEFAULT_JITTER_SCALE * self.signal_variance)
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not np.all(ls > 0):
            raise ValueError(f"all lengthscales must be > 0, got {ls}")
        if self.noise_variance < 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")
        if not self.jitter > 0:
            raise ValueError(f"jitter must be > 0, got {self.jitter}")

    @property
    def dimension(self) -> int:
        return self.lengthscales.shape[0]

    @property
    def inv_len2(self) -> np.ndarray:
        return 1.0 / (self.lengthscales * self.lengthscales)

    def replace(self, **changes) -> "KernelHyperparams":
        fields = {
            "signal_variance": self.signal_variance,
            "lengthscales": self.lengthscales,
            "noise_variance": self.noise_variance,
            "jitter": None,  # rederive unless explicitly overridden
        }
        fields.update(changes)
        return KernelHyperparams(**fields)


def _as_point(x, d: int, name: str) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.shape[0] != d:
        raise ValueError(f"{name} must be a point of dimension {d}, got shape {p.shape}")
    return p


def _check_dim(g: int, d: int) -> None:
    if not 0 <= g < d:
        raise ValueError(f"dim index {g} out of range for dimension {d}")


def cov_ff(x1, x2, hp: KernelHyperparams) -> float:
    """SE covariance between two function values."""
    d = hp.dimension
    p1 = _as_point(x1, d, "x1")
    p2 = _as_point(x2, d, "x2")
    delta = p1 - p2
    return hp.signal_variance * float(np.exp(-0.5 * np.dot(delta * delta, hp.inv_len2)))


def cov_df(x1, g: int, x2, hp: KernelHyperparams) -> float:
    """cov(df/dx1_g at x1, f at x2) = d/dx1_g cov_ff(x1, x2)."""
    _check_dim(g, hp.dimension)
    delta_g = _as_point(x1, hp.dimension, "x1")[g] - _as_point(x2, hp.dimension, "x2")[g]
    return -delta_g * hp.inv_len2[g] * cov_ff(x1, x2, hp)


def cov_dd(x1, g: int, x2, h: int, hp: KernelHyperparams) -> float:
    """cov(df/dx1_g at x1, df/dx2_h at x2) = d^2/dx1_g dx2_h cov_ff(x1, x2)."""
    d = hp.dimension
    _check_dim(g, d)
    _check_dim(h, d)
    p1 = _as_point(x1, d, "x1")
    p2 = _as_point(x2, d, "x2")
    inv2 = hp.inv_len2
    fa = -(p1[g] - p2[g]) * inv2[g]
    fb = (p1[h] - p2[h]) * inv2[h]
    kron = inv2[g] if g == h else 0.0
    return cov_ff(x1, x2, hp) * (fa * fb + kron)


def latents_to_arrays(indices, points):
    """Flatten LatentIndex records into the (X, kinds, dims) backend layout."""
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    n_pts = pts.shape[0]
    rows = np.empty(len(indices), dtype=np.int64)
    kinds = np.empty(len(indices), dtype=np.uint8)
    dims = np.zeros(len(indices), dtype=np.int64)
    for i, idx in enumerate(indices):
        if not 0 <= idx.point_index < n_pts:
            raise ValueError(f"latent {i} references point {idx.point_index} of {n_pts}")
        rows[i] = idx.point_index
        kinds[i] = int(idx.kind)
        if idx.kind == LatentKind.PARTIAL_DERIVATIVE:
            _check_dim(idx.dim, pts.shape[1])
            dims[i] = idx.dim
    return np.ascontiguousarray(pts[rows]), kinds, dims


def mixed_cov_arrays(xa, ka, da, xb, kb, db, hp: KernelHyperparams) -> np.ndarray:
    """Backend dispatch for an (na, nb) mixed-latent covariance block."""
    if xa.shape[1] != hp.dimension or xb.shape[1] != hp.dimension:
        raise ValueError("point dimension does not match hyperparameters")
    return _backend.mixed_cov(
        np.ascontiguousarray(xa, dtype=np.float64),
        np.ascontiguousarray(ka, dtype=np.uint8),
        np.ascontiguousarray(da, dtype=np.int64),
        np.ascontiguousarray(xb, dtype=np.float64),
        np.ascontiguousarray(kb, dtype=np.uint8),
        np.ascontiguousarray(db, dtype=np.int64),
        hp.signal_variance,
        np.ascontiguousarray(hp.inv_len2, dtype=np.float64),
    )


def gram_from_arrays(x, kinds, dims, hp: KernelHyperparams) -> np.ndarray:
    """Joint Gram over one latent set, with jitter on the diagonal."""
    gram = mixed_cov_arrays(x, kinds, dims, x, kinds, dims, hp)
    gram[np.diag_indices_from(gram)] += hp.jitter
    return gram


def build_joint_gram(indices, points, hp: KernelHyperparams) -> np.ndarray:
    """Gram matrix over mixed value/derivative latents (jitter included).

    Entry (a, b) dispatches to cov_ff / cov_df / cov_dd according to the
    latent kinds; the result is exactly symmetric.
    """
    x, kinds, dims = latents_to_arrays(indices, points)
    return gram_from_arrays(x, kinds, dims, hp)


def prior_variances(kinds, dims, hp: KernelHyperparams) -> np.ndarray:
    """Zero-lag prior variance per latent: sigma_f^2 for values, sigma_f^2/l_g^2 for derivatives."""
    out = np.full(len(kinds), hp.signal_variance)
    der = np.asarray(kinds) == int(LatentKind.PARTIAL_DERIVATIVE)
    if der.any():
        out[der] = hp.signal_variance * hp.inv_len2[np.asarray(dims)[der]]
    return out
