"""Pure-numpy covariance backend.

Reference implementation of the mixed value/derivative covariance kernel;
`edgebo._covcy` is the compiled twin.  Both must produce identical results
(up to floating-point associativity) and are selected in `edgebo.kernels`.
"""
import numpy as np


def mixed_cov(xa, ka, da, xb, kb, db, signal_variance, inv_len2):
    """Covariance matrix between two sets of mixed latents.

    Latent ``i`` of a set is the function value at row ``i`` of ``x`` when
    ``k[i] == 0``, or the partial derivative along axis ``d[i]`` when
    ``k[i] == 1``.  ``inv_len2`` holds 1/lengthscale**2 per input axis.
    """
    diff = xa[:, None, :] - xb[None, :, :]
    s = np.einsum("abg,g->ab", diff * diff, inv_len2)
    k = signal_variance * np.exp(-0.5 * s)

    a_is_der = ka[:, None] == 1
    b_is_der = kb[None, :] == 1
    if not (a_is_der.any() or b_is_der.any()):
        return k

    # d/dx1 factor for row latents, d/dx2 factor for column latents
    diff_a = np.take_along_axis(diff, da[:, None, None], axis=2)[:, :, 0]
    diff_b = np.take_along_axis(diff, db[None, :, None], axis=2)[:, :, 0]
    fa = np.where(a_is_der, -diff_a * inv_len2[da][:, None], 1.0)
    fb = np.where(b_is_der, diff_b * inv_len2[db][None, :], 1.0)
    same_axis = a_is_der & b_is_der & (da[:, None] == db[None, :])
    extra = np.where(same_axis, inv_len2[da][:, None], 0.0)
    return k * (fa * fb + extra)
