"""Reference numpy implementations of the hot kernels.

Every function here has a compiled twin in ``cyops.pyx`` with identical
semantics. Callers pass C-contiguous arrays of the documented dtypes;
nothing here validates shapes beyond what numpy enforces.

Shape conventions: ``u`` and ``g`` are (B, K, K) complex128 field stacks,
``theta`` is a (K, K) float64 phase map, ``rects`` is an (R, 4) int64 table
of half-open pixel bounds (r0, r1, c0, c1).
"""

import numpy as np


def phase_modulator(theta):
    """exp(i*theta) as complex128."""
    return np.exp(1j * theta)


def apply_modulator(u, mod):
    """Elementwise u * mod, broadcast over the batch axis."""
    return u * mod


def apply_modulator_conj(g, mod):
    """Elementwise g * conj(mod), broadcast over the batch axis."""
    return g * np.conj(mod)


def phase_grad_accum(u_post, g_post, out):
    """out += sum over batch of Im(conj(u_post) * g_post), in place.

    Real formulation avoids complex temporaries: Im(conj(a)*b) =
    re(a)*im(b) - im(a)*re(b).
    """
    out += np.einsum("bij,bij->ij", u_post.real, g_post.imag)
    out -= np.einsum("bij,bij->ij", u_post.imag, g_post.real)
    return out


def intensity(u):
    """|u|^2 without the sqrt round-trip of abs()."""
    return u.real * u.real + u.imag * u.imag


def intensity_cotangent(u, dldi):
    """Field cotangent of I = |u|^2: 2 * dldi * u."""
    return u * (2.0 * dldi)


def spectral_scale(spec, factors):
    """spec *= factors in place; factors broadcast over the batch axis."""
    np.multiply(spec, factors, out=spec)
    return spec


def pool_rects(scores_map, rects):
    """Mean intensity over each rectangle: (B, K, K) -> (B, R)."""
    nbatch = scores_map.shape[0]
    out = np.empty((nbatch, rects.shape[0]), dtype=np.float64)
    for r in range(rects.shape[0]):
        r0, r1, c0, c1 = rects[r]
        out[:, r] = scores_map[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def scatter_rects(coef, rects, side):
    """Adjoint of pool_rects: spread coef[:, r]/area over rect r."""
    out = np.zeros((coef.shape[0], side, side), dtype=np.float64)
    for r in range(rects.shape[0]):
        r0, r1, c0, c1 = rects[r]
        area = (r1 - r0) * (c1 - c0)
        out[:, r0:r1, c0:c1] += (coef[:, r] / area)[:, None, None]
    return out


def penalty_terms(intensity_map, mask, scale):
    """Masked squared-intensity penalty and its intensity gradient.

    Returns (values, grad) with values[b] = scale * sum(mask * I[b]^2)
    and grad = 2 * scale * mask * I.
    """
    masked = intensity_map * mask
    values = scale * np.einsum("bij,bij->b", masked, intensity_map)
    grad = (2.0 * scale) * masked
    return values, grad


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
    return param
