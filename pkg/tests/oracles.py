"""Independent physical-space oracles used by the tests.

Nothing here calls the library's own trilinear or synthesis code: mode
profiles, gradients and projections are rebuilt from the plane-wave formulas.
"""

import numpy as np

TWO_PI = 2 * np.pi


def grid(n):
    x = np.arange(n) / n
    return np.meshgrid(x, x, x, indexing="ij")


def mode_field(mode, X):
    """Vector field (3, n, n, n) of one basis function, plus its gradient (3, 3, n, n, n)."""
    n = X[0].shape
    u = np.asarray(mode.vector)
    if not mode.is_wave:
        f = np.broadcast_to(u[:, None, None, None], (3,) + n).copy()
        return f, np.zeros((3, 3) + n)
    k = np.asarray(mode.k, dtype=float)
    theta = TWO_PI * (k[0] * X[0] + k[1] * X[1] + k[2] * X[2])
    if mode.parity == "cos":
        prof, dprof = np.sqrt(2) * np.cos(theta), -np.sqrt(2) * np.sin(theta)
    else:
        prof, dprof = np.sqrt(2) * np.sin(theta), np.sqrt(2) * np.cos(theta)
    f = u[:, None, None, None] * prof
    # grad[i, j] = d_j f_i
    g = (u[:, None] * (TWO_PI * k)[None, :])[:, :, None, None, None] * dprof
    return f, g


def quadrature_trilinear(m0, m1, m2, n=16):
    """<(e1 . grad) e2, e0> by grid averaging (exact for trig polynomials on fine grids)."""
    X = grid(n)
    e0, _ = mode_field(m0, X)
    e1, _ = mode_field(m1, X)
    _, g2 = mode_field(m2, X)
    adv = np.einsum("jxyz,ijxyz->ixyz", e1, g2)
    return float(np.mean(np.sum(adv * e0, axis=0)))


def pseudo_spectral_nonlinear(basis, coeffs, n=32):
    """P((u . grad) u) projected on the basis, via FFT derivatives on an n^3 grid."""
    X = grid(n)
    u = np.zeros((3, n, n, n))
    for c, md in zip(coeffs, basis.modes):
        if c:
            f, _ = mode_field(md, X)
            u += c * f
    kk = np.fft.fftfreq(n, 1.0 / n)
    K = np.meshgrid(kk, kk, kk, indexing="ij")
    uh = np.fft.fftn(u, axes=(1, 2, 3))
    adv = np.zeros_like(u)
    for j in range(3):
        du = np.real(np.fft.ifftn(1j * TWO_PI * K[j] * uh, axes=(1, 2, 3)))
        adv += u[j] * du
    out = np.zeros(len(basis))
    for i, md in enumerate(basis.modes):
        e, _ = mode_field(md, X)
        out[i] = np.mean(np.sum(adv * e, axis=0))
    return out
