"""Shared independent oracles for the test suite (kept deliberately naive)."""

import numpy as np


def brute_force_gl(entries, estimates, variances):
    """Scalar-loop transcription of the bandwidth selection rule."""
    n = len(entries)
    est = [np.atleast_1d(np.asarray(e, dtype=float)) for e in estimates]
    a_terms = []
    for i in range(n):
        best = 0.0
        for j in range(n):
            if all(hj <= hi for hj, hi in zip(entries[j], entries[i])):
                gap = float(sum((est[i][k] - est[j][k]) ** 2 for k in range(est[i].size)))
                best = max(best, gap - (variances[i] + variances[j]))
        a_terms.append(best)
    crit = [a + v for a, v in zip(a_terms, variances)]
    cmin = min(crit)
    chosen = min((entries[i], i) for i in range(n) if crit[i] == cmin)[1]
    return a_terms, chosen


def gauss_legendre_1d(f, lo, hi, n=64):
    """Fixed-order Gauss-Legendre quadrature of a vectorized integrand."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return half * float(np.dot(weights, f(mid + half * nodes)))


def semi_oracle_fields(grid, times, form, grad_w, grad_v, mixture_means, mixture_std):
    """Exact quadrature fields for the deconvolution identity, no estimators.

    The reference density is a two-component Gaussian mixture with
    time-varying means, the drift field is defined as
    b(t, x) = -grad_v(x) - (grad_w * mu_t)(x) by 200-node quadrature, so the
    collapsed fields satisfy L b = -grad_w * (L mu) by construction.
    Returns (L_mu on grid, L_b on grid with component axis).
    """
    from scipy.stats import norm

    xs = grid.axis()
    nodes, weights = np.polynomial.legendre.leggauss(200)
    ynodes = grad_w.radius * nodes
    yweights = grad_w.radius * weights
    gw_vals = grad_w(ynodes)

    def mixture_pdf(t, x):
        m1, m2 = mixture_means(t)
        return 0.5 * norm.pdf(x, m1, mixture_std) + 0.5 * norm.pdf(x, m2, mixture_std)

    l_mu = np.zeros(xs.size)
    l_b = np.zeros(xs.size)
    for k, t in enumerate(times):
        w = form.weights[k]
        if w == 0.0:
            continue
        l_mu += w * mixture_pdf(t, xs)
        conv = (yweights * gw_vals)[None, :] @ mixture_pdf(t, xs[:, None] - ynodes[None, :]).T
        l_b += w * (-grad_v(xs) - conv.reshape(-1))
    return l_mu, l_b[:, None]


def fourier_transform_quad(f, support_radius, freqs, n=400):
    """Independent continuous Fourier transform by fixed-order quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    xs = support_radius * nodes
    ws = support_radius * weights
    vals = f(xs)
    phases = np.exp(-2j * np.pi * np.outer(freqs, xs))
    return phases @ (ws * vals)
