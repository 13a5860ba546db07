"""Compiled radial integration kernels.

The reduced radial problem for one angular sector of -Delta + V on R^4 is
integrated in Liouville form u(r) = r^{3/2} f(r), where psi = f(r) Y_l:

    u'' = W(r) u,   W(r) = (nu^2 - 1/4)/r^2 + V(r) - lambda,   nu = l + 1.

Near the origin the regular solution behaves like r^{nu + 1/2}; the kernel
starts from a two-term power series at r0 = 1e-6 * range, crosses the
singular layer in the log variable t = ln r (where the reduced function
z(t) = u e^{-(nu+1/2) t} obeys the non-stiff equation
z'' + 2 nu z' = (V - lambda) e^{2t} z), and continues outward with an
adaptive Cash-Karp RK4(5) step on (u, u').

Only ratios of (u, u') are meaningful to callers that fit phases; the true
magnitude is carried separately as exp(log_scale) so that deep centrifugal
suppression at large nu never underflows.
"""

import numpy as np
from numba import njit

# family codes shared with potential.RadialPotential
FAMILY_SQUARE_WELL = 0
FAMILY_GAUSSIAN = 1
FAMILY_EXPONENTIAL = 2
FAMILY_TABULATED = 3

# status codes returned by integrate_radial
STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2

_MAX_STEPS = 50_000_000
_RENORM_LIMIT = 1e100


@njit(cache=True, inline="always")
def _profile(family, r, rng, tab_x, tab_c):
    """Unit-coupling radial profile, so V(r) = -g * profile(r)."""
    if family == FAMILY_SQUARE_WELL:
        return 1.0 if r <= rng else 0.0
    if family == FAMILY_GAUSSIAN:
        x = r / rng
        return np.exp(-x * x)
    if family == FAMILY_EXPONENTIAL:
        return np.exp(-r / rng)
    # tabulated: piecewise cubic (monotone Hermite coefficients from the host)
    n = tab_x.shape[0]
    if r <= tab_x[0]:
        return tab_c[3, 0]
    if r >= tab_x[n - 1]:
        return 0.0
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tab_x[mid] <= r:
            lo = mid
        else:
            hi = mid
    d = r - tab_x[lo]
    return ((tab_c[0, lo] * d + tab_c[1, lo]) * d + tab_c[2, lo]) * d + tab_c[3, lo]


@njit(cache=True, inline="always")
def _vpot(family, g, rng, support, r, tab_x, tab_c):
    if r >= support:
        return 0.0
    return -g * _profile(family, r, rng, tab_x, tab_c)


@njit(cache=True)
def integrate_radial(family, g, rng, support, tab_x, tab_c, nu, lam,
                     r_out, rtol, step_scale):
    """Outward integration of the regular solution; sample at r_out.

    Returns (u, du, log_scale, nodes, status, nsteps) where u, du, log_scale
    are arrays over the increasing output radii r_out.  True values are
    u * exp(log_scale); nodes is the count of strict sign changes of u on
    (0, r_out[-1]].
    """
    n_out = r_out.shape[0]
    us = np.zeros(n_out)
    dus = np.zeros(n_out)
    lss = np.zeros(n_out)

    r0 = 1e-6 * rng
    gcap = abs(g)
    rs = 0.35 / np.sqrt(lam + gcap + 1e-300)
    if rs > 0.05 * rng:
        rs = 0.05 * rng
    if rs < 4.0 * r0:
        rs = 4.0 * r0
    if rs > 0.5 * r_out[0]:
        rs = 0.5 * r_out[0]

    nodes = 0
    nsteps = 0

    # ---- origin layer in t = ln r:  z'' + 2 nu z' = (V - lam) r^2 z ----
    t0 = np.log(r0)
    t1 = np.log(rs)
    ht = 1.25 / (2.0 * nu + 2.0)
    if ht > 0.02:
        ht = 0.02
    ht *= step_scale
    nst = int((t1 - t0) / ht) + 1
    ht = (t1 - t0) / nst
    c2 = (_vpot(family, g, rng, support, 0.0, tab_x, tab_c) - lam) / (4.0 * (nu + 1.0))
    z = 1.0 + c2 * r0 * r0
    dz = 2.0 * c2 * r0 * r0
    t = t0
    for _ in range(nst):
        r1 = np.exp(t)
        q1 = (_vpot(family, g, rng, support, r1, tab_x, tab_c) - lam) * r1 * r1
        k1z = dz
        k1d = -2.0 * nu * dz + q1 * z
        rh = np.exp(t + 0.5 * ht)
        qh = (_vpot(family, g, rng, support, rh, tab_x, tab_c) - lam) * rh * rh
        z2 = z + 0.5 * ht * k1z
        d2 = dz + 0.5 * ht * k1d
        k2z = d2
        k2d = -2.0 * nu * d2 + qh * z2
        z3 = z + 0.5 * ht * k2z
        d3 = dz + 0.5 * ht * k2d
        k3z = d3
        k3d = -2.0 * nu * d3 + qh * z3
        r4 = np.exp(t + ht)
        q4 = (_vpot(family, g, rng, support, r4, tab_x, tab_c) - lam) * r4 * r4
        z4 = z + ht * k3z
        d4 = dz + ht * k3d
        k4z = d4
        k4d = -2.0 * nu * d4 + q4 * z4
        zn = z + ht * (k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0
        dz = dz + ht * (k1d + 2.0 * k2d + 2.0 * k3d + k4d) / 6.0
        if zn * z < 0.0:
            nodes += 1
        z = zn
        t += ht
        nsteps += 1

    u = z
    du = ((nu + 0.5) * z + dz) / rs
    log_scale = (nu + 0.5) * np.log(rs)

    # ---- bulk: Cash-Karp RK4(5) on u'' = W u ----
    B21 = 0.2
    B31, B32 = 3.0 / 40.0, 9.0 / 40.0
    B41, B42, B43 = 0.3, -0.9, 1.2
    B51, B52, B53, B54 = -11.0 / 54.0, 2.5, -70.0 / 27.0, 35.0 / 27.0
    B61, B62, B63, B64, B65 = (1631.0 / 55296.0, 175.0 / 512.0,
                               575.0 / 13824.0, 44275.0 / 110592.0,
                               253.0 / 4096.0)
    C1, C3, C4, C6 = 37.0 / 378.0, 250.0 / 621.0, 125.0 / 594.0, 512.0 / 1771.0
    D1 = C1 - 2825.0 / 27648.0
    D3 = C3 - 18575.0 / 48384.0
    D4 = C4 - 13525.0 / 55296.0
    D5 = -277.0 / 14336.0
    D6 = C6 - 0.25

    rtol_eff = rtol * step_scale ** 5
    nu2 = nu * nu - 0.25
    r = rs
    iout = 0
    h = 0.01 * rs * step_scale
    status = STATUS_OK
    while iout < n_out:
        if nsteps >= _MAX_STEPS:
            status = STATUS_MAX_STEPS
            break
        hit = False
        if r + h >= r_out[iout]:
            h = r_out[iout] - r
            hit = True
            if h <= 1e-14 * r:
                us[iout] = u
                dus[iout] = du
                lss[iout] = log_scale
                iout += 1
                h = 0.01 * rs * step_scale
                continue
        if h < 1e-15 * r:
            status = STATUS_STEP_UNDERFLOW
            break

        W1 = nu2 / (r * r) + _vpot(family, g, rng, support, r, tab_x, tab_c) - lam
        k1u = du
        k1d = W1 * u
        ra = r + 0.2 * h
        W2 = nu2 / (ra * ra) + _vpot(family, g, rng, support, ra, tab_x, tab_c) - lam
        u2 = u + h * B21 * k1u
        p2 = du + h * B21 * k1d
        k2u = p2
        k2d = W2 * u2
        ra = r + 0.3 * h
        W3 = nu2 / (ra * ra) + _vpot(family, g, rng, support, ra, tab_x, tab_c) - lam
        u3 = u + h * (B31 * k1u + B32 * k2u)
        p3 = du + h * (B31 * k1d + B32 * k2d)
        k3u = p3
        k3d = W3 * u3
        ra = r + 0.6 * h
        W4 = nu2 / (ra * ra) + _vpot(family, g, rng, support, ra, tab_x, tab_c) - lam
        u4 = u + h * (B41 * k1u + B42 * k2u + B43 * k3u)
        p4 = du + h * (B41 * k1d + B42 * k2d + B43 * k3d)
        k4u = p4
        k4d = W4 * u4
        ra = r + h
        W5 = nu2 / (ra * ra) + _vpot(family, g, rng, support, ra, tab_x, tab_c) - lam
        u5 = u + h * (B51 * k1u + B52 * k2u + B53 * k3u + B54 * k4u)
        p5 = du + h * (B51 * k1d + B52 * k2d + B53 * k3d + B54 * k4d)
        k5u = p5
        k5d = W5 * u5
        ra = r + 0.875 * h
        W6 = nu2 / (ra * ra) + _vpot(family, g, rng, support, ra, tab_x, tab_c) - lam
        u6 = u + h * (B61 * k1u + B62 * k2u + B63 * k3u + B64 * k4u + B65 * k5u)
        p6 = du + h * (B61 * k1d + B62 * k2d + B63 * k3d + B64 * k4d + B65 * k5d)
        k6u = p6
        k6d = W6 * u6

        un = u + h * (C1 * k1u + C3 * k3u + C4 * k4u + C6 * k6u)
        dn = du + h * (C1 * k1d + C3 * k3d + C4 * k4d + C6 * k6d)
        eu = h * (D1 * k1u + D3 * k3u + D4 * k4u + D5 * k5u + D6 * k6u)
        ed = h * (D1 * k1d + D3 * k3d + D4 * k4d + D5 * k5d + D6 * k6d)
        su = abs(u) + abs(h * du) + 1e-300
        sd = abs(du) + abs(h * k1d) + 1e-300
        err = abs(eu) / su
        e2 = abs(ed) / sd
        if e2 > err:
            err = e2
        err /= rtol_eff
        nsteps += 1
        if err <= 1.0:
            if un * u < 0.0:
                nodes += 1
            r += h
            u = un
            du = dn
            if hit:
                us[iout] = u
                dus[iout] = du
                lss[iout] = log_scale
                iout += 1
            au = abs(u)
            ad = abs(du)
            m = au if au > ad else ad
            if m > _RENORM_LIMIT or (0.0 < m < 1.0 / _RENORM_LIMIT):
                u /= m
                du /= m
                log_scale += np.log(m)
            fac = 0.9 * err ** -0.2
            if fac > 5.0:
                fac = 5.0
            h *= fac
        else:
            fac = 0.9 * err ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
    return us, dus, lss, nodes, status, nsteps


@njit(cache=True)
def batch_phases_raw(family, g, rng, support, tab_x, tab_c, ells, lam, r_m,
                     rtol, step_scale):
    """(u, u') at the matching radius for every requested ell at one energy."""
    n = ells.shape[0]
    us = np.empty(n)
    dus = np.empty(n)
    stats = np.zeros(n, dtype=np.int64)
    r_out = np.empty(1)
    r_out[0] = r_m
    for i in range(n):
        nu = ells[i] + 1.0
        u, du, ls, nodes, status, _ = integrate_radial(
            family, g, rng, support, tab_x, tab_c, nu, lam, r_out, rtol,
            step_scale)
        us[i] = u[0]
        dus[i] = du[0]
        stats[i] = status
    return us, dus, stats
