"""Radial reduction of the 4D Schrodinger problem, per angular momentum ell.

For psi = f(r) Y_ell with a degree-ell spherical harmonic Y_ell on S^3 the
equation (-Delta + V - lambda) psi = 0 reduces to

    f'' + (3/r) f' + (lambda - V(r) - ell(ell+2)/r^2) f = 0,

whose free solutions at lambda = k^2 > 0 are J_{ell+1}(kr)/r and
Y_{ell+1}(kr)/r (integer Bessel order ell+1; the Liouville substitution
u = r^{3/2} f used by the integrator shifts the centrifugal coefficient to
(ell+1)^2 - 1/4 and is documented in _kernels).  At lambda = 0 the free
solutions are r^ell and r^{-ell-2}.

The degeneracy ofphase data in the full problem is (ell+1)^2, the dimension
of the degree-ell spherical harmonics on S^3 (harmonics of degree ell in 4
variables: (ell+1)(ell+2)(2ell+2)/... reduces to (ell+1)^2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ._kernels import (STATUS_MAX_STEPS, STATUS_OK, STATUS_STEP_UNDERFLOW,
                       integrate_radial)
from .potential import RadialPotential, kernel_args

# default local tolerance of the adaptive radial step
DEFAULT_RTOL = 1e-12

# weighted-phase threshold below which a (ell, lambda) entry is certified
# negligible and skipped outright
SKIP_WEIGHTED_PHASE = 1e-9

# an entry adjacent to a skipped region must itself be this small (radians)
SKIP_BOUNDARY_TOL = 5e-2

# unwrapping: adjacent samples must differ by less than this after branch
# matching, else the grid is refined
UNWRAP_MAX_JUMP = 0.5 * math.pi


class RadialIntegrationError(RuntimeError):
    pass


class MatchingError(RuntimeError):
    pass


class BesselError(RuntimeError):
    pass


class UnwrapError(RuntimeError):
    pass


def degeneracy(ell: int) -> int:
    """Multiplicity (ell+1)^2 of the degree-ell harmonics on S^3."""
    return (ell + 1) ** 2


# ---------------------------------------------------------------------------
# Bessel evaluation and zeros
# ---------------------------------------------------------------------------

def bessel_pair(order: int, x: float):
    """J_order(x), Y_order(x) and their derivatives; raises on overflow or
    invalid evaluation instead of propagating NaN."""
    if x <= 0.0:
        raise BesselError(f"bessel_pair requires x > 0, got {x}")
    J = special.jv(order, x)
    Y = special.yv(order, x)
    Jp = special.jvp(order, x)
    Yp = special.yvp(order, x)
    if not (np.isfinite(J) and np.isfinite(Y) and np.isfinite(Jp)
            and np.isfinite(Yp)):
        raise BesselError(
            f"Bessel evaluation overflowed at order={order}, x={x}")
    return J, Y, Jp, Yp


def bessel_zero(order: int, k: int) -> float:
    """k-th positive zero of J_order by Newton iteration started from the
    McMahon expansion, kept inside a verified bracketing interval."""
    if k < 1:
        raise ValueError("zero index starts at 1")
    nu = float(order)
    beta = (k + 0.5 * nu - 0.25) * math.pi
    mu = 4.0 * nu * nu
    x = beta - (mu - 1.0) / (8.0 * beta)
    # bracket around the asymptotic guess and verify a sign change
    lo, hi = x - 1.2, x + 1.2
    lo = max(lo, 1e-3)
    flo, fhi = special.jv(nu, lo), special.jv(nu, hi)
    expand = 0
    while flo * fhi > 0.0 and expand < 60:
        lo = max(lo - 0.4, 1e-3)
        hi += 0.4
        flo, fhi = special.jv(nu, lo), special.jv(nu, hi)
        expand += 1
    if flo * fhi > 0.0:
        raise BesselError(f"no bracket for zero {k} of J_{order}")
    for _ in range(100):
        f = special.jv(nu, x)
        df = special.jvp(nu, x)
        step = f / df
        xn = x - step
        if not (lo < xn < hi):  # Newton left the bracket: bisect instead
            xn = 0.5 * (lo + hi)
        if special.jv(nu, lo) * special.jv(nu, xn) <= 0.0:
            hi = xn
        else:
            lo = xn
        if abs(xn - x) < 1e-14 * x:
            x = xn
            break
        x = xn
    return x


# ---------------------------------------------------------------------------
# zero-energy integration, threshold coefficients and node counting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroEnergySolution:
    """Regular solution of the ell-sector equation at lambda = 0, normalized
    to f ~ r^ell at the origin; beyond the potential support
    f = a_coeff r^ell + b_coeff r^{-ell-2}."""

    ell: int
    grid: np.ndarray
    values: np.ndarray
    a_coeff: float
    b_coeff: float
    node_count: int
    match_radius: float
    match_residual: float


def _check_status(status, what):
    if status == STATUS_STEP_UNDERFLOW:
        raise RadialIntegrationError(f"step-size underflow during {what}")
    if status == STATUS_MAX_STEPS:
        raise RadialIntegrationError(f"step budget exhausted during {what}")


def _coeffs_from_state(nu, r, u, du):
    """Solve u = a r^{nu+1/2} + b r^{1/2-nu} for (a, b) given (u, u')."""
    # derivative matrix rows: [r^{nu+.5}, r^{.5-nu}; (nu+.5) r^{nu-.5}, (.5-nu) r^{-nu-.5}]
    a = (u * (0.5 - nu) / r - du) / (-2.0 * nu) * r ** -(nu - 0.5)
    b = (du - u * (nu + 0.5) / r) / (-2.0 * nu) * r ** (nu + 0.5)
    return a, b


def integrate_zero_energy(pot: RadialPotential, ell: int, *,
                          rtol: float = DEFAULT_RTOL, step_scale: float = 1.0,
                          match_offset: float = 1.0, dense: bool = False,
                          n_dense: int = 3000,
                          match_check_tol: float = 1e-6) -> ZeroEnergySolution:
    """Integrate the ell-sector equation at lambda = 0 outward from
    f ~ r^ell, extract the free-region coefficients (a, b) by matching f and
    f' at two radii beyond the support, and count nodes.

    The second matching radius only validates the first: the residual of the
    (a, b) prediction there is reported and must stay below match_check_tol.
    """
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    nu = float(ell + 1)
    r1 = pot.support_radius + match_offset * pot.range
    r2 = pot.support_radius + (match_offset + 2.0) * pot.range

    if dense:
        r_lo = 0.06 * pot.range
        r_out = np.concatenate([
            np.geomspace(r_lo, 0.5 * pot.range, n_dense // 4, endpoint=False),
            np.linspace(0.5 * pot.range, r1, 3 * n_dense // 4, endpoint=False),
            [r1, r2],
        ])
    else:
        r_out = np.array([r1, r2])

    us, dus, lss, nodes, status, _ = integrate_radial(
        *kernel_args(pot), nu, 0.0, r_out, rtol, step_scale)
    _check_status(status, f"zero-energy integration at ell={ell}")

    i1 = len(r_out) - 2
    a_c, b_c = _coeffs_from_state(nu, r1, us[i1], dus[i1])
    scale = math.exp(lss[i1])
    a = a_c * scale
    b = b_c * scale

    # consistency of the free-region fit at the second radius
    u2_pred = a_c * r2 ** (nu + 0.5) + b_c * r2 ** (0.5 - nu)
    du2_pred = a_c * (nu + 0.5) * r2 ** (nu - 0.5) + b_c * (0.5 - nu) * r2 ** (-nu - 0.5)
    su = abs(a_c) * r2 ** (nu + 0.5) + abs(b_c) * r2 ** (0.5 - nu) + 1e-300
    resid = max(abs(u2_pred - us[i1 + 1]) / su,
                abs(du2_pred - dus[i1 + 1]) / (su * nu / r2))
    if resid > match_check_tol:
        raise MatchingError(
            f"free-region fit residual {resid:.3e} exceeds {match_check_tol:.1e} "
            f"at ell={ell}")

    grid = r_out.copy()
    vals = us * np.exp(lss) / r_out ** 1.5

    # analytic tail: one extra node beyond r2 when f(r2) and the r^ell branch
    # disagree in sign
    f2 = vals[-1]
    if a != 0.0 and a * f2 < 0.0:
        nodes += 1
        r_x = (abs(b / a)) ** (1.0 / (2.0 * nu))
        if dense and np.isfinite(r_x) and r_x > r2:
            ext = np.geomspace(r2 * 1.05, 1.3 * r_x, 40)
            grid = np.concatenate([grid, ext])
            vals = np.concatenate([vals, a * ext**ell + b * ext ** (-ell - 2.0)])

    return ZeroEnergySolution(ell, grid, vals, a, b, int(nodes), r1,
                              float(resid))


def count_bound_states_ell(pot: RadialPotential, ell: int, *,
                           rtol: float = DEFAULT_RTOL,
                           step_scale: float = 1.0) -> int:
    """Number of negative eigenvalues in the ell sector, by Sturm
    oscillation: the zero-energy regular solution has exactly that many
    nodes on (0, inf)."""
    if pot.is_zero():
        return 0
    return integrate_zero_energy(pot, ell, rtol=rtol,
                                 step_scale=step_scale).node_count


# ---------------------------------------------------------------------------
# phase shifts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    """One sampled eigenphase delta_ell(lambda); the scattering eigenvalue
    on the degree-ell harmonics is exp(2i delta)."""

    ell: int
    lam: float
    delta: float


def _delta_from_state(nu, k, r_m, u, du):
    """Principal phase in (-pi/2, pi/2] from (u, u') at the matching radius,
    by Wronskian matching against the free pair J_nu(kr)/r, Y_nu(kr)/r."""
    J, Y, Jp, Yp = bessel_pair(int(round(nu)), k * r_m)
    f = u
    fp = du - 1.5 * u / r_m       # common factor r^{-3/2} cancels in ratios
    FJ = J / r_m
    FJp = k * Jp / r_m - J / r_m**2
    FY = Y / r_m
    FYp = k * Yp / r_m - Y / r_m**2
    num = f * FJp - fp * FJ
    den = f * FYp - fp * FY
    d = math.atan2(num, den)
    # deterministic representative mod pi
    if d <= -0.5 * math.pi:
        d += math.pi
    elif d > 0.5 * math.pi:
        d -= math.pi
    return d


def phase_shift(pot: RadialPotential, ell: int, k: float, *,
                rtol: float = DEFAULT_RTOL, step_scale: float = 1.0,
                r_match: float | None = None) -> PhasePoint:
    """Phase shift at energy lambda = k^2, reduced mod pi to (-pi/2, pi/2]
    (unwrapping in lambda is the table's job)."""
    if k <= 0.0:
        raise ValueError("k must be positive")
    r_m = pot.support_radius + pot.range if r_match is None else r_match
    if r_m <= pot.support_radius:
        raise MatchingError(
            f"matching radius {r_m} lies inside the potential support "
            f"{pot.support_radius}")
    if pot.is_zero():
        return PhasePoint(ell, k * k, 0.0)
    nu = float(ell + 1)
    us, dus, lss, _, status, _ = integrate_radial(
        *kernel_args(pot), nu, k * k, np.array([r_m]), rtol, step_scale)
    _check_status(status, f"phase integration at ell={ell}, k={k}")
    return PhasePoint(ell, k * k, _delta_from_state(nu, k, r_m, us[0], dus[0]))


def born_phase_bound(pot: RadialPotential, ells, k: float) -> np.ndarray:
    """First-order estimate (pi/2) |g| int profile J_{ell+1}(kr)^2 r dr, used
    to certify that omitted (ell, lambda) entries carry negligible phase."""
    ells = np.atleast_1d(ells)
    if pot.is_zero() or k <= 0.0:
        return np.zeros(len(ells))
    r = np.geomspace(1e-3 * pot.range, pot.support_radius, 160)
    p = pot.profile(r)
    out = np.empty(len(ells))
    for i, ell in enumerate(ells):
        out[i] = 0.5 * math.pi * abs(pot.coupling) * np.trapezoid(
            p * special.jv(ell + 1, k * r) ** 2 * r, r)
    return out


@dataclass
class PhaseShiftTable:
    """Unwrapped eigenphases delta_ell(lambda) on an (ell, lambda) grid.

    `delta` holds the base-grid values; `lam_samples`/`delta_samples` hold
    all accepted samples per ell including unwrap refinements.  `included`
    marks entries actually integrated; excluded entries are certified
    negligible by `born_bound` and stored as exact zeros.
    """

    ells: np.ndarray
    lambdas: np.ndarray
    delta: np.ndarray
    included: np.ndarray
    born_bound: np.ndarray
    lam_samples: list = field(default_factory=list)
    delta_samples: list = field(default_factory=list)
    refinements: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def ell_max(self) -> int:
        return int(self.ells[-1])

    def delta_at(self, ell: int, lam) -> np.ndarray:
        """Linear interpolation in lambda; extrapolation is refused."""
        lam = np.asarray(lam, dtype=float)
        ls = self.lam_samples[ell]
        if np.any(lam < ls[0] * (1 - 1e-12)) or np.any(lam > ls[-1] * (1 + 1e-12)):
            raise ValueError(
                f"lambda outside tabulated range [{ls[0]:g}, {ls[-1]:g}]")
        return np.interp(lam, ls, self.delta_samples[ell])

    def weighted_phase_sum(self, lam) -> np.ndarray:
        """Sum over ell of (ell+1)^2 delta_ell(lambda)."""
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape)
        for ell in self.ells:
            out = out + degeneracy(int(ell)) * self.delta_at(int(ell), lam)
        return out

    def max_adjacent_jump(self) -> float:
        worst = 0.0
        for d in self.delta_samples:
            if len(d) > 1:
                worst = max(worst, float(np.max(np.abs(np.diff(d)))))
        return worst

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("ell,lambda,delta\n")
            for ell in self.ells:
                ls = self.lam_samples[ell]
                ds = self.delta_samples[ell]
                for lam, d in zip(ls, ds):
                    fh.write(f"{ell},{lam:.17g},{d:.17g}\n")

    def to_json_dict(self) -> dict:
        return {
            "ell_max": self.ell_max,
            "lambda_min": float(self.lambdas[0]),
            "lambda_max": float(self.lambdas[-1]),
            "n_lambda": int(len(self.lambdas)),
            "max_adjacent_jump": self.max_adjacent_jump(),
            "refinements": [
                {"ell": int(e), "lambda": float(l)} for e, l in self.refinements
            ],
            "meta": self.meta,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _unwrap_row(lams, raws):
    """Branch-match a row of principal values, anchored to ~0 at the top."""
    d = np.empty_like(raws)
    d[-1] = raws[-1]
    for j in range(len(lams) - 2, -1, -1):
        d[j] = raws[j] + math.pi * round((d[j + 1] - raws[j]) / math.pi)
    return d


def phase_shift_table(pot: RadialPotential, ell_max: int, lambda_grid, *,
                      rtol: float = DEFAULT_RTOL, step_scale: float = 1.0,
                      r_match: float | None = None,
                      refine_cap: int = 200) -> PhaseShiftTable:
    """Compute and continuously unwrap delta_ell(lambda) for ell <= ell_max.

    The unwrapping anchor is the high-energy end, where every eigenphase is
    normalized to vanish; the grid is refined (geometric midpoints) wherever
    adjacent samples jump by more than pi/2.  Entries whose degeneracy-
    weighted first-order bound falls below SKIP_WEIGHTED_PHASE in a sector
    certified free of bound states are recorded as exact zeros.
    """
    lambdas = np.asarray(lambda_grid, dtype=float)
    if len(lambdas) < 2 or np.any(np.diff(lambdas) <= 0) or lambdas[0] <= 0:
        raise ValueError("lambda_grid must be increasing and positive")
    r_m = pot.support_radius + pot.range if r_match is None else r_match
    if r_m <= pot.support_radius:
        raise MatchingError("matching radius inside potential support")

    ells = np.arange(ell_max + 1)
    nlam = len(lambdas)
    ks = np.sqrt(lambdas)

    # first-order phase bounds and the barrier certificate per sector
    bound = np.zeros((ell_max + 1, nlam))
    for j, k in enumerate(ks):
        bound[:, j] = born_phase_bound(pot, ells, k)
    rr = np.geomspace(1e-3 * pot.range, max(pot.support_radius, pot.range), 400)
    barrier = float(np.max(rr**2 * np.abs(pot(rr)))) if not pot.is_zero() else 0.0
    w = (ells + 1.0) ** 2
    included = (bound * w[:, None]) >= SKIP_WEIGHTED_PHASE
    no_bs_certificate = ells * (ells + 2.0) >= barrier
    included[~no_bs_certificate, :] = True
    if pot.is_zero():
        included[:] = False

    delta = np.zeros((ell_max + 1, nlam))
    lam_samples: list[np.ndarray] = []
    delta_samples: list[np.ndarray] = []
    refinements: list[tuple[int, float]] = []

    def raw_delta(ell, lam):
        if pot.is_zero():
            return 0.0
        nu = float(ell + 1)
        us, dus, _, _, status, _ = integrate_radial(
            *kernel_args(pot), nu, lam, np.array([r_m]), rtol, step_scale)
        _check_status(status, f"phase integration ell={ell}, lambda={lam:g}")
        return _delta_from_state(nu, math.sqrt(lam), r_m, us[0], dus[0])

    for ell in range(ell_max + 1):
        mask = included[ell]
        if not mask.any():
            lam_samples.append(lambdas.copy())
            delta_samples.append(np.zeros(nlam))
            continue
        idx = np.nonzero(mask)[0]
        ls = list(lambdas[idx])
        rs = [raw_delta(ell, lam) for lam in ls]
        inserted = 0
        while True:
            d = _unwrap_row(np.array(ls), np.array(rs))
            gaps = np.abs(np.diff(d))
            worst = int(np.argmax(gaps)) if len(gaps) else 0
            if len(gaps) == 0 or gaps[worst] < UNWRAP_MAX_JUMP:
                break
            if inserted >= refine_cap:
                raise UnwrapError(
                    f"unwrap jump criterion unreachable at ell={ell} after "
                    f"{refine_cap} refinements")
            lam_new = math.sqrt(ls[worst] * ls[worst + 1])
            ls.insert(worst + 1, lam_new)
            rs.insert(worst + 1, raw_delta(ell, lam_new))
            refinements.append((ell, lam_new))
            inserted += 1
        ls_arr = np.array(ls)
        # certify that samples adjoining a skipped region are negligible
        if not mask[0] and abs(d[0]) > SKIP_BOUNDARY_TOL:
            raise UnwrapError(
                f"skip boundary not negligible at ell={ell}: |delta|={abs(d[0]):.3g}")
        if not mask[-1] and abs(d[-1]) > SKIP_BOUNDARY_TOL:
            raise UnwrapError(f"skip boundary not negligible at ell={ell}")
        # base-grid values: computed band plus certified zeros outside it
        full_d = np.zeros(nlam)
        full_d[idx] = d[np.searchsorted(ls_arr, lambdas[idx])]
        delta[ell] = full_d
        # sample arrays carry the refinements too
        outside = lambdas[~mask]
        all_l = np.concatenate([ls_arr, outside])
        all_d = np.concatenate([d, np.zeros(len(outside))])
        order = np.argsort(all_l)
        lam_samples.append(all_l[order])
        delta_samples.append(all_d[order])

    meta = {
        "potential": pot.to_dict(),
        "rtol": rtol,
        "step_scale": step_scale,
        "r_match": r_m,
        "skip_weighted_phase": SKIP_WEIGHTED_PHASE,
    }
    return PhaseShiftTable(ells, lambdas, delta, included, bound,
                           lam_samples, delta_samples, refinements, meta)
