"""Scattering-matrix data in the partial-wave picture and the regularized
bound-state identity.

For radial potentials the scattering matrix at energy lambda acts on the
degree-ell harmonics as the scalar exp(2i delta_ell(lambda)), so the trace
of S(lambda)^* S'(lambda) is the degeneracy-weighted sum

    Tr(S^* S')(lambda) = 2i sum_ell (ell+1)^2 delta'_ell(lambda),

purely imaginary for real phases.  Subtracting the high-energy constant c1
renders the energy integral convergent, and the identity verified here reads

    -N = (1/2pi i) int_0^inf (Tr(S^* S') - c1) dlambda + beta2 + dim(P_s)

with c1 = -(i/8pi) int V dx and beta2 = -int V^2 dx / (32 pi^2) <= 0.  The
degeneracy-weighted phase sum Phi(lambda) approaches the Born line
-I1 lambda/(16 pi) + pi |beta2| at high energy, which fixes the sign with
which beta2 enters; see tests for the closed-form cross-checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .potential import (LevinsonConstants, MomentIntegrals, RadialPotential,
                        levinson_constants, moment_integrals)
from .radialode import (PhaseShiftTable, born_phase_bound, degeneracy,
                        phase_shift_table)
from .resonance import detect_resonance
from .spectral import total_bound_states

# default energy window: [LAMBDA_MIN_FACTOR * g, LAMBDA_MAX_FACTOR * max(1, g)]
LAMBDA_MIN_FACTOR = 1e-4
LAMBDA_MAX_FACTOR = 400.0
POINTS_PER_DECADE = 16

# a fitted zero-energy limit must sit this close to an integer multiple of pi
LIMIT_SNAP_TOL = 0.04 * math.pi

# rms residual allowed for the low-end models (radians)
FIT_RESID_TOL_LINEAR = 5e-3
FIT_RESID_TOL_LOG = 2e-2

# relative scatter allowed in the high-end lambda^{-3/2} tail fit
TAIL_FIT_REL_TOL = 0.5


class CoverageError(ValueError):
    pass


class ShellDecayError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# grids and truncation
# ---------------------------------------------------------------------------

def default_lambda_grid(pot: RadialPotential, *,
                        lambda_min: float | None = None,
                        lambda_max: float | None = None,
                        points_per_decade: int = POINTS_PER_DECADE) -> np.ndarray:
    """Geometric energy grid including the point lambda = 1 exactly."""
    g = max(abs(pot.coupling), 1e-6)
    lo = LAMBDA_MIN_FACTOR * g if lambda_min is None else lambda_min
    hi = LAMBDA_MAX_FACTOR * max(1.0, g) if lambda_max is None else lambda_max
    n = int(math.log10(hi / lo) * points_per_decade) + 2
    grid = np.geomspace(lo, hi, n)
    if lo < 1.0 < hi and not np.any(np.isclose(grid, 1.0, rtol=1e-12)):
        grid = np.sort(np.append(grid, 1.0))
    return grid


def choose_ell_max(pot: RadialPotential, lambda_grid) -> int:
    """Smallest truncation for which every omitted sector is certified: the
    centrifugal barrier dominates |V| (no bound states) and the weighted
    first-order phase bound is negligible at every grid energy."""
    from .spectral import barrier_bound
    if pot.is_zero():
        return 4
    bar = barrier_bound(pot)
    ks = np.sqrt(np.asarray(lambda_grid))
    probe = ks[:: max(1, len(ks) // 14)]
    if ks[-1] not in probe:
        probe = np.append(probe, ks[-1])
    ell = 0
    while True:
        ok_barrier = ell * (ell + 2.0) >= bar
        wb = (ell + 1) ** 2 * max(born_phase_bound(pot, [ell], k)[0]
                                  for k in probe)
        if ok_barrier and wb < 1e-9:
            return ell
        ell += 1
        if ell > 2000:
            raise CoverageError("no certified partial-wave truncation below 2000")


# ---------------------------------------------------------------------------
# zero-energy limits of the unwrapped phases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdFit:
    """Fitted lambda -> 0 limit of one unwrapped eigenphase."""

    ell: int
    limit: float                  # fitted delta_ell(0+)
    n_pi: int                     # nearest integer multiple of pi
    model: str                    # "linear" or "log"
    params: tuple
    resid_rms: float
    certified: bool

    @property
    def snapped(self) -> float:
        return self.n_pi * math.pi


def fit_low_end(table: PhaseShiftTable, resonant: bool, *,
                fit_decades: float = 1.0) -> list[ThresholdFit]:
    """Per-ell model fits on the lowest grid decade(s).

    Nonresonant sectors approach their limit linearly in lambda.  At a
    certified s-resonance the s-wave limit is approached logarithmically
    (the threshold 1/ln(lambda) character), so the ell = 0 sector gets a
    three-parameter model c0 + A/(ln lambda - B) whose fitted c0 is the
    reported limit.
    """
    lam_min = float(table.lambdas[0])
    out = []
    for ell in table.ells:
        ell = int(ell)
        ls = table.lam_samples[ell]
        ds = table.delta_samples[ell]
        m = ls <= lam_min * 10.0**fit_decades
        x, y = ls[m], ds[m]
        if resonant and ell == 0:
            X = np.log(x)
            xmax = float(X.max())

            def resfun(p):
                return p[0] + p[1] / (X - p[2]) - y

            p0 = (math.pi * round(float(y[0]) / math.pi), 1.0, xmax + 4.0)
            sol = optimize.least_squares(
                resfun, p0, bounds=([-50.0, -50.0, xmax + 0.3],
                                    [50.0, 50.0, 200.0]))
            c0 = float(sol.x[0])
            resid = float(np.sqrt(np.mean(sol.fun**2)))
            model, params, tol = "log", tuple(sol.x), FIT_RESID_TOL_LOG
        else:
            coeff = np.polyfit(x, y, 1)
            c0 = float(coeff[1])
            resid = float(np.sqrt(np.mean((np.polyval(coeff, x) - y) ** 2)))
            model, params, tol = "linear", tuple(coeff), FIT_RESID_TOL_LINEAR
        n_pi = round(c0 / math.pi)
        certified = (resid <= tol) and abs(c0 - n_pi * math.pi) <= LIMIT_SNAP_TOL
        out.append(ThresholdFit(ell, c0, n_pi, model, params, resid, certified))
    return out


def low_end_model(fit: ThresholdFit, lam_anchor: float, delta_anchor: float):
    """Model delta_ell(lambda) below the grid, pinned to the certified limit
    at 0 and to the measured value at the grid edge."""
    snapped = fit.snapped
    if fit.model == "log":
        B = fit.params[2]
        scale = (math.log(lam_anchor) - B)

        def f(lam):
            return snapped + (delta_anchor - snapped) * scale / (np.log(lam) - B)
    else:
        def f(lam):
            return snapped + (delta_anchor - snapped) * (lam / lam_anchor)
    return f


# ---------------------------------------------------------------------------
# the trace curve
# ---------------------------------------------------------------------------

@dataclass
class TraceCurve:
    """Tr(S^* S')(lambda) = 2i sum_ell (ell+1)^2 delta'_ell on a grid, plus a
    certificate bound on the omitted ell tail."""

    lambda_grid: np.ndarray
    trace_values: np.ndarray
    ell_max: int
    tail_bound: float
    shells_decaying: bool = True
    shell_ratio: float = 0.0

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("lambda,re,im,ell_max,tail_bound\n")
            for lam, t in zip(self.lambda_grid, self.trace_values):
                fh.write(f"{lam:.17g},{t.real:.17g},{t.imag:.17g},"
                         f"{self.ell_max},{self.tail_bound:.6g}\n")


def fornberg_weights(z: float, x: np.ndarray, m: int = 1) -> np.ndarray:
    """Finite-difference weights on arbitrary nodes x for derivatives of
    order 0..m evaluated at z (Fornberg's recursion)."""
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _derivative_matrix_rows(lams: np.ndarray, stencil: int = 5):
    """Per-point (index window, weight vector) for d/dlambda, exact for
    polynomials of degree < stencil in lambda (the Born line differentiates
    exactly; log-spaced stencils in ln(lambda) would bias it)."""
    n = len(lams)
    half = stencil // 2
    rows = []
    for j in range(n):
        lo = min(max(0, j - half), n - stencil)
        nodes = lams[lo:lo + stencil]
        w = fornberg_weights(lams[j], nodes, 1)[1]
        rows.append((lo, w))
    return rows


def s_eigenvalue(table: PhaseShiftTable, ell: int, lam: float) -> complex:
    """Scattering eigenvalue exp(2i delta_ell(lambda)) on the degree-ell
    harmonics, linearly interpolated in lambda; extrapolation is refused."""
    d = float(table.delta_at(ell, lam))
    return complex(math.cos(2.0 * d), math.sin(2.0 * d))


def trace_derivative(table: PhaseShiftTable, lambda_grid=None,
                     ell_max: int | None = None) -> TraceCurve:
    """Differentiate the unwrapped phases with 5-point polynomial stencils
    and sum the shells with their (ell+1)^2 weights."""
    lams = table.lambdas if lambda_grid is None else np.asarray(lambda_grid)
    if lambda_grid is not None:
        if not np.all(np.isin(np.round(np.log(lams), 12),
                              np.round(np.log(table.lambdas), 12))):
            raise CoverageError("lambda_grid must be a subset of the table grid")
    ell_max = table.ell_max if ell_max is None else ell_max
    if ell_max > table.ell_max:
        raise CoverageError("requested ell_max exceeds the table")
    base = table.lambdas
    rows = _derivative_matrix_rows(base)
    nl = len(base)
    dsum = np.zeros(nl)
    shells = np.zeros(ell_max + 1)
    top = base >= base[-1] / 10.0
    for ell in range(ell_max + 1):
        d = table.delta[ell]
        dprime = np.array([w @ d[lo:lo + len(w)] for lo, w in rows])
        contrib = degeneracy(ell) * dprime
        dsum += contrib
        shells[ell] = float(np.max(np.abs(contrib[top])))
    # geometric extrapolation of the last two shells bounds the omitted tail
    t_prev, t_last = shells[-2], shells[-1]
    decaying = t_last < t_prev or t_last == 0.0
    if t_last == 0.0:
        tail, ratio = 0.0, 0.0
    elif decaying:
        ratio = t_last / t_prev
        tail = t_last * ratio / (1.0 - ratio)
    else:
        ratio = float("inf") if t_prev == 0 else t_last / t_prev
        tail = float("nan")
    trace = 2j * dsum
    if lambda_grid is not None:
        sel = np.searchsorted(base, lams)
        trace = trace[sel]
        lams = base[sel]
    else:
        lams = base
    return TraceCurve(lams, trace, ell_max, float(tail), bool(decaying),
                      float(ratio))


# ---------------------------------------------------------------------------
# the regularized integral and the verdict
# ---------------------------------------------------------------------------

def levinson_integral(curve: TraceCurve, constants: LevinsonConstants,
                      Lambda: float, *, low_end_correction: float = 0.0):
    """Trapezoid quadrature of (1/2pi i)(Tr - c1) up to Lambda, plus a
    lambda^{-3/2} tail fitted on the last decade.  Returns
    (value, tail_estimate, tail_reliable); `value` includes the supplied
    below-grid correction."""
    lams = curve.lambda_grid
    if lams[-1] < Lambda * (1 - 1e-12):
        raise CoverageError("trace curve does not reach the requested cutoff")
    m = lams <= Lambda * (1 + 1e-12)
    lams = lams[m]
    h = ((curve.trace_values[m] - constants.c1) / (2j * math.pi)).real
    value = float(np.trapezoid(h, lams)) + low_end_correction
    top = lams >= lams[-1] / 10.0
    amp = h[top] * lams[top] ** 1.5
    A = float(np.mean(amp))
    scatter = float(np.std(amp))
    tail = 2.0 * A / math.sqrt(lams[-1])
    # the fit is unreliable when the scatter dominates, unless the tail is
    # itself negligible
    reliable = (scatter <= TAIL_FIT_REL_TOL * abs(A)) or abs(tail) < 1e-3
    return value, tail, reliable


@dataclass
class LevinsonReport:
    """Assembled identity -N = integral + beta2 + dim_Ps with certificates."""

    N_total: int
    dim_Ps: int
    integral: float
    c1: complex
    beta2: float
    rhs: float
    lhs: float
    residual: float
    lambda_cutoff: float
    tail_estimate: float
    low_end_correction: float
    certified: bool
    notes: tuple = ()
    params: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "N_total": self.N_total,
            "dim_Ps": self.dim_Ps,
            "integral": self.integral,
            "c1": [self.c1.real, self.c1.imag],
            "beta2": self.beta2,
            "rhs": self.rhs,
            "lhs": self.lhs,
            "residual": self.residual,
            "lambda_cutoff": self.lambda_cutoff,
            "tail_estimate": self.tail_estimate,
            "low_end_correction": self.low_end_correction,
            "certified": self.certified,
            "notes": list(self.notes),
            "params": self.params,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class LevinsonSettings:
    """Grid and tolerance choices for a full verdict run."""

    lambda_min: float | None = None
    lambda_max: float | None = None
    points_per_decade: int = POINTS_PER_DECADE
    rtol: float = 1e-12
    ell_cap: int = 24
    fit_decades: float = 1.0

    def describe(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "points_per_decade": self.points_per_decade,
            "rtol": self.rtol,
            "ell_cap": self.ell_cap,
            "fit_decades": self.fit_decades,
        }


def low_end_correction_from_fits(table: PhaseShiftTable, fits,
                                 constants: LevinsonConstants) -> float:
    """(1/2pi i) int_0^{lambda_min} (Tr - c1) dlambda estimated from the
    fitted zero-energy limits: [Phi(lambda_min) - Phi(0)]/pi plus the linear
    c1 piece."""
    lam_min = float(table.lambdas[0])
    corr = 0.0
    for fit in fits:
        d_edge = float(table.delta_at(fit.ell, lam_min))
        corr += degeneracy(fit.ell) * (d_edge - fit.limit) / math.pi
    corr += lam_min * (-constants.c1 / (2j * math.pi)).real
    return corr


def levinson_verdict(pot: RadialPotential,
                     settings: LevinsonSettings = LevinsonSettings(),
                     *, table: PhaseShiftTable | None = None,
                     precomputed=None) -> LevinsonReport:
    """Full pipeline: moments -> bound states -> resonance -> phase table ->
    trace -> regularized integral -> identity residual."""
    notes = []
    moments = moment_integrals(pot)
    consts = levinson_constants(moments)
    if precomputed is not None:
        bstates, reso = precomputed
    else:
        bstates = total_bound_states(pot, settings.ell_cap)
        reso = detect_resonance(pot, rtol=settings.rtol)
    if reso.status == "near-threshold":
        notes.append("resonance detection ambiguous: near-threshold, not certified")
    dim_ps = reso.dim_Ps

    grid = default_lambda_grid(pot, lambda_min=settings.lambda_min,
                               lambda_max=settings.lambda_max,
                               points_per_decade=settings.points_per_decade)
    if table is None:
        ell_max = choose_ell_max(pot, grid)
        table = phase_shift_table(pot, ell_max, grid, rtol=settings.rtol)
    curve = trace_derivative(table)
    fits = fit_low_end(table, resonant=(dim_ps == 1),
                       fit_decades=settings.fit_decades)
    uncert_fits = [f.ell for f in fits if not f.certified and not pot.is_zero()]
    if uncert_fits:
        notes.append(f"uncertified zero-energy limits at ell={uncert_fits}")
    low = low_end_correction_from_fits(table, fits, consts)
    Lambda = float(table.lambdas[-1])
    value, tail, tail_ok = levinson_integral(curve, consts, Lambda,
                                             low_end_correction=low)
    if not tail_ok:
        notes.append("high-end tail fit unreliable")
    if not curve.shells_decaying:
        notes.append("partial-wave shells not decaying at ell_max")

    integral = value + tail
    lhs = -float(bstates.N_total)
    rhs = integral + consts.beta2 + dim_ps
    certified = (tail_ok and curve.shells_decaying and not uncert_fits
                 and bstates.truncation_certificate.startswith("sector")
                 or pot.is_zero())
    params = {
        "potential": pot.to_dict(),
        "settings": settings.describe(),
        "ell_max": int(table.ell_max),
        "n_lambda": int(len(table.lambdas)),
        "I1": moments.I1,
        "I2": moments.I2,
        "trace_tail_bound": curve.tail_bound,
        "fit_limits": [
            {"ell": f.ell, "limit": f.limit, "model": f.model,
             "resid_rms": f.resid_rms, "certified": f.certified}
            for f in fits if f.limit != 0.0 or f.ell < 3
        ],
        "bound_states": bstates.to_json_dict(),
    }
    return LevinsonReport(bstates.N_total, dim_ps, integral, consts.c1,
                          consts.beta2, rhs, lhs, abs(lhs - rhs), Lambda,
                          tail, low, bool(certified), tuple(notes), params)
