"""Zero-energy s-resonances: detection, threshold tuning, and the rank-one
resonance constants.

In four dimensions a zero-energy threshold solution of the s-wave sector
behaves like psi ~ a + b r^{-2}; it is a resonance exactly when the growing
branch vanishes (a = 0), since r^{-2} lies in a weighted space but not in
L^2(R^4).  For ell >= 1 the threshold solutions decay like r^{-ell-2} and
are square-integrable (zero-energy eigenvalues, not resonances), so only the
s-wave is searched.

For a resonance normalized to unit r^{-2} tail the pairing
overlap = <v, Uv psi> = int V psi dx obeys the free-Green-function tail
relation overlap = -4 pi^2 b (kernel 1/(4 pi^2 |x-y|^2)), and the rank-one
constant is c2 = -overlap^2 / (8 pi^2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.sparse.linalg import eigsh

from .potential import (VOL_S3, PotentialFamily, RadialPotential,
                        make_potential)
from .radialode import integrate_zero_energy

# |a/b| below this certifies a resonance; up to 10x above it is ambiguous
TOL_RES = 1e-6

# relative tolerance of the Green's-function tail relation
TAIL_RELATION_TOL = 1e-4


class ResonanceError(RuntimeError):
    pass


class ThresholdBracketError(ValueError):
    pass


@dataclass(frozen=True)
class ResonanceReport:
    """s-resonance content of a potential at zero energy."""

    dim_Ps: int
    a_coeff: float
    tail_b: float
    overlap: float
    c2: complex
    threshold_coupling: float | None = None
    status: str = "none"                 # none | near-threshold | resonant
    tail_relation_residual: float = float("nan")
    quadrature_rel_error: float = float("nan")

    def to_json_dict(self) -> dict:
        return {
            "dim_Ps": self.dim_Ps,
            "a_coeff": self.a_coeff,
            "tail_b": self.tail_b,
            "overlap": self.overlap,
            "c2": [self.c2.real, self.c2.imag],
            "threshold_coupling": self.threshold_coupling,
            "status": self.status,
            "tail_relation_residual": _nan_to_none(self.tail_relation_residual),
            "quadrature_rel_error": _nan_to_none(self.quadrature_rel_error),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _nan_to_none(x):
    return None if (x is None or math.isnan(x)) else x


def detect_resonance(pot: RadialPotential, *, rtol: float = 1e-12,
                     tol_res: float = TOL_RES) -> ResonanceReport:
    """Classify the s-wave zero-energy solution: resonant when the growing
    branch coefficient vanishes to tolerance (|a| < tol_res |b|), ambiguous
    in the decade above that, none otherwise."""
    if pot.is_zero():
        return ResonanceReport(0, 1.0, 0.0, 0.0, 0.0)
    sol = integrate_zero_energy(pot, 0, rtol=rtol)
    a, b = sol.a_coeff, sol.b_coeff
    ratio = abs(a) / max(abs(b), 1e-300)
    if ratio < tol_res:
        return _fill_constants(pot, rtol=rtol)
    if ratio < 10.0 * tol_res:
        return ResonanceReport(0, a, b, 0.0, 0.0, status="near-threshold")
    return ResonanceReport(0, a, b, 0.0, 0.0, status="none")


def resonance_constants(pot: RadialPotential, *, rtol: float = 1e-12,
                        threshold_coupling: float | None = None) -> ResonanceReport:
    """Resonance profile constants for a potential at threshold; raises if
    no certified resonance is present."""
    if pot.is_zero():
        raise ResonanceError("free operator has no resonance")
    report = _fill_constants(pot, rtol=rtol, require=True,
                             threshold_coupling=threshold_coupling)
    return report


def _fill_constants(pot, *, rtol, require=False, threshold_coupling=None):
    sol = integrate_zero_energy(pot, 0, rtol=rtol, dense=True)
    a, b = sol.a_coeff, sol.b_coeff
    ratio = abs(a) / max(abs(b), 1e-300)
    if ratio >= TOL_RES:
        if require:
            raise ResonanceError(
                f"no certified resonance: |a/b| = {ratio:.3e} >= {TOL_RES:.1e}")
        return ResonanceReport(0, a, b, 0.0, 0.0, status="none")

    # normalize the tail to b = 1
    psi = sol.values / b
    grid = sol.grid
    inside = grid <= pot.support_radius
    rg = grid[inside]
    integrand = pot(rg) * psi[inside] * rg**3
    quad_main = integrate.simpson(integrand, x=rg)
    # series closure of the [0, r_min] gap: psi ~ psi(0)(1 + c2 r^2)
    c2s = pot(0.0) / 8.0
    psi0 = psi[0] / (1.0 + c2s * rg[0] ** 2)
    low, low_err = integrate.quad(
        lambda r: float(pot(r)) * psi0 * (1.0 + c2s * r * r) * r**3, 0.0, rg[0])
    overlap = VOL_S3 * (quad_main + low)
    quad_err = abs(low_err * VOL_S3) / max(abs(overlap), 1e-300) + 1e-9

    tail_b = 1.0
    tail_pred = -overlap / (4.0 * math.pi**2)
    resid = abs(tail_b - tail_pred) / max(abs(tail_b), 1e-300)
    if resid > TAIL_RELATION_TOL:
        raise ResonanceError(
            f"Green's-function tail relation violated: residual {resid:.3e} "
            f"(quadrature or integration failure)")
    c2 = -(overlap**2) / (8.0 * math.pi**2)
    return ResonanceReport(1, a, tail_b, overlap, c2,
                           threshold_coupling=threshold_coupling,
                           status="resonant", tail_relation_residual=resid,
                           quadrature_rel_error=quad_err)


def ns_b0_product_check(report: ResonanceReport) -> float:
    """Scalar s with N(0) B(0) = s P_s on the order-zero harmonics, computed
    from the stored rank-one data as (2/c2)(overlap^2 / 16 pi^2); equals -1
    at a resonance and 0 otherwise."""
    if report.dim_Ps == 0:
        return 0.0
    if report.c2 == 0:
        raise ResonanceError("resonance report carries no c2 constant")
    s = (2.0 / report.c2) * (report.overlap**2 / (16.0 * math.pi**2))
    return float(s.real) if isinstance(s, complex) else float(s)


def _a_coefficient(family, g, rng, table, rtol):
    pot = make_potential(family, g, rng, table=table)
    sol = integrate_zero_energy(pot, 0, rtol=rtol)
    return sol.a_coeff, sol.b_coeff


def find_threshold_coupling(family, bracket, *, rng: float = 1.0, table=None,
                            rtol: float = 1e-12,
                            rel_width: float = 1e-10) -> float:
    """Coupling g* where an s-resonance sits at zero energy, by bisection on
    the sign of the growing-branch coefficient a(g)."""
    g_lo, g_hi = float(bracket[0]), float(bracket[1])
    if not (0 < g_lo < g_hi):
        raise ThresholdBracketError("bracket must satisfy 0 < g_lo < g_hi")
    a_lo, _ = _a_coefficient(family, g_lo, rng, table, rtol)
    a_hi, _ = _a_coefficient(family, g_hi, rng, table, rtol)
    if a_lo * a_hi >= 0.0:
        raise ThresholdBracketError(
            f"no sign change of the growing branch on [{g_lo}, {g_hi}]: "
            f"a(g_lo)={a_lo:.3e}, a(g_hi)={a_hi:.3e}")
    while (g_hi - g_lo) > rel_width * g_hi:
        g_mid = 0.5 * (g_lo + g_hi)
        a_mid, _ = _a_coefficient(family, g_mid, rng, table, rtol)
        if a_mid == 0.0:
            return g_mid
        if a_lo * a_mid < 0.0:
            g_hi = g_mid
        else:
            g_lo, a_lo = g_mid, a_mid
    return 0.5 * (g_lo + g_hi)


def bs_threshold_oracle(family, g_max: float = 1e3, *, rng: float = 1.0,
                        table=None, n_nodes: int = 1200,
                        refine_tol: float = 1e-4) -> float:
    """Threshold coupling from the zero-energy s-wave Birman-Schwinger
    kernel K(r,r') = sqrt(p(r)) / (2 max(r,r')^2) sqrt(p(r')) on the measure
    r^3 dr (the 1/(4 pi^2 |x-y|^2) free kernel averaged over the order-zero
    harmonics, volume factors absorbed): g* = 1/mu_max of the discretized
    kernel, with a grid-refinement certificate."""
    pot = make_potential(family, 1.0, rng, table=table)
    if pot.is_zero():
        raise ResonanceError("zero potential has no threshold")

    def mu_max(n):
        x, wq = np.polynomial.legendre.leggauss(n)
        r = 0.5 * pot.support_radius * (x + 1.0)
        wq = 0.5 * pot.support_radius * wq
        p = np.maximum(pot.profile(r), 0.0)
        K = np.sqrt(np.outer(p, p)) / (2.0 * np.maximum.outer(r, r) ** 2)
        s = np.sqrt(wq * r**3)
        A = K * np.outer(s, s)
        return float(eigsh(A, k=1, which="LA",
                           return_eigenvectors=False)[0])

    m1 = mu_max(n_nodes)
    m2 = mu_max(int(1.5 * n_nodes))
    if abs(m2 - m1) > refine_tol * abs(m2):
        raise ResonanceError(
            f"Birman-Schwinger eigenvalue not grid-converged: "
            f"{m1:.8g} vs {m2:.8g}")
    gstar = 1.0 / m2
    if gstar > g_max:
        raise ResonanceError(
            f"threshold coupling {gstar:.6g} exceeds the search cap {g_max}")
    return gstar
