"""Spherically symmetric potential families on R^4.

Conventions: a coupling g > 0 means an attractive well V(r) = -g * profile(r)
with profile(0) = O(1) and characteristic radius `range`.  Every family
carries a certified power-law decay exponent rho with |V(r)| <= C (1+r)^-rho;
compactly supported and (super-)exponentially decaying profiles certify
rho = inf.  Radial moments are reduced with the three-sphere volume
Vol(S^3) = 2 pi^2:

    I1 = int_{R^4} V dx  = 2 pi^2 int_0^inf V(r) r^3 dr,
    I2 = int_{R^4} V^2 dx = 2 pi^2 int_0^inf V(r)^2 r^3 dr,

and the two trace constants of the regularized bound-state identity are the
closed-form scalings

    c1    = -(2 pi i) Vol(S^3) / (2 (2 pi)^4) * I1 = -(i / (8 pi)) I1,
    beta2 = -Vol(S^3) / (4 (2 pi)^4) * I2         = -I2 / (32 pi^2).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import integrate, interpolate

from . import _kernels

VOL_S3 = 2.0 * math.pi**2

# profile values below this fraction of the peak are treated as exactly zero
SUPPORT_CUT = 1e-14

# quadrature contract for the moment integrals
MOMENT_REL_TOL = 1e-10


class PotentialFamily(Enum):
    SQUARE_WELL = "SquareWell"
    GAUSSIAN = "Gaussian"
    EXPONENTIAL = "Exponential"
    TABULATED = "Tabulated"


_FAMILY_CODES = {
    PotentialFamily.SQUARE_WELL: _kernels.FAMILY_SQUARE_WELL,
    PotentialFamily.GAUSSIAN: _kernels.FAMILY_GAUSSIAN,
    PotentialFamily.EXPONENTIAL: _kernels.FAMILY_EXPONENTIAL,
    PotentialFamily.TABULATED: _kernels.FAMILY_TABULATED,
}

_EMPTY = np.zeros(0)
_EMPTY_C = np.zeros((4, 0))


class PotentialError(ValueError):
    """Invalid potential construction."""


class QuadratureError(RuntimeError):
    """Moment quadrature failed its accuracy contract."""

    def __init__(self, msg, achieved):
        super().__init__(f"{msg} (achieved relative error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class RadialPotential:
    """Immutable radial potential V(r) = -coupling * profile(r)."""

    family: PotentialFamily
    coupling: float
    range: float
    support_radius: float
    decay_exponent: float
    table_r: np.ndarray = field(default_factory=lambda: _EMPTY, repr=False)
    table_c: np.ndarray = field(default_factory=lambda: _EMPTY_C, repr=False)

    @property
    def family_code(self) -> int:
        return _FAMILY_CODES[self.family]

    def profile(self, r):
        """Unit-coupling profile shape, vectorized over r >= 0."""
        r = np.asarray(r, dtype=float)
        if self.family is PotentialFamily.SQUARE_WELL:
            p = np.where(r <= self.range, 1.0, 0.0)
        elif self.family is PotentialFamily.GAUSSIAN:
            p = np.exp(-((r / self.range) ** 2))
        elif self.family is PotentialFamily.EXPONENTIAL:
            p = np.exp(-r / self.range)
        else:
            p = _eval_pchip(self.table_r, self.table_c, r)
        return np.where(r >= self.support_radius, 0.0, p)

    def __call__(self, r):
        """Potential value V(r)."""
        return -self.coupling * self.profile(r)

    def is_zero(self) -> bool:
        return self.coupling == 0.0

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "coupling": self.coupling,
            "range": self.range,
            "support_radius": self.support_radius,
            "decay_exponent": ("inf" if math.isinf(self.decay_exponent)
                               else self.decay_exponent),
        }


def _eval_pchip(x, c, r):
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    idx = np.clip(np.searchsorted(x, r, side="right") - 1, 0, len(x) - 2)
    d = r - x[idx]
    out = ((c[0, idx] * d + c[1, idx]) * d + c[2, idx]) * d + c[3, idx]
    out[r <= x[0]] = c[3, 0]
    out[r >= x[-1]] = 0.0
    return out


@dataclass(frozen=True)
class MomentIntegrals:
    """Volume integrals of V and V^2 over R^4."""

    I1: float
    I2: float
    rel_error: float = 0.0

    def __post_init__(self):
        if self.I2 < 0.0:
            raise ValueError("I2 must be nonnegative")


@dataclass(frozen=True)
class LevinsonConstants:
    """High-energy trace constant c1 and the second-order constant beta2."""

    c1: complex
    beta2: float


def make_potential(family, coupling, range, table=None) -> RadialPotential:
    """Construct a radial potential with a certified decay exponent.

    `family` accepts a PotentialFamily or its string name.  For the
    Tabulated family, `table` is an (r, profile) pair of 1D arrays; the
    profile is interpolated with a monotone (shape-preserving) cubic so
    node counting downstream never sees interpolation wiggles.
    """
    if isinstance(family, str):
        try:
            family = PotentialFamily(family)
        except ValueError:
            names = ", ".join(f.value for f in PotentialFamily)
            raise PotentialError(f"unknown family {family!r}; expected one of {names}")
    coupling = float(coupling)
    range = float(range)
    if not math.isfinite(coupling):
        raise PotentialError("coupling must be finite")
    if not (range > 0.0) or not math.isfinite(range):
        raise PotentialError("range must be positive and finite")

    if family is PotentialFamily.SQUARE_WELL:
        return RadialPotential(family, coupling, range, range, math.inf)
    if family is PotentialFamily.GAUSSIAN:
        support = range * math.sqrt(math.log(1.0 / SUPPORT_CUT))
        return RadialPotential(family, coupling, range, support, math.inf)
    if family is PotentialFamily.EXPONENTIAL:
        support = range * math.log(1.0 / SUPPORT_CUT)
        return RadialPotential(family, coupling, range, support, math.inf)

    if table is None:
        raise PotentialError("Tabulated family requires a table of (r, profile) samples")
    r_tab = np.asarray(table[0], dtype=float)
    p_tab = np.asarray(table[1], dtype=float)
    if r_tab.ndim != 1 or r_tab.shape != p_tab.shape or len(r_tab) < 4:
        raise PotentialError("tabulated profile needs >= 4 aligned (r, value) samples")
    if np.any(r_tab < 0.0):
        raise PotentialError("tabulated radii must be nonnegative")
    if np.any(np.diff(r_tab) <= 0.0):
        raise PotentialError("tabulated radii must be strictly increasing")
    if not np.all(np.isfinite(p_tab)):
        raise PotentialError("tabulated profile values must be finite")
    pch = interpolate.PchipInterpolator(r_tab, p_tab, extrapolate=False)
    return RadialPotential(PotentialFamily.TABULATED, coupling, range,
                           float(r_tab[-1]), math.inf,
                           table_r=r_tab.copy(), table_c=np.ascontiguousarray(pch.c))


def load_potential_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column (r, V) CSV with a header row; returns (r, profile)
    where profile = -V, matching the attractive sign convention at unit
    coupling."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 2:
            raise PotentialError(f"{path}: expected two columns (r, V)")
        for row in reader:
            if not row:
                continue
            rows.append((float(row[0]), float(row[1])))
    if len(rows) < 4:
        raise PotentialError(f"{path}: need at least 4 table rows")
    r = np.array([a for a, _ in rows])
    v = np.array([b for _, b in rows])
    return r, -v


def potential_from_config(cfg: dict, base_dir=None) -> RadialPotential:
    """Build a potential from plain config keys: family, coupling, range,
    table_path."""
    table = None
    if cfg.get("table_path"):
        path = Path(cfg["table_path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        table = load_potential_table(path)
    return make_potential(cfg["family"], float(cfg.get("coupling", 0.0)),
                          float(cfg.get("range", 1.0)), table=table)


def moment_integrals(pot: RadialPotential) -> MomentIntegrals:
    """I1 = int V dx and I2 = int V^2 dx by adaptive quadrature on
    [0, support_radius], reduced with the r^3 volume factor."""
    if pot.is_zero():
        return MomentIntegrals(0.0, 0.0, 0.0)
    sup = pot.support_radius

    def f1(r):
        return float(pot(r)) * r**3

    def f2(r):
        return float(pot(r)) ** 2 * r**3

    pts = [pot.range] if pot.range < sup else None
    i1, e1 = integrate.quad(f1, 0.0, sup, points=pts, limit=300, epsabs=1e-300,
                            epsrel=1e-12)
    i2, e2 = integrate.quad(f2, 0.0, sup, points=pts, limit=300, epsabs=1e-300,
                            epsrel=1e-12)
    I1 = VOL_S3 * i1
    I2 = VOL_S3 * i2
    rel = max(e1 / max(abs(i1), 1e-300), e2 / max(abs(i2), 1e-300))
    if rel > MOMENT_REL_TOL:
        raise QuadratureError("moment quadrature did not converge", rel)
    return MomentIntegrals(I1, I2, rel)


def levinson_constants(m: MomentIntegrals) -> LevinsonConstants:
    """Closed-form scalings of the moments; c1 is purely imaginary for real
    V and beta2 <= 0."""
    c1 = -1j * m.I1 / (8.0 * math.pi)
    beta2 = -m.I2 / (32.0 * math.pi**2)
    return LevinsonConstants(c1, beta2)


def zero_potential(range=1.0) -> RadialPotential:
    """The free case V = 0 (zero-coupling square well)."""
    return make_potential(PotentialFamily.SQUARE_WELL, 0.0, range)


def kernel_args(pot: RadialPotential):
    """Argument tuple consumed by the compiled integrators."""
    return (pot.family_code, pot.coupling, pot.range, pot.support_radius,
            pot.table_r, pot.table_c)
