"""Total bound-state count with (ell+1)^2 degeneracies, plus an independent
finite-difference eigensolver oracle for the per-sector counts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .potential import RadialPotential
from .radialode import count_bound_states_ell


class TruncationError(RuntimeError):
    pass


class FdConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundStateReport:
    """Per-sector bound-state counts and the degeneracy-weighted total
    N = sum_ell (ell+1)^2 n_ell."""

    per_ell: tuple            # (ell, count, degeneracy) triples
    ell_max_used: int
    truncation_certificate: str
    N_total: int
    monotone_counts: bool = True

    def to_json_dict(self) -> dict:
        return {
            "per_ell": [
                {"ell": e, "count": n, "degeneracy": d} for e, n, d in self.per_ell
            ],
            "ell_max_used": self.ell_max_used,
            "truncation_certificate": self.truncation_certificate,
            "N_total": self.N_total,
            "monotone_counts": self.monotone_counts,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def barrier_bound(pot: RadialPotential) -> float:
    """sup_r r^2 |V(r)|; sectors with ell(ell+2) >= this bound have a
    nonnegative effective potential and therefore no negative eigenvalues
    and a nodeless zero-energy solution."""
    if pot.is_zero():
        return 0.0
    r = np.geomspace(1e-4 * pot.range, pot.support_radius, 2000)
    return float(np.max(r**2 * np.abs(pot(r))))


def total_bound_states(pot: RadialPotential, ell_cap: int = 24, *,
                       strict: bool = True) -> BoundStateReport:
    """Aggregate node counts over ell with degeneracies, stopping early once
    a sector is empty and the centrifugal barrier dominates |V| (which
    guarantees every higher sector is empty too)."""
    if ell_cap < 0:
        raise ValueError("ell_cap must be nonnegative")
    bar = barrier_bound(pot)
    rows = []
    certificate = ""
    for ell in range(ell_cap + 1):
        n = count_bound_states_ell(pot, ell)
        rows.append((ell, n, (ell + 1) ** 2))
        if n == 0 and ell * (ell + 2.0) >= bar:
            certificate = (
                f"sector ell={ell} is nodeless and ell(ell+2)={ell*(ell+2)} >= "
                f"sup r^2|V| = {bar:.6g}; all higher sectors are empty")
            break
    if not certificate:
        msg = (f"reached ell_cap={ell_cap} without a truncation certificate "
               f"(sup r^2|V| = {bar:.6g})")
        if strict:
            raise TruncationError(msg)
        certificate = "WARNING: " + msg
    counts = [n for _, n, _ in rows]
    total = sum(n * d for _, n, d in rows)
    monotone = all(counts[i] >= counts[i + 1] for i in range(len(counts) - 1))
    return BoundStateReport(tuple(rows), rows[-1][0], certificate, total,
                            monotone)


@dataclass(frozen=True)
class FdGridSpec:
    """Discretization of the oracle eigensolver.  The grid must resolve the
    well (>= 200 points per range unit) and extend to >= 10 * range."""

    points_per_unit: int = 500
    r_max_factor: float = 12.0
    richardson: bool = True
    box_check: bool = False

    def validate(self):
        if self.points_per_unit < 200:
            raise ValueError("grid must resolve the well: >= 200 points per range unit")
        if self.r_max_factor < 10.0:
            raise ValueError("grid must extend to >= 10 * range")


def _fd_negative_spectrum(pot: RadialPotential, ell: int, h: float,
                          r_max: float, eps_edge: float) -> np.ndarray:
    n = int(round(r_max / h))
    r = h * np.arange(1, n)
    nu = ell + 1.0
    V = pot(r)
    if pot.family.value == "SquareWell" and not pot.is_zero():
        # midpoint value at the jump restores O(h^2) convergence
        j = int(round(pot.range / h)) - 1
        if 0 <= j < len(V):
            V[j] = -0.5 * pot.coupling
    diag = 2.0 / h**2 + (nu * nu - 0.25) / r**2 + V
    off = np.full(n - 2, -1.0 / h**2)
    return eigh_tridiagonal(diag, off, select="v",
                            select_range=(-np.inf, -eps_edge),
                            eigvals_only=True)


def fd_eigensolver(pot: RadialPotential, ell: int,
                   grid_spec: FdGridSpec = FdGridSpec()) -> np.ndarray:
    """Negative eigenvalues of the ell-sector operator, from a symmetric
    tridiagonal discretization of u'' = [((ell+1)^2 - 1/4)/r^2 + V] u with
    Dirichlet walls.

    The grid is snapped so a node lands exactly on a square-well jump, and
    eigenvalues are Richardson-extrapolated from the (h, h/2) pair.  A small
    guard -eps_edge = -1e-8 max(|g|,1) excludes near-zero box artifacts.
    """
    grid_spec.validate()
    if pot.is_zero():
        return np.zeros(0)
    h = pot.range / grid_spec.points_per_unit
    if pot.family.value == "SquareWell":
        m = max(1, round(pot.range / h))
        h = pot.range / m
    r_max = grid_spec.r_max_factor * max(pot.range, pot.support_radius / 3.0)
    eps_edge = 1e-8 * max(abs(pot.coupling), 1.0)

    e1 = _fd_negative_spectrum(pot, ell, h, r_max, eps_edge)
    if not grid_spec.richardson:
        out = e1
    else:
        e2 = _fd_negative_spectrum(pot, ell, 0.5 * h, r_max, eps_edge)
        if len(e1) != len(e2):
            raise FdConvergenceError(
                f"negative-eigenvalue count changed under grid halving "
                f"({len(e1)} vs {len(e2)}) at ell={ell}")
        out = (4.0 * e2 - e1) / 3.0
    if grid_spec.box_check:
        e3 = _fd_negative_spectrum(pot, ell, h, 2.0 * r_max, eps_edge)
        if len(e3) != len(e1) or (len(e1) and
                                  np.max(np.abs(e3 - e1)) > 1e-6 * np.max(np.abs(e1))):
            raise FdConvergenceError(
                f"eigenvalues sensitive to box size at ell={ell}: "
                f"doubling r_max moved the spectrum")
    return out


def fd_eigenvalues_to_csv(path, per_ell: dict):
    """Write {ell: eigenvalue array} as CSV rows (ell, index, energy)."""
    with open(path, "w") as fh:
        fh.write("ell,index,energy\n")
        for ell in sorted(per_ell):
            for i, e in enumerate(per_ell[ell]):
                fh.write(f"{ell},{i},{e:.17g}\n")
