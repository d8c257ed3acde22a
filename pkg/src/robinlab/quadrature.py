"""Adaptive quadrature helpers with integrable-endpoint handling.

All cusp-geometry integrals have the form int_0^t w(s) ds where w may be
steep (but integrable) near 0.  scipy's adaptive Gauss-Kronrod handles the
bulk; for the endpoint we add a geometric subdivision toward 0 so that
tabulated or strongly graded integrands do not defeat the global error
estimate.
"""

from __future__ import annotations

from scipy.integrate import quad

ABS_TOL = 1e-10
REL_TOL = 1e-10


class QuadratureError(Exception):
    """Quadrature did not converge to the requested tolerance."""


def integrate(f, a: float, b: float, abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> float:
    """Integrate f on [a, b], raising QuadratureError if the estimated error
    exceeds max(abs_tol, rel_tol * |value|)."""
    if b <= a:
        return 0.0
    value, err = quad(f, a, b, epsabs=abs_tol, epsrel=rel_tol, limit=200)
    if err > max(abs_tol, rel_tol * abs(value)) * 10.0:
        raise QuadratureError(
            f"integral on [{a:g}, {b:g}]: estimated error {err:.3e} exceeds tolerance"
        )
    return value


def integrate_to_zero(f, b: float, abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                      max_levels: int = 60) -> float:
    """Integrate f on (0, b] with geometric subdivision toward the origin.

    A direct adaptive pass is tried first (it never evaluates f at 0).  If
    its error estimate is poor, the interval is split as [b/2, b],
    [b/4, b/2], ... and each piece integrated adaptively; the geometric tail
    below the last piece is extrapolated from the piece ratio.  Raises
    QuadratureError when the pieces do not decay (non-integrable endpoint).
    """
    if b <= 0.0:
        return 0.0
    value, err = quad(f, 0.0, b, epsabs=abs_tol, epsrel=rel_tol, limit=200)
    if err <= max(abs_tol, rel_tol * abs(value)):
        return value

    total = 0.0
    prev = None
    hi = b
    for _ in range(max_levels):
        lo = hi / 2.0
        piece = integrate(f, lo, hi, abs_tol, rel_tol)
        total += piece
        if abs(piece) <= max(abs_tol, rel_tol * abs(total)):
            if prev is not None and abs(prev) > 0.0:
                r = min(abs(piece) / abs(prev), 0.9)
                total += piece * r / (1.0 - r)
            return total
        prev = piece
        hi = lo
    # Pieces still contributing after max_levels halvings: either the
    # endpoint is non-integrable or decay is too slow to certify.
    if abs(piece) > 1e-3 * abs(total):
        raise QuadratureError(
            f"integrand does not decay toward 0 (last piece {piece:.3e} of total {total:.3e})"
        )
    return total
