"""Natural cubic B-spline temporal basis.

The long-range time trend of daily incidence is modelled through a design
matrix X (K basis functions x J days). Basis functions are cubic B-splines
on a knot grid with one knot every ``knot_spacing`` days plus the two
period borders, reduced to the natural-spline subspace (zero second
derivative at the borders). The reduction is done blockwise so every basis
function keeps compact support.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import null_space

__all__ = ["SplineBasis", "build_basis", "evaluate_trend"]

_DEGREE = 3  # cubic


@dataclass(frozen=True)
class SplineBasis:
    """Design matrix of natural cubic B-splines evaluated at study days 1..J.

    Attributes
    ----------
    J : int
        Number of study days.
    K : int
        Number of basis functions (equals the total number of knots).
    interior_knots : ndarray
        Interior knot positions, strictly inside (1, J).
    boundary : tuple of float
        The two border knots, (1, J).
    X : ndarray, shape (K, J)
        ``X[k, j]`` is the value of the k-th basis function on day j+1.
    """

    J: int
    K: int
    interior_knots: np.ndarray
    boundary: tuple
    X: np.ndarray
    # B-spline representation kept for evaluation off the day grid:
    # padded knot vector and the (n_bsplines, K) natural-reduction transform.
    padded_knots: np.ndarray = field(repr=False, default=None)
    transform: np.ndarray = field(repr=False, default=None)

    @property
    def all_knots(self):
        return np.r_[self.boundary[0], self.interior_knots, self.boundary[1]]

    def design_at(self, points, derivative=0):
        """Evaluate all basis functions (or a derivative) at arbitrary points.

        Points must lie within [1, J]. Returns an array of shape
        (K, len(points)).
        """
        points = np.asarray(points, dtype=float)
        if points.min() < self.boundary[0] or points.max() > self.boundary[1]:
            raise ValueError("evaluation points outside the study period")
        out = np.empty((self.K, points.size))
        for k in range(self.K):
            sp = BSpline(self.padded_knots, self.transform[:, k], _DEGREE)
            if derivative:
                sp = sp.derivative(derivative)
            out[k] = sp(points)
        return out


def _knot_grid(J, knot_spacing):
    """All knots: day 1, every ``knot_spacing`` days strictly inside, day J."""
    interior = []
    m = 1
    while 1 + m * knot_spacing < J:
        interior.append(float(1 + m * knot_spacing))
        m += 1
    return np.array(interior), (1.0, float(J))


def _natural_transform(knots):
    """Transform from the order-4 B-spline basis to the natural subspace.

    ``knots`` are the m distinct knots. The padded sequence carries m+2
    cubic B-splines; imposing zero second derivative at both borders leaves
    an m-dimensional space. Only the three B-splines touching each border
    have nonzero curvature there, so the constraint null space is built
    per border block and interior B-splines pass through unchanged,
    preserving compact support.
    """
    m = len(knots)
    t = np.r_[[knots[0]] * _DEGREE, knots, [knots[-1]] * _DEGREE]
    n_b = len(t) - (_DEGREE + 1)  # == m + 2
    curv = np.zeros((2, n_b))
    for q in range(n_b):
        c = np.zeros(n_b)
        c[q] = 1.0
        d2 = BSpline(t, c, _DEGREE).derivative(2)
        curv[0, q] = d2(knots[0])
        curv[1, q] = d2(knots[-1])
    if m >= 4:
        N = np.zeros((n_b, n_b - 2))
        N[:3, :2] = null_space(curv[:1, :3])
        N[3:n_b - 3, 2:n_b - 4] = np.eye(n_b - 6)
        N[-3:, -2:] = null_space(curv[1:, -3:])
    else:
        # border blocks overlap for m < 4; fall back to the full null space
        N = null_space(curv)
    return t, N


def build_basis(J, knot_spacing):
    """Build the natural cubic B-spline design matrix for J study days.

    Knots sit at day 1, at days 1 + m*knot_spacing strictly inside the
    period, and at day J. K equals the number of knots: 223 days with
    biweekly spacing gives K=17, 56 days gives K=5.

    Raises
    ------
    ValueError
        If ``knot_spacing`` is not positive or J leaves no interior knot.
    """
    J = int(J)
    knot_spacing = int(knot_spacing)
    if knot_spacing <= 0:
        raise ValueError("knot_spacing must be a positive number of days")
    if J < 2 * knot_spacing:
        raise ValueError(
            f"J={J} is too few days for any interior knot at spacing "
            f"{knot_spacing} (need J >= {2 * knot_spacing})"
        )
    interior, boundary = _knot_grid(J, knot_spacing)
    if interior.size == 0:
        raise ValueError("no interior knot fits strictly inside the period")
    knots = np.r_[boundary[0], interior, boundary[1]]
    t, N = _natural_transform(knots)
    days = np.arange(1, J + 1, dtype=float)
    B = BSpline.design_matrix(days, t, _DEGREE).toarray()  # (J, m+2)
    X = np.ascontiguousarray((B @ N).T)
    X[np.abs(X) < 1e-14] = 0.0
    return SplineBasis(
        J=J,
        K=N.shape[1],
        interior_knots=interior,
        boundary=boundary,
        X=X,
        padded_knots=t,
        transform=N,
    )


def evaluate_trend(beta_row, basis):
    """Linear combination ``beta_row @ X`` giving the daily trend (length J)."""
    beta_row = np.asarray(beta_row, dtype=float)
    if beta_row.shape != (basis.K,):
        raise ValueError(
            f"expected {basis.K} coefficients, got shape {beta_row.shape}"
        )
    return beta_row @ basis.X
