"""Time-optimal path parameterization by reachability analysis.

Works in the squared path velocity x = sdot^2, where the joint acceleration
constraints q'' x + q' u in [-a_max, a_max] (u = sddot) are linear. A backward
pass intersects the per-joint constraint pairs in closed form to get the
controllable interval of x at every grid point; a greedy forward pass then
takes the largest reachable x. No LP solver involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-10


class InfeasiblePathError(ValueError):
    def __init__(self, message: str, index: int = -1):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class GeometricPath:
    """Configurations on a strictly increasing grid s in [0, 1] with
    finite-difference first and second derivatives w.r.t. s."""

    s: np.ndarray  # N
    q: np.ndarray  # N x dof
    qs: np.ndarray  # dq/ds
    qss: np.ndarray  # d2q/ds2

    def __post_init__(self):
        if self.s.shape[0] < 2:
            raise ValueError("need at least two grid points")
        if abs(self.s[0]) > 1e-12 or abs(self.s[-1] - 1.0) > 1e-12:
            raise ValueError("grid must span [0, 1]")
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("grid must be strictly increasing")


def path_from_waypoints(waypoints: np.ndarray) -> GeometricPath:
    """Uniform-grid path through the waypoints, derivatives by central differences."""
    q = np.atleast_2d(np.asarray(waypoints, dtype=np.float64))
    n = q.shape[0]
    if n < 2:
        raise ValueError("need at least two waypoints")
    s = np.linspace(0.0, 1.0, n)
    h = s[1] - s[0]
    qs = np.gradient(q, h, axis=0)
    qss = np.empty_like(q)
    qss[1:-1] = (q[2:] - 2 * q[1:-1] + q[:-2]) / (h * h)
    qss[0] = qss[1]
    qss[-1] = qss[-2]
    return GeometricPath(s, q, qs, qss)


@dataclass
class TimedTrajectory:
    times: np.ndarray  # N, starting at 0, non-decreasing
    q: np.ndarray  # N x dof
    qd: np.ndarray  # per-joint velocities at grid points
    sd: np.ndarray  # path velocity at grid points


def _vel_bound_sq(qs_i: np.ndarray, v_max: np.ndarray) -> float:
    """Largest x = sdot^2 honoring every per-joint velocity limit."""
    mask = np.abs(qs_i) > _EPS
    if not mask.any():
        return np.inf
    return float(np.min((v_max[mask] / np.abs(qs_i[mask])) ** 2))


def _u_bounds_affine(qs_i, qss_i, a_max):
    """Per-joint accel constraints as affine u-bounds: u >= lo_c + lo_s*x and
    u <= hi_c + hi_s*x, plus pure x upper bounds from q' ~ 0 joints."""
    lows, highs = [], []
    x_caps = []
    for p, c, a in zip(qs_i, qss_i, a_max):
        if abs(p) > _EPS:
            if p > 0:
                lows.append((-a / p, -c / p))
                highs.append((a / p, -c / p))
            else:
                lows.append((a / p, -c / p))
                highs.append((-a / p, -c / p))
        elif abs(c) > _EPS:
            x_caps.append(a / abs(c))
    return lows, highs, (min(x_caps) if x_caps else np.inf)


def retime(path: GeometricPath, v_max, a_max, boundary: str = "rest-to-rest") -> TimedTrajectory:
    """Time-optimal rest-to-rest traversal of the path under joint limits."""
    if boundary != "rest-to-rest":
        raise ValueError("only rest-to-rest boundary conditions are supported")
    v_max = np.asarray(v_max, dtype=np.float64).reshape(-1)
    a_max = np.asarray(a_max, dtype=np.float64).reshape(-1)
    if np.any(v_max <= 0) or np.any(a_max <= 0):
        raise ValueError("limits must be positive")
    n, dof = path.q.shape
    if v_max.shape[0] != dof or a_max.shape[0] != dof:
        raise ValueError("limit dimension mismatch")
    if float(np.max(np.abs(path.qs))) < 1e-9:
        raise InfeasiblePathError("degenerate zero-length path", 0)

    ds = np.diff(path.s)
    xv = np.array([_vel_bound_sq(path.qs[i], v_max) for i in range(n)])

    # Backward pass: controllable interval [L, U] of x at each grid point.
    L = np.zeros(n)
    U = np.zeros(n)
    U[-1] = 0.0
    for i in range(n - 2, -1, -1):
        lows, highs, x_cap = _u_bounds_affine(path.qs[i], path.qss[i], a_max)
        two_d = 2.0 * ds[i]
        # Reachability of [L_{i+1}, U_{i+1}]: u in [(L-x)/2d, (U-x)/2d].
        lows = lows + [(L[i + 1] / two_d, -1.0 / two_d)]
        highs = highs + [(U[i + 1] / two_d, -1.0 / two_d)]
        lo, hi = 0.0, min(xv[i], x_cap)
        ok = True
        for (ac, asl) in lows:
            for (bc, bsl) in highs:
                coef = asl - bsl
                rhs = bc - ac
                if abs(coef) < _EPS:
                    if rhs < -1e-12:
                        ok = False
                elif coef > 0:
                    hi = min(hi, rhs / coef)
                else:
                    lo = max(lo, rhs / coef)
        if not ok or lo > hi + 1e-12:
            raise InfeasiblePathError(f"empty controllable set at grid point {i}", i)
        L[i], U[i] = lo, max(lo, hi)

    if L[0] > 1e-9:
        raise InfeasiblePathError("rest start velocity is not controllable", 0)

    # Forward pass: greedy maximal reachable x.
    x = np.zeros(n)
    for i in range(n - 1):
        lows, highs, x_cap = _u_bounds_affine(path.qs[i], path.qss[i], a_max)
        u_lo, u_hi = -np.inf, np.inf
        for (ac, asl) in lows:
            u_lo = max(u_lo, ac + asl * x[i])
        for (bc, bsl) in highs:
            u_hi = min(u_hi, bc + bsl * x[i])
        if u_hi < u_lo - 1e-12:
            raise InfeasiblePathError(f"no feasible path acceleration at grid point {i}", i)
        nxt = x[i] + 2.0 * ds[i] * u_hi
        x[i + 1] = float(np.clip(nxt, L[i + 1], U[i + 1]))

    sd = np.sqrt(np.maximum(x, 0.0))
    times = np.zeros(n)
    for i in range(n - 1):
        denom = sd[i] + sd[i + 1]
        if denom < 1e-12:
            raise InfeasiblePathError(f"stalled segment at grid point {i}", i)
        times[i + 1] = times[i] + 2.0 * ds[i] / denom
    qd = path.qs * sd[:, None]
    return TimedTrajectory(times, path.q.copy(), qd, sd)


def sample_timed(traj: TimedTrajectory, dt: float):
    """Uniform-dt samples of (time, configuration, velocity); the final
    sample is taken at exactly the terminal time."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    total = float(traj.times[-1])
    ts = list(np.arange(0.0, total, dt))
    if not ts or total - ts[-1] > 1e-12:
        ts.append(total)
    else:
        ts[-1] = total
    qs = np.stack([np.interp(ts, traj.times, traj.q[:, j]) for j in range(traj.q.shape[1])], axis=1)
    qds = np.stack([np.interp(ts, traj.times, traj.qd[:, j]) for j in range(traj.qd.shape[1])], axis=1)
    return np.asarray(ts), qs, qds
