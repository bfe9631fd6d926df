"""Offline raceline: lateral path optimization inside the corridor, grip- and
shape-aware velocity profile, bound compensation, lap-time evaluation.

The path step minimizes integrated squared curvature with an iterated
linearized quadratic solve; the profile step runs forward (drive) and
backward (brake) passes until a fixed point, coupling longitudinal headroom
to concurrent lateral usage through the constraint shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxopt
import numpy as np
from scipy import sparse

from .grip import AccelConstraintShape, GGGVDiagram, GripMap
from .track import ReferenceLine

cvxopt.solvers.options["show_progress"] = False


class RacelineError(ValueError):
    pass


@dataclass
class BoundCompensation:
    """Local width adjustments: (s_start, s_end, delta_w_left, delta_w_right).

    Deltas add to the measured widths (negative values narrow the corridor).
    Ranges are wrap-aware on the closed track.
    """

    entries: list = field(default_factory=list)

    def apply(self, ref: ReferenceLine) -> tuple[np.ndarray, np.ndarray]:
        w_l = ref.w_left.copy()
        w_r = ref.w_right.copy()
        for s0, s1, dwl, dwr in self.entries:
            s0m = s0 % ref.length
            s1m = s1 % ref.length
            if s1m >= s0m:
                mask = (ref.s >= s0m) & (ref.s <= s1m)
            else:
                mask = (ref.s >= s0m) | (ref.s <= s1m)
            w_l[mask] += dwl
            w_r[mask] += dwr
        return w_l, w_r


@dataclass
class Raceline:
    """Optimized lap: lateral offsets alpha against the reference line plus a
    speed profile, both sampled on the reference s grid."""

    ref: ReferenceLine
    alpha: np.ndarray
    v: np.ndarray
    kappa: np.ndarray      # curvature of the offset path
    xy: np.ndarray         # (N, 2) raceline points
    h_path: np.ndarray     # segment lengths along the path (closed)
    ax: np.ndarray         # implied longitudinal accel on the outgoing segment
    ay: np.ndarray         # implied lateral accel at the node

    @property
    def lap_time(self) -> float:
        return lap_time(self.v, self.h_path)

    def _aug(self, arr):
        return np.append(arr, arr[0])

    def _s_aug(self):
        return np.append(self.ref.s, self.ref.length)

    def sample_alpha(self, s):
        return np.interp(self.ref.wrap(np.asarray(s, dtype=float)), self._s_aug(), self._aug(self.alpha))

    def sample_v(self, s):
        return np.interp(self.ref.wrap(np.asarray(s, dtype=float)), self._s_aug(), self._aug(self.v))

    def sample_kappa(self, s):
        return np.interp(self.ref.wrap(np.asarray(s, dtype=float)), self._s_aug(), self._aug(self.kappa))

    def save(self, path):
        with open(path, "w") as f:
            f.write("# raceline: s x y alpha v kappa\n")
            for i in range(len(self.alpha)):
                f.write(f"{self.ref.s[i]:.4f} {self.xy[i, 0]:.6f} {self.xy[i, 1]:.6f} "
                        f"{self.alpha[i]:.6f} {self.v[i]:.6f} {self.kappa[i]:.8f}\n")

    @staticmethod
    def load(path, ref: ReferenceLine) -> "Raceline":
        rows = []
        with open(path) as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if line:
                    rows.append([float(w) for w in line.split()])
        arr = np.array(rows)
        if len(arr) != len(ref.s) or np.max(np.abs(arr[:, 0] - ref.s)) > 1e-3:
            raise RacelineError("raceline file does not match the reference grid")
        alpha = arr[:, 3]
        xy = arr[:, 1:3]
        kappa = arr[:, 5]
        h_path = _closed_segment_lengths(xy)
        v = arr[:, 4]
        ax, ay = implied_accelerations(v, kappa, h_path)
        return Raceline(ref=ref, alpha=alpha, v=v, kappa=kappa, xy=xy,
                        h_path=h_path, ax=ax, ay=ay)


def _closed_segment_lengths(xy: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)


def offset_path_points(ref: ReferenceLine, alpha: np.ndarray) -> np.ndarray:
    normals = np.column_stack([-np.sin(ref.psi), np.cos(ref.psi)])
    return np.column_stack([ref.x, ref.y]) + alpha[:, None] * normals


def path_curvature(xy: np.ndarray) -> np.ndarray:
    """Signed curvature of a closed polyline via heading differences."""
    d = np.roll(xy, -1, axis=0) - xy
    seg = np.linalg.norm(d, axis=1)
    psi = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    dpsi = np.roll(psi, -1) - psi
    dpsi = np.mod(dpsi + math.pi, 2.0 * math.pi) - math.pi
    ds = 0.5 * (seg + np.roll(seg, -1))
    kappa_mid = dpsi / ds
    # kappa_mid sits between nodes i+1/2; average onto nodes
    return 0.5 * (kappa_mid + np.roll(kappa_mid, 1))


def implied_accelerations(v: np.ndarray, kappa: np.ndarray,
                          h_path: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ax = (np.roll(v, -1) ** 2 - v**2) / (2.0 * h_path)
    ay = v**2 * kappa
    return ax, ay


# ---------------------------------------------------------------------------
# lateral path optimization
# ---------------------------------------------------------------------------

def optimize_path(ref: ReferenceLine, comp: BoundCompensation | None = None,
                  half_width: float = 0.95, max_iter: int = 50,
                  tol: float = 1e-3) -> np.ndarray:
    """Minimum-curvature lateral offsets inside the compensated corridor.

    Each iteration linearizes the squared-curvature objective around the
    current path (second differences with the current segment lengths) and
    solves the resulting box-constrained least squares problem; iterations
    stop when max |delta alpha| < tol.
    """
    comp = comp or BoundCompensation()
    w_l, w_r = comp.apply(ref)
    hi = w_l - half_width
    lo = -(w_r - half_width)
    if np.any(hi < lo) or np.any(hi < 0) or np.any(lo > 0):
        raise RacelineError("corridor infeasible: width below vehicle width somewhere")

    n = len(ref.s)
    normals = np.column_stack([-np.sin(ref.psi), np.cos(ref.psi)])
    cx = ref.x
    cy = ref.y
    alpha = np.zeros(n)

    for _ in range(max_iter):
        pts = np.column_stack([cx, cy]) + alpha[:, None] * normals
        seg = _closed_segment_lengths(pts)
        hm = np.roll(seg, 1)   # |p_i - p_{i-1}|
        hp = seg               # |p_{i+1} - p_i|
        c_prev = 2.0 / (hm * (hm + hp))
        c_here = -2.0 / (hm * hp)
        c_next = 2.0 / (hp * (hm + hp))
        idx = np.arange(n)
        d2 = sparse.csr_matrix(
            (np.concatenate([c_prev, c_here, c_next]),
             (np.concatenate([idx, idx, idx]),
              np.concatenate([(idx - 1) % n, idx, (idx + 1) % n]))),
            shape=(n, n))
        a_mat = sparse.vstack([
            d2 @ sparse.diags(normals[:, 0]),
            d2 @ sparse.diags(normals[:, 1]),
        ]).tocsr()
        b = -np.concatenate([d2 @ cx, d2 @ cy])
        new_alpha = _bounded_lsq(a_mat, b, lo, hi)
        step = float(np.max(np.abs(new_alpha - alpha)))
        alpha = new_alpha
        if step < tol:
            break
    return alpha


def _bounded_lsq(a_mat, b, lo, hi) -> np.ndarray:
    """min ||A x - b||^2 with box bounds, solved as a sparse QP."""
    m = a_mat.shape[1]
    p = (a_mat.T @ a_mat).tocoo()
    q = -(a_mat.T @ b)
    p_cv = cvxopt.spmatrix(p.data, p.row.astype(int), p.col.astype(int), (m, m))
    g = sparse.vstack([sparse.eye(m), -sparse.eye(m)]).tocoo()
    g_cv = cvxopt.spmatrix(g.data, g.row.astype(int), g.col.astype(int), (2 * m, m))
    h = cvxopt.matrix(np.concatenate([hi, -lo]))
    sol = cvxopt.solvers.qp(p_cv, cvxopt.matrix(q), g_cv, h)
    if sol["status"] not in ("optimal", "unknown"):
        raise RacelineError(f"path QP failed: {sol['status']}")
    return np.array(sol["x"]).ravel()


# ---------------------------------------------------------------------------
# velocity profile
# ---------------------------------------------------------------------------

def _caps_array(ref: ReferenceLine, caps) -> np.ndarray:
    out = np.full(len(ref.s), np.inf)
    if ref.v_cap is not None:
        out = np.minimum(out, ref.v_cap)
    if caps is None:
        return out
    if isinstance(caps, (int, float)):
        return np.minimum(out, float(caps))
    caps = list(caps)
    if caps and isinstance(caps[0], (tuple, list)):
        for s0, s1, vc in caps:
            s0m, s1m = s0 % ref.length, s1 % ref.length
            if s1m >= s0m:
                mask = (ref.s >= s0m) & (ref.s <= s1m)
            else:
                mask = (ref.s >= s0m) | (ref.s <= s1m)
            out[mask] = np.minimum(out[mask], vc)
        return out
    arr = np.asarray(caps, dtype=float)
    if arr.shape != out.shape:
        raise RacelineError("cap array must match the reference grid")
    return np.minimum(out, arr)


class _LimitTable:
    """Fine 1D interpolation table over v for one a_z level (hot-loop helper)."""

    def __init__(self, gggv: GGGVDiagram, az: float, dv: float = 0.05):
        self.dv = dv
        self.v_top = gggv.v_max
        grid = np.arange(0.0, self.v_top + dv, dv)
        ax_d, ax_b, ay = gggv.limits(grid, np.full(len(grid), az))
        self.ax_d = ax_d.tolist()
        self.ax_b = ax_b.tolist()
        self.ay = ay.tolist()
        self.n = len(grid)

    def at(self, v: float) -> tuple[float, float, float]:
        x = min(max(v, 0.0), self.v_top) / self.dv
        i = int(x)
        if i >= self.n - 1:
            return self.ax_d[-1], self.ax_b[-1], self.ay[-1]
        f = x - i
        return (self.ax_d[i] + f * (self.ax_d[i + 1] - self.ax_d[i]),
                self.ax_b[i] + f * (self.ax_b[i + 1] - self.ax_b[i]),
                self.ay[i] + f * (self.ay[i + 1] - self.ay[i]))


def velocity_profile(ref: ReferenceLine, alpha: np.ndarray, gggv: GGGVDiagram,
                     gripmap: GripMap | None, shape: AccelConstraintShape,
                     caps=None, mu: float = 1.0,
                     max_sweeps: int = 200) -> np.ndarray:
    """Largest speed profile feasible under lateral limits, shape-coupled
    longitudinal budgets (forward drive / backward brake passes to a fixed
    point) and per-s caps."""
    n = len(ref.s)
    xy = offset_path_points(ref, alpha)
    h_arr = _closed_segment_lengths(xy)
    if float(np.max(h_arr)) > 2.0 + 1e-9:
        raise RacelineError("profile grid step must be <= 2 m")
    kappa_arr = np.abs(path_curvature(xy))
    az_arr = ref.sample_az(ref.s)
    theta_arr = gripmap.lookup(ref.s, alpha, n_ref=alpha) * mu if gripmap is not None else np.full(n, mu)
    cap_arr = np.minimum(_caps_array(ref, caps), gggv.v_max)
    rho = shape.rho

    # one limit table per distinct a_z level (constant g in the flat case)
    az_keys = np.round(az_arr, 6)
    tables = {key: _LimitTable(gggv, key) for key in np.unique(az_keys)}
    tab = [tables[k] for k in az_keys]

    kappa = kappa_arr.tolist()
    theta = theta_arr.tolist()
    h_path = h_arr.tolist()
    cap = cap_arr.tolist()

    def drive_budget(vv: float, i: int) -> float:
        t = theta[i]
        if t <= 0.0:
            return 0.0
        ax_d, _, ay_l = tab[i].at(vv)
        residual = rho - (vv * vv * kappa[i]) / (ay_l * t)
        if residual > 1.0:
            residual = 1.0
        return ax_d * t * residual if residual > 0.0 else 0.0

    def brake_budget(vv: float, i: int) -> float:
        t = theta[i]
        if t <= 0.0:
            return 0.0
        _, ax_b, ay_l = tab[i].at(vv)
        residual = rho - (vv * vv * kappa[i]) / (ay_l * t)
        if residual > 1.0:
            residual = 1.0
        return ax_b * t * residual if residual > 0.0 else 0.0

    # pointwise steady-state lateral limit (greatest fixed point from above)
    v = [0.0] * n
    for i in range(n):
        if theta[i] <= 0.0:
            raise RacelineError(f"no feasible speed at node {i} (zero grip)")
        if kappa[i] < 1e-12:
            v[i] = cap[i]
            continue
        vi = cap[i]
        for _ in range(80):
            ay_lim = tab[i].at(vi)[2] * theta[i]
            v_new = min(cap[i], math.sqrt(ay_lim / kappa[i]))
            if abs(v_new - vi) < 1e-12:
                vi = v_new
                break
            vi = v_new
        v[i] = vi
        if vi <= 0.0:
            raise RacelineError(f"no feasible speed at node {i}")

    backoff = 1.0 - 1e-9
    for _ in range(max_sweeps):
        changed = 0.0
        # forward: drive capability
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            vi = v[i]
            budget = drive_budget(vi, i)
            cand = math.sqrt(vi * vi + 2.0 * budget * h_path[i])
            for _ in range(3):
                b2 = min(budget, drive_budget(cand, j))
                cand = math.sqrt(vi * vi + 2.0 * b2 * backoff * h_path[i])
            if cand < v[j]:
                delta = v[j] - cand
                if delta > changed:
                    changed = delta
                v[j] = cand
        # backward: brake capability
        for i in range(n - 1, -1, -1):
            j = i + 1 if i + 1 < n else 0
            vj = v[j]
            budget = brake_budget(vj, j)
            cand = math.sqrt(vj * vj + 2.0 * budget * h_path[i])
            for _ in range(3):
                b2 = min(budget, brake_budget(cand, i))
                cand = math.sqrt(vj * vj + 2.0 * b2 * backoff * h_path[i])
            if cand < v[i]:
                delta = v[i] - cand
                if delta > changed:
                    changed = delta
                v[i] = cand
        if changed < 1e-9:
            break
    return np.array(v)


def lap_time(v: np.ndarray, h_path: np.ndarray) -> float:
    """Trapezoidal integral of ds/v around the closed lap."""
    if np.any(v <= 0):
        raise RacelineError("speeds must be positive for lap time")
    inv = 1.0 / v
    return float(np.sum(h_path * 0.5 * (inv + np.roll(inv, -1))))


def build_raceline(ref: ReferenceLine, gggv: GGGVDiagram,
                   gripmap: GripMap | None = None,
                   shape: AccelConstraintShape | None = None,
                   comp: BoundCompensation | None = None,
                   half_width: float = 0.95, caps=None,
                   mu: float = 1.0) -> Raceline:
    """Full offline pipeline: path optimization then velocity profile."""
    shape = shape or AccelConstraintShape.octagon()
    alpha = optimize_path(ref, comp, half_width)
    v = velocity_profile(ref, alpha, gggv, gripmap, shape, caps=caps, mu=mu)
    xy = offset_path_points(ref, alpha)
    h_path = _closed_segment_lengths(xy)
    kappa = path_curvature(xy)
    ax, ay = implied_accelerations(v, kappa, h_path)
    return Raceline(ref=ref, alpha=alpha, v=v, kappa=kappa, xy=xy,
                    h_path=h_path, ax=ax, ay=ay)


def centerline_raceline(ref: ReferenceLine, gggv: GGGVDiagram,
                        gripmap: GripMap | None = None,
                        shape: AccelConstraintShape | None = None,
                        caps=None, mu: float = 1.0) -> Raceline:
    """Raceline that follows the reference line itself (alpha = 0)."""
    shape = shape or AccelConstraintShape.octagon()
    alpha = np.zeros(len(ref.s))
    v = velocity_profile(ref, alpha, gggv, gripmap, shape, caps=caps, mu=mu)
    xy = offset_path_points(ref, alpha)
    h_path = _closed_segment_lengths(xy)
    kappa = path_curvature(xy)
    ax, ay = implied_accelerations(v, kappa, h_path)
    return Raceline(ref=ref, alpha=alpha, v=v, kappa=kappa, xy=xy,
                    h_path=h_path, ax=ax, ay=ay)
