"""Sampling-based local trajectory planner.

Each cycle: sample end states on a lateral/longitudinal lattice around the
raceline, connect them with time-domain polynomials (quartic longitudinal,
quintic lateral), validate in four stages, score with a six-term cost, select
the cheapest valid sample, and refresh the emergency (brake-to-stop) variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grip import AccelConstraintShape, GGGVDiagram, GripMap, scaled_limits_arrays, violation_ratios
from .prediction import PredictedTrajectory
from .raceline import Raceline
from .track import ReferenceLine


class PlannerError(ValueError):
    pass


@dataclass(frozen=True)
class CostWeights:
    """Nonnegative weights for the six cost terms."""

    lat_dev: float = 0.35
    v_err: float = 0.6
    kappa_dev: float = 8.0
    accel_viol: float = 60.0
    collision: float = 3000.0
    proximity: float = 400.0

    def __post_init__(self):
        vals = (self.lat_dev, self.v_err, self.kappa_dev, self.accel_viol,
                self.collision, self.proximity)
        if any(v < 0 for v in vals):
            raise PlannerError("cost weights must be nonnegative")
        if not any(v > 0 for v in vals):
            raise PlannerError("at least one cost weight must be positive")

    def as_tuple(self):
        return (self.lat_dev, self.v_err, self.kappa_dev, self.accel_viol,
                self.collision, self.proximity)


@dataclass(frozen=True)
class SafetyEllipse:
    """Speed-scaled elliptical safety region around opponents.

    Semi-axes grow linearly with the positive closing speed; the longitudinal
    axis always dominates the lateral one.
    """

    a_long_base: float = 6.0
    a_long_gain: float = 0.8    # s, sized against relative braking distance
    b_lat_base: float = 2.6
    b_lat_gain: float = 0.02    # s

    def axes(self, v_rel_pos):
        v = np.maximum(np.asarray(v_rel_pos, dtype=float), 0.0)
        a = self.a_long_base + self.a_long_gain * v
        b = self.b_lat_base + self.b_lat_gain * v
        return a, np.minimum(b, a)


@dataclass(frozen=True)
class PlannerConfig:
    horizon: float = 4.0
    dt: float = 0.1
    n_lateral: int = 7                      # odd: raceline target plus pairs
    lateral_growth: float = 2.0
    rail_speed_offsets: tuple = (0.0, -1.5, -3.0, -4.5, -6.0)
    jerk_speed_offsets: tuple = (-3.0, 0.0, 2.0)
    include_stop_sample: bool = True        # max-brake candidate in the lattice
    kappa_max: float = 0.12                 # 1/m, vehicle turning limit
    accel_margin: float = 0.05              # stage 4 fractional margin
    half_width: float = 0.95                # vehicle half width, m
    footprint_length: float = 5.0
    footprint_width: float = 1.9
    footprint_margin: float = 0.5           # plan-time inflation per side
    leader_discount: float = 0.25           # proximity scale for opponents behind
    bounds_grace: float = 0.6               # s, stage 2 skips the settling window
    weights: CostWeights = field(default_factory=CostWeights)
    ellipse: SafetyEllipse = field(default_factory=SafetyEllipse)

    def __post_init__(self):
        if self.n_lateral < 1 or self.n_lateral % 2 == 0:
            raise PlannerError("n_lateral must be odd and >= 1")
        if self.horizon <= 0:
            raise PlannerError("degenerate horizon")

    @property
    def n_points(self) -> int:
        return int(round(self.horizon / self.dt)) + 1

    @property
    def n_longitudinal(self) -> int:
        return (len(self.rail_speed_offsets) + len(self.jerk_speed_offsets)
                + (1 if self.include_stop_sample else 0))


@dataclass(frozen=True)
class StartState:
    """Frenet start state with time derivatives."""

    s: float
    s_dot: float
    s_ddot: float
    n: float
    n_dot: float
    n_ddot: float


@dataclass(frozen=True)
class EndState:
    lat_index: int
    long_index: int
    n_target: float
    v_target: float
    tag: str                   # "rail" | "jerk" | "emergency"
    speed_offset: float = 0.0  # rail: offset against the profile speed


@dataclass
class Validity:
    curvature: bool = False
    bounds: bool = False
    speed_limit: bool = False
    acceleration: bool = False
    evaluated: bool = False

    @property
    def all_passed(self) -> bool:
        return self.curvature and self.bounds and self.speed_limit and self.acceleration

    @property
    def first_failure(self) -> str | None:
        for name in ("curvature", "bounds", "speed_limit", "acceleration"):
            if not getattr(self, name):
                return name
        return None


@dataclass
class CostBreakdown:
    lat_dev: float = 0.0
    v_err: float = 0.0
    kappa_dev: float = 0.0
    accel_viol: float = 0.0
    collision: float = 0.0
    proximity: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return {
            "lat_dev": self.lat_dev, "v_err": self.v_err,
            "kappa_dev": self.kappa_dev, "accel_viol": self.accel_viol,
            "collision": self.collision, "proximity": self.proximity,
            "total": self.total,
        }


@dataclass
class TrajectorySample:
    t: np.ndarray
    s: np.ndarray          # wrapped onto [0, L)
    n: np.ndarray
    v: np.ndarray
    ax: np.ndarray         # longitudinal (path) acceleration
    ay: np.ndarray         # lateral acceleration v^2 * kappa
    kappa: np.ndarray      # trajectory curvature
    psi_rel: np.ndarray    # heading relative to the reference tangent
    end: EndState
    track_length: float = math.inf
    validity: Validity = field(default_factory=Validity)
    cost: CostBreakdown = field(default_factory=CostBreakdown)
    emergency: bool = False
    s_dot: np.ndarray | None = None    # raw Frenet derivatives for replan continuity
    s_ddot: np.ndarray | None = None
    n_dot: np.ndarray | None = None
    n_ddot: np.ndarray | None = None

    def point_at(self, t_query: float) -> dict:
        t_query = float(np.clip(t_query, self.t[0], self.t[-1]))
        s_un = _unwrap_progress(self.s, self.track_length)
        return {
            "s": float(np.interp(t_query, self.t, s_un)) % self.track_length,
            "n": float(np.interp(t_query, self.t, self.n)),
            "v": float(np.interp(t_query, self.t, self.v)),
            "ax": float(np.interp(t_query, self.t, self.ax)),
            "kappa": float(np.interp(t_query, self.t, self.kappa)),
            "psi_rel": float(np.interp(t_query, self.t, self.psi_rel)),
        }


def _unwrap_progress(s: np.ndarray, length: float) -> np.ndarray:
    """Undo modulo-L wraps in a forward-progress s series."""
    out = np.asarray(s, dtype=float)
    if not math.isfinite(length):
        return out.copy()
    d = np.diff(out)
    d = np.where(d < -0.5 * length, d + length, d)
    return np.concatenate([[out[0]], out[0] + np.cumsum(d)])


# ---------------------------------------------------------------------------
# end-state sampling
# ---------------------------------------------------------------------------

def sample_end_states(start: StartState, rl: Raceline, cfg: PlannerConfig,
                      max_velocity: float = math.inf) -> list[EndState]:
    """Lattice of end states: lateral geometric grid about the raceline offset
    (finer near it), longitudinal union of raceline-profile offsets (the rail
    family, realized by following the speed profile) and around-current speed
    targets (the jerk-optimal family)."""
    ref = rl.ref
    v_rl0 = float(rl.sample_v(start.s))
    s_end_est = ref.wrap(start.s + 0.5 * (start.s_dot + v_rl0) * cfg.horizon)
    alpha_end = float(rl.sample_alpha(s_end_est))
    w_l, w_r = (float(w) for w in ref.sample_widths(s_end_est))
    left_avail = max(w_l - cfg.half_width - alpha_end, 0.0)
    right_avail = max(alpha_end + w_r - cfg.half_width, 0.0)

    pairs = (cfg.n_lateral - 1) // 2
    g = cfg.lateral_growth
    fracs = np.array([g**k for k in range(1, pairs + 1)])
    fracs = fracs / fracs[-1] if pairs else fracs

    offsets = [0.0]
    for f in fracs:
        offsets.append(-f * right_avail)
        offsets.append(+f * left_avail)

    v_targets = []
    for off in cfg.rail_speed_offsets:
        # realized end speed is filled in by the profile-following generator
        v_targets.append((max(0.0, min(float(rl.sample_v(s_end_est)) + off,
                                       max_velocity)), "rail", off))
    if cfg.include_stop_sample:
        v_targets.append((0.0, "stop", 0.0))
    for off in cfg.jerk_speed_offsets:
        v_targets.append((max(0.0, min(start.s_dot + off, max_velocity)),
                          "jerk", off))

    ends = []
    for li, dn in enumerate(offsets):
        for vi, (vt, tag, off) in enumerate(v_targets):
            ends.append(EndState(lat_index=li, long_index=vi,
                                 n_target=alpha_end + dn, v_target=vt, tag=tag,
                                 speed_offset=off))
    return ends


# ---------------------------------------------------------------------------
# polynomial generation
# ---------------------------------------------------------------------------

def quartic_long_coeffs(s0, v0, a0, v_end, T):
    """s(t) quartic: position/velocity/acceleration at 0, velocity and zero
    acceleration at T; end position free."""
    v_end = np.asarray(v_end, dtype=float)
    a_coef = np.empty(v_end.shape + (5,))
    a_coef[..., 0] = s0
    a_coef[..., 1] = v0
    a_coef[..., 2] = a0 / 2.0
    big_a = v_end - v0 - a0 * T
    big_b = -a0
    a_coef[..., 3] = (3.0 * big_a - T * big_b) / (3.0 * T**2)
    a_coef[..., 4] = (T * big_b - 2.0 * big_a) / (4.0 * T**3)
    return a_coef


def quintic_lat_coeffs(n0, nd0, ndd0, n_end, T):
    """n(t) quintic: full state at 0, position with zero slope/curvature at T."""
    n_end = np.asarray(n_end, dtype=float)
    c = np.empty(n_end.shape + (6,))
    c[..., 0] = n0
    c[..., 1] = nd0
    c[..., 2] = ndd0 / 2.0
    p = n_end - (n0 + nd0 * T + 0.5 * ndd0 * T**2)
    v = -(nd0 + ndd0 * T)
    a = -ndd0
    c[..., 3] = (20.0 * p - 8.0 * T * v + T**2 * a) / (2.0 * T**3)
    c[..., 4] = (-30.0 * p + 14.0 * T * v - 2.0 * T**2 * a) / (2.0 * T**4)
    c[..., 5] = (12.0 * p - 6.0 * T * v + T**2 * a) / (2.0 * T**5)
    return c


def _poly_eval(coeffs: np.ndarray, t: np.ndarray, derivative: int = 0) -> np.ndarray:
    """Evaluate batched polynomials (..., order+1) on a time grid (K,)."""
    order = coeffs.shape[-1] - 1
    out = np.zeros(coeffs.shape[:-1] + t.shape)
    for p in range(derivative, order + 1):
        fac = 1.0
        for q in range(p, p - derivative, -1):
            fac *= q
        out += coeffs[..., p, None] * fac * t[None, :] ** (p - derivative)
    return out


@dataclass
class _RefView:
    """Per-sample reference quantities interpolated on the s grid."""

    kappa: np.ndarray
    dkappa: np.ndarray
    alpha: np.ndarray
    v_rl: np.ndarray
    kappa_rl: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    az: np.ndarray
    psi: np.ndarray


def _ref_view(rl: Raceline, s_flat: np.ndarray) -> _RefView:
    ref = rl.ref
    kappa = ref.sample_kappa(s_flat)
    aug_s = np.append(ref.s, ref.length)
    dk = np.gradient(ref.kappa, ref.s)
    dkappa = np.interp(ref.wrap(s_flat), aug_s, np.append(dk, dk[0]))
    w_l, w_r = ref.sample_widths(s_flat)
    return _RefView(
        kappa=kappa, dkappa=dkappa,
        alpha=rl.sample_alpha(s_flat), v_rl=rl.sample_v(s_flat),
        kappa_rl=rl.sample_kappa(s_flat),
        w_left=w_l, w_right=w_r, az=ref.sample_az(s_flat),
        psi=ref.sample_psi(s_flat),
    )


def generate_trajectory(start: StartState, end: EndState, rl: Raceline,
                        cfg: PlannerConfig) -> TrajectorySample:
    """Single-sample generation (batch path used by plan_cycle)."""
    batch = generate_batch(start, [end], rl, cfg)
    return batch[0]


def follow_profiles(start: StartState, offsets, rl: Raceline, cfg: PlannerConfig,
                    gripmap: GripMap | None, gggv: GGGVDiagram,
                    shape: AccelConstraintShape, mu: float = 1.0,
                    max_velocity: float = math.inf):
    """Longitudinal candidates that ride the raceline speed profile at a
    constant offset, embedding its brake points.

    The chase target is a backward braking envelope over the profile (never
    accelerate into a braking zone); the approach from the current speed is
    limited by the shape-coupled drive/brake budgets.

    Returns (s, s_dot, s_ddot) arrays of shape (len(offsets), n_points).
    """
    offs = np.asarray(offsets, dtype=float)
    m = len(offs)
    k = cfg.n_points
    dt = cfg.dt
    rho = shape.rho
    cap_frac = 1.0 / (1.0 + cfg.accel_margin)  # stay clear of the margin ceiling

    # anticipatory envelope: profile speeds looked at ahead of the start,
    # propagated backward at a conservative brake rate
    v0 = max(start.s_dot, 0.0)
    grid_step = 2.0
    lookahead = cfg.horizon * (v0 + float(rl.sample_v(start.s)) + 10.0) * 0.75 + 60.0
    s_q = start.s + np.arange(0.0, lookahead, grid_step)
    v_q = np.asarray(rl.sample_v(s_q), dtype=float)
    alpha_q = np.asarray(rl.sample_alpha(s_q), dtype=float)
    kap_q = np.abs(np.asarray(rl.sample_kappa(s_q), dtype=float))
    az_q = rl.ref.sample_az(s_q)
    _, ax_b_q, ay_l_q = scaled_limits_arrays(gripmap, gggv, s_q, alpha_q, v_q,
                                             az_q, mu=mu, n_ref=alpha_q)
    resid_q = np.clip(rho - (v_q**2 * kap_q) / np.maximum(ay_l_q, 1e-9), 0.0, 1.0)
    a_env = np.maximum(ax_b_q * resid_q * 0.85, 1.0)
    env = np.minimum(v_q[None, :] + offs[:, None], max_velocity)
    env = np.maximum(env, 0.0)
    for j in range(len(s_q) - 2, -1, -1):
        reach = np.sqrt(env[:, j + 1] ** 2 + 2.0 * a_env[j] * grid_step)
        env[:, j] = np.minimum(env[:, j], reach)

    s = np.empty((m, k))
    sd = np.empty((m, k))
    sdd = np.zeros((m, k))
    s[:, 0] = start.s
    sd[:, 0] = v0
    for i in range(k - 1):
        si = s[:, i]
        vi = sd[:, i]
        alpha = rl.sample_alpha(si)
        kap = np.abs(rl.sample_kappa(si))
        az = rl.ref.sample_az(si)
        ax_d, ax_b, ay_l = scaled_limits_arrays(gripmap, gggv, si, alpha,
                                                vi, az, mu=mu, n_ref=alpha)
        ay_used = vi**2 * kap
        residual = np.clip(rho - ay_used / np.maximum(ay_l, 1e-9), 0.0, 1.0)
        a_up = ax_d * residual * cap_frac
        # keep some brake authority even when laterally saturated
        a_dn = np.maximum(ax_b * residual * cap_frac, 0.25 * ax_b)
        look = si + np.maximum(vi, 1.0) * dt
        v_tgt = np.empty(m)
        for r in range(m):
            v_tgt[r] = np.interp(look[r], s_q, env[r])
        v_next = np.clip(v_tgt, vi - a_dn * dt, vi + a_up * dt)
        v_next = np.maximum(v_next, 0.0)
        s[:, i + 1] = si + 0.5 * (vi + v_next) * dt
        sd[:, i + 1] = v_next
        sdd[:, i] = (v_next - vi) / dt
    sdd[:, -1] = sdd[:, -2]
    return s, sd, sdd


def generate_batch(start: StartState, ends: list[EndState], rl: Raceline,
                   cfg: PlannerConfig,
                   long_arrays: dict | None = None) -> list[TrajectorySample]:
    """Connect the start state with every end state.

    Longitudinal motion is a quartic unless ``long_arrays`` supplies explicit
    (s, s_dot, s_ddot) rows for an end state's long_index (the rail family).
    Lateral motion is always the quintic.
    """
    if cfg.horizon <= 0:
        raise PlannerError("degenerate horizon")
    T = cfg.horizon
    t = np.arange(cfg.n_points) * cfg.dt
    m = len(ends)
    n_t = np.array([e.n_target for e in ends])
    v_t = np.array([e.v_target for e in ends])

    ca = quartic_long_coeffs(start.s, start.s_dot, start.s_ddot, v_t, T)
    cl = quintic_lat_coeffs(start.n, start.n_dot, start.n_ddot, n_t, T)

    s_arr = _poly_eval(ca, t)                # (m, K), unwrapped
    sd = _poly_eval(ca, t, 1)
    sdd = _poly_eval(ca, t, 2)
    if long_arrays:
        for i, e in enumerate(ends):
            row = long_arrays.get(e.long_index)
            if row is not None:
                s_arr[i], sd[i], sdd[i] = row
    n_arr = _poly_eval(cl, t)
    nd = _poly_eval(cl, t, 1)
    ndd = _poly_eval(cl, t, 2)

    rv = _ref_view(rl, s_arr.ravel())
    kap_ref = rv.kappa.reshape(m, -1)
    dkap_ref = rv.dkappa.reshape(m, -1)

    one_kn = 1.0 - kap_ref * n_arr
    u = sd * one_kn                          # tangential velocity component
    w = nd
    v = np.hypot(u, w)
    u_dot = sdd * one_kn - sd * (dkap_ref * sd * n_arr + kap_ref * nd)
    # acceleration components in the rotating track frame
    at_f = u_dot - w * kap_ref * sd
    an_f = ndd + u * kap_ref * sd
    v_safe = np.maximum(v, 1e-6)
    ax = (u * at_f + w * an_f) / v_safe
    cross = u * an_f - w * at_f
    kappa_traj = cross / np.maximum(v_safe**3, 1e-12)
    ay = cross / v_safe
    psi_rel = np.arctan2(w, np.maximum(u, 1e-9))

    samples = []
    length = rl.ref.length
    for i, e in enumerate(ends):
        samples.append(TrajectorySample(
            t=t, s=np.mod(s_arr[i], length), n=n_arr[i], v=v[i], ax=ax[i],
            ay=ay[i], kappa=kappa_traj[i], psi_rel=psi_rel[i], end=e,
            track_length=length,
            s_dot=sd[i], s_ddot=sdd[i], n_dot=nd[i], n_ddot=ndd[i],
        ))
    return samples


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(sample: TrajectorySample, rl: Raceline, gripmap: GripMap | None,
             gggv: GGGVDiagram, shape: AccelConstraintShape,
             max_velocity: float = math.inf, margin: float = 0.05,
             cfg: PlannerConfig | None = None, mu: float = 1.0) -> Validity:
    """Four stages: turning-limit curvature, track bounds, strict race-control
    speed limit, margin-tolerant acceleration check against the scaled limits."""
    cfg = cfg or PlannerConfig()
    rv = _ref_view(rl, sample.s)
    val = Validity(evaluated=True)
    kap_eff = np.where(sample.v > 2.0, np.abs(sample.kappa), 0.0)
    val.curvature = bool(np.max(kap_eff) <= cfg.kappa_max + 1e-12)
    grace = min(int(round(cfg.bounds_grace / cfg.dt)), len(sample.t) - 1)
    val.bounds = bool(np.all(sample.n[grace:] <= (rv.w_left - cfg.half_width)[grace:] + 1e-9)
                      and np.all(sample.n[grace:] >= -((rv.w_right - cfg.half_width)[grace:]) - 1e-9))
    val.speed_limit = bool(np.all(sample.v <= max_velocity))
    ax_d, ax_b, ay_l = scaled_limits_arrays(gripmap, gggv, sample.s, sample.n,
                                            sample.v, rv.az, mu=mu,
                                            n_ref=rv.alpha)
    ratios = violation_ratios(shape, sample.ax, sample.ay, ax_d, ax_b, ay_l,
                              margin=margin)
    val.acceleration = bool(np.max(ratios) <= 1e-12)
    sample.validity = val
    return val


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------

def rect_penetration(c1, psi1, c2, psi2, length, width) -> float:
    """Separating-axis penetration depth of two equal oriented rectangles
    (0 when disjoint)."""
    hl, hw = length / 2.0, width / 2.0
    axes = []
    for psi in (psi1, psi2):
        ca, sa = math.cos(psi), math.sin(psi)
        axes.append((ca, sa))
        axes.append((-sa, ca))
    dx = c2[0] - c1[0]
    dy = c2[1] - c1[1]
    pen = math.inf
    for axx, axy in axes:
        e = 0.0
        for psi in (psi1, psi2):
            ca, sa = math.cos(psi), math.sin(psi)
            e += abs(hl * (axx * ca + axy * sa)) + abs(hw * (-axx * sa + axy * ca))
        overlap = e - abs(dx * axx + dy * axy)
        if overlap <= 0.0:
            return 0.0
        pen = min(pen, overlap)
    return float(pen)


def cost(sample: TrajectorySample, predictions: list[PredictedTrajectory],
         rl: Raceline, cfg: PlannerConfig,
         weights: CostWeights | None = None,
         margin0_ratios: np.ndarray | None = None,
         gripmap: GripMap | None = None, gggv: GGGVDiagram | None = None,
         shape: AccelConstraintShape | None = None, mu: float = 1.0) -> CostBreakdown:
    """Six weighted terms: raceline lateral deviation, speed tracking error,
    curvature deviation, acceleration violations, collision risk, proximity."""
    weights = weights or cfg.weights
    rv = _ref_view(rl, sample.s)
    term_lat = float(np.mean(np.abs(sample.n - rv.alpha)))
    term_v = float(np.mean(np.abs(sample.v - rv.v_rl)))
    term_kappa = float(np.mean(np.abs(sample.kappa - rv.kappa_rl)))

    if margin0_ratios is None:
        if gggv is None or shape is None:
            raise PlannerError("margin-zero ratios need limits inputs")
        ax_d, ax_b, ay_l = scaled_limits_arrays(gripmap, gggv, sample.s, sample.n,
                                                sample.v, rv.az, mu=mu,
                                                n_ref=rv.alpha)
        margin0_ratios = violation_ratios(shape, sample.ax, sample.ay,
                                          ax_d, ax_b, ay_l, margin=0.0)
    term_accel = float(np.sum(margin0_ratios))

    term_col = 0.0
    term_prox = 0.0
    length = rl.ref.length
    for pred in predictions:
        if len(pred.t) != len(sample.t) or abs(pred.t[-1] - sample.t[-1]) > 1e-9:
            raise PlannerError("prediction horizon does not match the sample")
        ds = np.mod(sample.s - pred.s + length / 2.0, length) - length / 2.0
        dn = sample.n - pred.n
        v_rel = np.maximum(sample.v - pred.v, 0.0)
        a_ax, b_ax = cfg.ellipse.axes(v_rel)
        d_e = np.hypot(ds / a_ax, dn / b_ax)
        term_prox += float(np.sum(np.maximum(0.0, 1.0 - d_e) ** 2))

        near = np.where(np.hypot(ds, dn) < (cfg.footprint_length + 2.0))[0]
        for k in near:
            psi_s = rv.psi[k] + sample.psi_rel[k]
            psi_o = float(rl.ref.sample_psi(pred.s[k]))
            c1 = _frenet_point(rl.ref, sample.s[k], sample.n[k])
            c2 = _frenet_point(rl.ref, pred.s[k], pred.n[k])
            term_col += rect_penetration(
                c1, psi_s, c2, psi_o,
                cfg.footprint_length + 2.0 * cfg.footprint_margin,
                cfg.footprint_width + 2.0 * cfg.footprint_margin)
    bd = CostBreakdown(lat_dev=term_lat, v_err=term_v, kappa_dev=term_kappa,
                       accel_viol=term_accel, collision=term_col,
                       proximity=term_prox)
    w = weights.as_tuple()
    bd.total = (w[0] * bd.lat_dev + w[1] * bd.v_err + w[2] * bd.kappa_dev
                + w[3] * bd.accel_viol + w[4] * bd.collision + w[5] * bd.proximity)
    sample.cost = bd
    return bd


def _frenet_point(ref: ReferenceLine, s: float, n: float) -> np.ndarray:
    base = ref.sample_xyz(np.array([s]))[0][:2]
    psi = float(ref.sample_psi(s))
    return base + n * np.array([-math.sin(psi), math.cos(psi)])


# ---------------------------------------------------------------------------
# selection and emergency
# ---------------------------------------------------------------------------

def select(samples: list[TrajectorySample]) -> TrajectorySample | None:
    """Lowest-cost fully valid sample; ties break toward the lower lateral
    index, then the lower speed target. None signals planner failure."""
    if not samples:
        raise PlannerError("no samples generated")
    valid = [sm for sm in samples if sm.validity.all_passed]
    if not valid:
        return None
    return min(valid, key=lambda sm: (sm.cost.total, sm.end.lat_index, sm.end.v_target))


def update_emergency(chosen: TrajectorySample, rl: Raceline,
                     gripmap: GripMap | None, gggv: GGGVDiagram,
                     shape: AccelConstraintShape, cfg: PlannerConfig,
                     margin: float = 0.05, mu: float = 1.0) -> TrajectorySample:
    """Brake-to-stop variant along the chosen path, recomputed every cycle.

    Braking uses the local brake limit scaled back by the margin and coupled
    to concurrent lateral usage through the shape's chamfer. If the chosen
    path ends before standstill the braking continues on a straight
    extension, so the end speed is always exactly zero.
    """
    length = rl.ref.length
    s_un = _unwrap_progress(chosen.s, length)
    n_mid = 0.5 * (chosen.n[:-1] + chosen.n[1:])
    dell = np.hypot(np.diff(s_un) * (1.0 - _ref_kappa_mid(rl, chosen) * n_mid),
                    np.diff(chosen.n))
    v0 = max(float(chosen.v[0]), 0.0)
    rho = shape.rho

    def brake_at(s_val, n_val, kap_val, vk):
        _, ax_b, ay_l = scaled_limits_arrays(gripmap, gggv, s_val, n_val, vk,
                                             float(rl.ref.sample_az(s_val)), mu=mu,
                                             n_ref=float(rl.sample_alpha(s_val)))
        ay_used = vk * vk * abs(kap_val)
        residual = min(1.0, rho - ay_used / float(ay_l)) if ay_l > 0 else 0.0
        return max(float(ax_b) * max(residual, 0.0) * (1.0 - margin), 0.3)

    s_p = [s_un[0]]
    n_p = [float(chosen.n[0])]
    k_p = [float(chosen.kappa[0])]
    v_p = [v0]
    t_p = [0.0]
    k = 0
    while v_p[-1] > 1e-9:
        if k < len(dell):
            d = float(dell[k])
            s_next = s_un[k + 1]
            n_next = float(chosen.n[k + 1])
            kap_next = float(chosen.kappa[k + 1])
        else:
            # straight extension past the path end
            d = max(v_p[-1] * cfg.dt, 0.2)
            s_next = s_p[-1] + d
            n_next = n_p[-1]
            kap_next = 0.0
        vk = v_p[-1]
        brake = brake_at(s_p[-1] % length, n_p[-1], k_p[-1], vk)
        v_next = math.sqrt(max(vk * vk - 2.0 * brake * d, 0.0))
        t_p.append(t_p[-1] + d / max(0.5 * (vk + v_next), 1e-3))
        s_p.append(s_next)
        n_p.append(n_next)
        k_p.append(kap_next)
        v_p.append(v_next)
        k += 1
        if t_p[-1] > 30.0:
            break

    t_stop = t_p[-1]
    n_grid = max(int(math.ceil(t_stop / cfg.dt)), 1) + 1
    t_grid = np.arange(n_grid) * cfg.dt
    t_grid[-1] = max(t_grid[-1], t_stop)
    s_g = np.interp(t_grid, t_p, s_p)
    n_g = np.interp(t_grid, t_p, n_p)
    v_g = np.interp(t_grid, t_p, v_p)
    v_g[-1] = 0.0
    kap_g = np.interp(t_grid, t_p, k_p)
    ax_g = np.gradient(v_g, t_grid) if n_grid > 1 else np.zeros(1)
    ay_g = v_g**2 * kap_g

    em = TrajectorySample(
        t=t_grid, s=np.mod(s_g, length), n=n_g, v=v_g, ax=ax_g, ay=ay_g,
        kappa=kap_g, psi_rel=np.zeros_like(t_grid),
        end=EndState(lat_index=chosen.end.lat_index, long_index=-1,
                     n_target=float(n_g[-1]), v_target=0.0, tag="emergency"),
        track_length=length, emergency=True,
        s_dot=v_g.copy(), s_ddot=ax_g.copy(),
        n_dot=np.zeros_like(t_grid), n_ddot=np.zeros_like(t_grid),
    )
    validate(em, rl, gripmap, gggv, shape, max_velocity=math.inf,
             margin=margin, cfg=cfg, mu=mu)
    em.validity.speed_limit = True   # no race-control limit on braking
    return em


def _ref_kappa_mid(rl: Raceline, sample: TrajectorySample) -> np.ndarray:
    kap = rl.ref.sample_kappa(sample.s)
    return 0.5 * (kap[:-1] + kap[1:])


# ---------------------------------------------------------------------------
# full cycle
# ---------------------------------------------------------------------------

@dataclass
class PlanResult:
    chosen: TrajectorySample | None
    emergency: TrajectorySample | None
    samples: list[TrajectorySample]
    failure: bool


def plan_cycle(start: StartState, rl: Raceline, predictions: list[PredictedTrajectory],
               gripmap: GripMap | None, gggv: GGGVDiagram,
               shape: AccelConstraintShape, cfg: PlannerConfig,
               max_velocity: float = math.inf, mu: float = 1.0,
               keep_samples: bool = False) -> PlanResult:
    """One planner tick: sample, generate, validate, cost, select, refresh the
    emergency trajectory. All stages run batched over the whole lattice."""
    ends = sample_end_states(start, rl, cfg, max_velocity=max_velocity)
    rail_offsets = list(cfg.rail_speed_offsets)
    gen_offsets = rail_offsets + ([-1e9] if cfg.include_stop_sample else [])
    fs, fsd, fsdd = follow_profiles(start, gen_offsets, rl, cfg, gripmap,
                                    gggv, shape, mu=mu, max_velocity=max_velocity)
    long_arrays = {i: (fs[i], fsd[i], fsdd[i]) for i in range(len(gen_offsets))}
    samples = generate_batch(start, ends, rl, cfg, long_arrays=long_arrays)
    for sm in samples:
        if sm.end.tag in ("rail", "stop"):
            sm.end = replace(sm.end, v_target=float(sm.v[-1]))
    m = len(samples)
    k = cfg.n_points
    length = rl.ref.length

    s_f = np.concatenate([sm.s for sm in samples])
    n_f = np.concatenate([sm.n for sm in samples])
    v_f = np.concatenate([sm.v for sm in samples])
    ax_f = np.concatenate([sm.ax for sm in samples])
    ay_f = np.concatenate([sm.ay for sm in samples])
    kap_f = np.concatenate([sm.kappa for sm in samples])

    rv = _ref_view(rl, s_f)
    ax_d, ax_b, ay_l = scaled_limits_arrays(gripmap, gggv, s_f, n_f, v_f,
                                            rv.az, mu=mu, n_ref=rv.alpha)
    ratios_m = violation_ratios(shape, ax_f, ay_f, ax_d, ax_b, ay_l,
                                margin=cfg.accel_margin).reshape(m, k)
    ratios_0 = violation_ratios(shape, ax_f, ay_f, ax_d, ax_b, ay_l,
                                margin=0.0).reshape(m, k)

    # the turning limit applies at driving speed; the curvature estimate
    # degenerates as v approaches zero (stopping candidates)
    kap_eff = np.where(v_f.reshape(m, k) > 2.0, np.abs(kap_f.reshape(m, k)), 0.0)
    ok_curv = np.max(kap_eff, axis=1) <= cfg.kappa_max + 1e-12
    # the first instants inherit the measured state; a slightly off-track
    # start must still produce recovery candidates
    grace = min(int(round(cfg.bounds_grace / cfg.dt)), k - 1)
    in_left = (n_f <= rv.w_left - cfg.half_width + 1e-9).reshape(m, k)[:, grace:].all(axis=1)
    in_right = (n_f >= -(rv.w_right - cfg.half_width) - 1e-9).reshape(m, k)[:, grace:].all(axis=1)
    ok_speed = (v_f.reshape(m, k) <= max_velocity).all(axis=1)
    ok_accel = np.max(ratios_m, axis=1) <= 1e-12

    term_lat = np.mean(np.abs(n_f - rv.alpha).reshape(m, k), axis=1)
    term_v = np.mean(np.abs(v_f - rv.v_rl).reshape(m, k), axis=1)
    term_kap = np.mean(np.abs(kap_f - rv.kappa_rl).reshape(m, k), axis=1)
    term_acc = np.sum(ratios_0, axis=1)

    term_col = np.zeros(m)
    term_prox = np.zeros(m)
    if predictions:
        s_mk = s_f.reshape(m, k)
        n_mk = n_f.reshape(m, k)
        v_mk = v_f.reshape(m, k)
        psi_mk = rv.psi.reshape(m, k)
        for pred in predictions:
            if len(pred.t) != k or abs(pred.t[-1] - samples[0].t[-1]) > 1e-9:
                raise PlannerError("prediction horizon does not match the samples")
            # leading car keeps the right of way: trailing opponents weigh in
            # at a fraction until they are genuinely alongside
            rel0 = (float(pred.s[0]) - start.s) % length
            behind = rel0 > length / 2.0
            prox_scale = cfg.leader_discount if behind else 1.0
            ds = np.mod(s_mk - pred.s[None, :] + length / 2.0, length) - length / 2.0
            dn = n_mk - pred.n[None, :]
            v_rel = np.maximum(v_mk - pred.v[None, :], 0.0)
            a_ax, b_ax = cfg.ellipse.axes(v_rel)
            d_e = np.hypot(ds / a_ax, dn / b_ax)
            term_prox += prox_scale * np.sum(np.maximum(0.0, 1.0 - d_e) ** 2, axis=1)

            psi_o = rl.ref.sample_psi(pred.s)
            cands = np.argwhere(np.hypot(ds, dn) < cfg.footprint_length + 2.0 * cfg.footprint_margin + 2.0)
            if len(cands):
                base_o = rl.ref.sample_xyz(pred.s)[:, :2]
                nrm_o = np.column_stack([-np.sin(psi_o), np.cos(psi_o)])
                pts_o = base_o + pred.n[:, None] * nrm_o
                for i, j in cands:
                    psi_s = psi_mk[i, j] + samples[i].psi_rel[j]
                    c1 = _frenet_point(rl.ref, s_mk[i, j], n_mk[i, j])
                    term_col[i] += rect_penetration(
                        c1, psi_s, pts_o[j], float(psi_o[j]),
                        cfg.footprint_length + 2.0 * cfg.footprint_margin,
                        cfg.footprint_width + 2.0 * cfg.footprint_margin)

    w = cfg.weights.as_tuple()
    total = (w[0] * term_lat + w[1] * term_v + w[2] * term_kap
             + w[3] * term_acc + w[4] * term_col + w[5] * term_prox)

    for i, sm in enumerate(samples):
        sm.validity = Validity(curvature=bool(ok_curv[i]),
                               bounds=bool(in_left[i] and in_right[i]),
                               speed_limit=bool(ok_speed[i]),
                               acceleration=bool(ok_accel[i]), evaluated=True)
        sm.cost = CostBreakdown(lat_dev=float(term_lat[i]), v_err=float(term_v[i]),
                                kappa_dev=float(term_kap[i]),
                                accel_viol=float(term_acc[i]),
                                collision=float(term_col[i]),
                                proximity=float(term_prox[i]),
                                total=float(total[i]))

    chosen = select(samples)
    emergency = None
    if chosen is not None:
        emergency = update_emergency(chosen, rl, gripmap, gggv, shape, cfg,
                                     margin=cfg.accel_margin, mu=mu)
    return PlanResult(chosen=chosen, emergency=emergency,
                      samples=samples if keep_samples else [],
                      failure=chosen is None)
