"""Acceleration limits: baseline g-g-g-v tables, the spatial grip multiplier
map, and the coupled longitudinal/lateral constraint shapes.

The baseline tables give machine-level limits as a function of speed and
vertical acceleration. The grip map scales them per track cell; the
constraint shape couples longitudinal and lateral usage (diamond through
chamfered octagon up to the box).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .track import FrenetPose, GRAVITY


@dataclass(frozen=True)
class Limits:
    """Positive acceleration magnitudes at one operating point (m/s^2)."""

    ax_drive: float
    ax_brake: float
    ay: float


class GGGVDiagram:
    """Baseline acceleration-limit tables over (v, a_z).

    Bilinear interpolation inside the grid; queries outside either axis clamp
    to the nearest node. All limits are strictly positive magnitudes.
    """

    def __init__(self, v_axis, az_axis, ax_drive, ax_brake, ay):
        self.v_axis = np.asarray(v_axis, dtype=float)
        self.az_axis = np.asarray(az_axis, dtype=float)
        self.ax_drive = np.asarray(ax_drive, dtype=float)
        self.ax_brake = np.asarray(ax_brake, dtype=float)
        self.ay = np.asarray(ay, dtype=float)
        shape = (len(self.v_axis), len(self.az_axis))
        for name, tab in (("ax_drive", self.ax_drive), ("ax_brake", self.ax_brake),
                          ("ay", self.ay)):
            if tab.shape != shape:
                raise ValueError(f"{name} table shape {tab.shape} != {shape}")
            if np.any(tab <= 0):
                raise ValueError(f"{name} limits must be strictly positive")
        if np.any(np.diff(self.v_axis) <= 0) or np.any(np.diff(self.az_axis) <= 0):
            raise ValueError("axes must be strictly ascending")

    @property
    def v_max(self) -> float:
        return float(self.v_axis[-1])

    def _bilinear(self, table, v, az):
        v = np.clip(np.asarray(v, dtype=float), self.v_axis[0], self.v_axis[-1])
        az = np.clip(np.asarray(az, dtype=float), self.az_axis[0], self.az_axis[-1])
        iv = np.clip(np.searchsorted(self.v_axis, v) - 1, 0, len(self.v_axis) - 2)
        ia = np.clip(np.searchsorted(self.az_axis, az) - 1, 0, len(self.az_axis) - 2)
        tv = (v - self.v_axis[iv]) / (self.v_axis[iv + 1] - self.v_axis[iv])
        ta = (az - self.az_axis[ia]) / (self.az_axis[ia + 1] - self.az_axis[ia])
        c00 = table[iv, ia]
        c10 = table[iv + 1, ia]
        c01 = table[iv, ia + 1]
        c11 = table[iv + 1, ia + 1]
        return (c00 * (1 - tv) * (1 - ta) + c10 * tv * (1 - ta)
                + c01 * (1 - tv) * ta + c11 * tv * ta)

    def limits(self, v, az=GRAVITY):
        """Baseline limits interpolated at (v, az); scalars or arrays."""
        return (self._bilinear(self.ax_drive, v, az),
                self._bilinear(self.ax_brake, v, az),
                self._bilinear(self.ay, v, az))

    # -- file format: header lines then row-major "v az ax_drive ax_brake ay"

    def save(self, path):
        with open(path, "w") as f:
            f.write("# gggv baseline acceleration limits\n")
            f.write("v_axis: " + " ".join(f"{v:g}" for v in self.v_axis) + "\n")
            f.write("az_axis: " + " ".join(f"{a:g}" for a in self.az_axis) + "\n")
            for i, v in enumerate(self.v_axis):
                for j, az in enumerate(self.az_axis):
                    f.write(f"{v:g} {az:g} {self.ax_drive[i, j]:.6f} "
                            f"{self.ax_brake[i, j]:.6f} {self.ay[i, j]:.6f}\n")

    @classmethod
    def load(cls, path):
        v_axis = az_axis = None
        rows = []
        with open(path) as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if line.startswith("v_axis:"):
                    v_axis = np.array([float(w) for w in line.split(":", 1)[1].split()])
                elif line.startswith("az_axis:"):
                    az_axis = np.array([float(w) for w in line.split(":", 1)[1].split()])
                else:
                    rows.append([float(w) for w in line.split()])
        if v_axis is None or az_axis is None:
            raise ValueError("gggv file missing axis headers")
        shape = (len(v_axis), len(az_axis))
        ax_d = np.empty(shape)
        ax_b = np.empty(shape)
        ay = np.empty(shape)
        if len(rows) != shape[0] * shape[1]:
            raise ValueError("gggv file row count does not match axes")
        for k, row in enumerate(rows):
            i, j = divmod(k, shape[1])
            ax_d[i, j], ax_b[i, j], ay[i, j] = row[2], row[3], row[4]
        return cls(v_axis, az_axis, ax_d, ax_b, ay)


def make_gggv(v_max: float = 65.0, n_v: int = 14,
              ax_drive_low: float = 10.5, ax_drive_high: float = 3.0,
              ax_brake_low: float = 14.0, ax_brake_high: float = 19.0,
              ay_low: float = 13.0, downforce_gain: float = 2.4e-4,
              az_values=(GRAVITY,)) -> GGGVDiagram:
    """Plausible baseline table: drive thrust fades with speed, brake and
    lateral grip grow with the v^2 downforce term (roughly doubling grip at
    top speed with the default gain)."""
    v_axis = np.linspace(0.0, v_max, n_v)
    az_axis = np.asarray(az_values, dtype=float)
    if len(az_axis) == 1:
        az_axis = np.array([az_axis[0] - 1e-3, az_axis[0] + 1e-3])
    frac = v_axis / v_max
    downforce = 1.0 + downforce_gain * v_axis**2
    ax_d = ax_drive_low + (ax_drive_high - ax_drive_low) * frac**1.5
    ax_b = np.minimum(ax_brake_low * downforce, ax_brake_high)
    ay = ay_low * downforce
    scale = az_axis / GRAVITY
    return GGGVDiagram(v_axis, az_axis, np.outer(ax_d, scale),
                       np.outer(ax_b, scale), np.outer(ay, scale))


# ---------------------------------------------------------------------------
# spatial grip map
# ---------------------------------------------------------------------------

class GripMap:
    """Grid of dimensionless grip multipliers over (s, n).

    Lookup is constant-time index arithmetic: s wraps by the track length, n
    clamps to the grid edge. Cells never written hold ``default_theta``. The
    decay factor applies multiplicatively beyond the core half-width.
    """

    def __init__(self, track_length: float, ds: float = 10.0, dn: float = 1.0,
                 n_extent: float = 8.0, default_theta: float = 1.0,
                 n_core: float = 1.5, decay: float = 0.9):
        if not (0.0 < decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")
        if default_theta < 0:
            raise ValueError("theta must be nonnegative")
        self.track_length = float(track_length)
        self.ds = float(ds)
        self.dn = float(dn)
        self.n_extent = float(n_extent)
        self.default_theta = float(default_theta)
        self.n_core = float(n_core)
        self.decay = float(decay)
        self.n_s = max(1, int(math.ceil(self.track_length / self.ds)))
        self.n_n = max(1, 2 * int(math.ceil(self.n_extent / self.dn)) + 1)
        self.theta = np.full((self.n_s, self.n_n), self.default_theta)
        self._frozen = False

    # n index 0 corresponds to the most negative (right) cell center
    @property
    def _n_origin(self) -> float:
        return -(self.n_n // 2) * self.dn

    def _indices(self, s, n):
        si = np.mod(np.floor_divide(np.mod(s, self.track_length), self.ds), self.n_s).astype(int)
        ni = np.clip(np.round((np.asarray(n, dtype=float) - self._n_origin) / self.dn),
                     0, self.n_n - 1).astype(int)
        return si, ni

    def set_cell(self, s: float, n: float, theta: float):
        if self._frozen:
            raise RuntimeError("grip map snapshot is read-only")
        if theta < 0:
            raise ValueError("theta must be nonnegative")
        si, ni = self._indices(s, n)
        self.theta[si, ni] = theta

    def scale_region(self, s_start: float, s_end: float, factor: float):
        """Multiply theta over an s range (whole n extent), wrap-aware."""
        if self._frozen:
            raise RuntimeError("grip map snapshot is read-only")
        s = np.mod(np.array([s_start, s_end]), self.track_length)
        i0 = int(s[0] // self.ds)
        i1 = int(s[1] // self.ds)
        if i1 >= i0:
            rows = np.arange(i0, min(i1 + 1, self.n_s))
        else:
            rows = np.concatenate([np.arange(i0, self.n_s), np.arange(0, i1 + 1)])
        self.theta[rows, :] *= factor

    def scale_all(self, factor: float):
        if self._frozen:
            raise RuntimeError("grip map snapshot is read-only")
        self.theta *= factor

    def copy(self) -> "GripMap":
        """Writable copy."""
        gm = GripMap(self.track_length, self.ds, self.dn, self.n_extent,
                     self.default_theta, self.n_core, self.decay)
        gm.theta = self.theta.copy()
        return gm

    def snapshot(self) -> "GripMap":
        """Read-only copy safe to hand to concurrent planner loops."""
        gm = self.copy()
        gm._frozen = True
        return gm

    def lookup(self, s, n, n_ref=0.0):
        """Effective theta at (s, n): cell value times off-core decay.

        ``n_ref`` is the local raceline offset; the decay keys on the lateral
        distance from the raceline (zero when the frame is raceline-centered).
        """
        si, ni = self._indices(s, n)
        theta = self.theta[si, ni]
        off_core = np.abs(np.asarray(n, dtype=float) - n_ref) > self.n_core
        return np.where(off_core, theta * self.decay, theta)

    def lookup_pose(self, fp: FrenetPose, n_ref: float = 0.0) -> float:
        return float(self.lookup(fp.s, fp.n, n_ref))

    # -- file format: header then sparse "i j theta" records

    def save(self, path):
        with open(path, "w") as f:
            f.write("# grip multiplier map\n")
            f.write(f"track_length: {self.track_length:g}\n")
            f.write(f"ds: {self.ds:g}\n")
            f.write(f"dn: {self.dn:g}\n")
            f.write(f"n_extent: {self.n_extent:g}\n")
            f.write(f"default: {self.default_theta:g}\n")
            f.write(f"n_core: {self.n_core:g}\n")
            f.write(f"decay: {self.decay:g}\n")
            nz = np.argwhere(self.theta != self.default_theta)
            for i, j in nz:
                f.write(f"{i} {j} {self.theta[i, j]:.6f}\n")

    @classmethod
    def load(cls, path):
        header = {}
        records = []
        with open(path) as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if ":" in line:
                    key, val = (w.strip() for w in line.split(":", 1))
                    header[key] = float(val)
                else:
                    i, j, th = line.split()
                    records.append((int(i), int(j), float(th)))
        gm = cls(track_length=header["track_length"], ds=header.get("ds", 10.0),
                 dn=header.get("dn", 1.0), n_extent=header.get("n_extent", 8.0),
                 default_theta=header.get("default", 1.0),
                 n_core=header.get("n_core", 1.5), decay=header.get("decay", 0.9))
        for i, j, th in records:
            gm.theta[i, j] = th
        return gm


def lookup_theta(gm: GripMap, fp: FrenetPose, n_ref: float = 0.0) -> float:
    return gm.lookup_pose(fp, n_ref)


def scaled_limits(gm: GripMap | None, gggv: GGGVDiagram, fp: FrenetPose,
                  v: float, a_z: float = GRAVITY, mu: float = 1.0,
                  n_ref: float = 0.0) -> Limits:
    """Baseline limits at (v, a_z) scaled by the local grip multiplier.

    ``mu`` is an extra multiplicative factor (tire temperature effect); the
    believed and ground-truth sides of the simulator pass different values.
    """
    ax_d, ax_b, ay = gggv.limits(v, a_z)
    theta = gm.lookup_pose(fp, n_ref) if gm is not None else 1.0
    k = theta * mu
    return Limits(ax_drive=float(ax_d) * k, ax_brake=float(ax_b) * k, ay=float(ay) * k)


def scaled_limits_arrays(gm: GripMap | None, gggv: GGGVDiagram, s, n, v, a_z,
                         mu: float = 1.0, n_ref=0.0):
    """Vectorized variant of scaled_limits for whole trajectories."""
    ax_d, ax_b, ay = gggv.limits(v, a_z)
    theta = gm.lookup(s, n, n_ref) if gm is not None else 1.0
    k = theta * mu
    return ax_d * k, ax_b * k, ay * k


# ---------------------------------------------------------------------------
# constraint shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AccelConstraintShape:
    """Coupled (ax, ay) feasible set in limit-scaled coordinates.

    With u = ax/ax_lim (sign-matched drive or brake limit) and w = ay/ay_lim:
    |u| <= 1, |w| <= 1, |u| + |w| <= rho. rho = 1 is the diamond, rho = 2 the
    full box; the chamfered octagon lies between.
    """

    rho: float = 1.8

    def __post_init__(self):
        if not (1.0 <= self.rho <= 2.0):
            raise ValueError("rho must lie in [1, 2]")

    @property
    def kind(self) -> str:
        return "diamond" if self.rho == 1.0 else "octagon"

    @staticmethod
    def diamond() -> "AccelConstraintShape":
        return AccelConstraintShape(rho=1.0)

    @staticmethod
    def octagon(rho: float = 1.8) -> "AccelConstraintShape":
        return AccelConstraintShape(rho=rho)

    def with_rho(self, rho: float) -> "AccelConstraintShape":
        return replace(self, rho=rho)


@dataclass(frozen=True)
class AccelCheck:
    feasible: bool
    violation_ratio: float


def _scaled(ax, ay, limits: Limits):
    ax_lim = np.where(np.asarray(ax) >= 0, limits.ax_drive, limits.ax_brake)
    return np.abs(ax) / ax_lim, np.abs(ay) / limits.ay


def check_accel(shape: AccelConstraintShape, ax, ay, limits: Limits,
                margin: float = 0.0) -> AccelCheck:
    """Feasibility of one (ax, ay) against the shape inflated by (1+margin).

    violation_ratio is the worst relative overshoot over the active shape
    inequalities, clipped to 0 when feasible.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    u, w = _scaled(float(ax), float(ay), limits)
    infl = 1.0 + margin
    ratios = [
        (u - infl) / infl,
        (w - infl) / infl,
        ((u + w) - shape.rho * infl) / (shape.rho * infl),
    ]
    worst = max(ratios)
    return AccelCheck(feasible=bool(worst <= 1e-12),
                      violation_ratio=float(max(0.0, worst)))


def violation_ratios(shape: AccelConstraintShape, ax, ay, ax_drive, ax_brake,
                     ay_lim, margin: float = 0.0):
    """Vectorized violation ratio for arrays; 0 where feasible."""
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    ax_lim = np.where(ax >= 0, ax_drive, ax_brake)
    u = np.abs(ax) / ax_lim
    w = np.abs(ay) / ay_lim
    infl = 1.0 + margin
    r = np.maximum((u - infl) / infl, (w - infl) / infl)
    r = np.maximum(r, ((u + w) - shape.rho * infl) / (shape.rho * infl))
    return np.maximum(r, 0.0)


def project_to_shape(shape: AccelConstraintShape, ax_desired: float,
                     ay_desired: float, limits: Limits) -> tuple[float, float]:
    """Project a desired (ax, ay) onto the feasible set.

    Euclidean-nearest point in scaled coordinates, except when only the
    chamfer inequality is violated: then lateral demand is preserved and the
    longitudinal component shrinks onto the chamfer (turn authority first).
    """
    sax = 1.0 if ax_desired >= 0 else -1.0
    say = 1.0 if ay_desired >= 0 else -1.0
    ax_lim = limits.ax_drive if ax_desired >= 0 else limits.ax_brake
    u = abs(ax_desired) / ax_lim
    w = abs(ay_desired) / limits.ay
    rho = shape.rho

    if u <= 1.0 and w <= 1.0 and u + w <= rho:
        return ax_desired, ay_desired

    if u + w > rho and u <= 1.0 and w <= 1.0:
        # chamfer-only violation: hold ay, give up ax
        u = rho - w
    else:
        u, w = _project_quadrant(u, w, rho)

    return sax * u * ax_lim, say * w * limits.ay


def _project_quadrant(u: float, w: float, rho: float) -> tuple[float, float]:
    """Euclidean projection onto {0<=u<=1, 0<=w<=1, u+w<=rho}."""
    # clip into the box first; then handle the chamfer cut if active
    cu, cw = min(u, 1.0), min(w, 1.0)
    if cu + cw <= rho:
        return cu, cw
    # project onto the chamfer line u + w = rho, then clamp to its segment
    t = (u - w + rho) / 2.0
    t = min(max(t, rho - 1.0), 1.0)
    return t, rho - t
