"""Track geometry: bound smoothing, curvilinear reference frame, Frenet conversions.

The reference frame is a closed, arc-length parameterized line with heading,
signed curvature (left turns positive) and lateral distances to both track
bounds. Every other module converts between cartesian and (s, n) coordinates
through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

GRAVITY = 9.81


class TrackGeometryError(ValueError):
    """Raised for malformed bound or reference line geometry."""


class AmbiguousProjectionError(TrackGeometryError):
    """Raised when a point lies too close to the local curvature center."""


@dataclass
class RawBounds:
    """Independent cartesian point sets for the left and right track bounds.

    Points are (N, 3) float arrays in meters. ``closed`` marks a full lap:
    the last point is expected to lie near the first (it is not duplicated).
    """

    left: np.ndarray
    right: np.ndarray
    closed: bool = True

    def __post_init__(self):
        self.left = _as_points3(self.left)
        self.right = _as_points3(self.right)
        self.validate()

    def validate(self):
        for name, pts in (("left", self.left), ("right", self.right)):
            if len(pts) < 4:
                raise TrackGeometryError(f"too few points in {name} bound ({len(pts)} < 4)")
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            if np.any(seg <= 0.0):
                raise TrackGeometryError(f"{name} bound has duplicate consecutive points")
            if self.closed:
                gap = float(np.linalg.norm(pts[0] - pts[-1]))
                if gap > 5.0:
                    raise TrackGeometryError(
                        f"{name} bound marked closed but endpoint gap is {gap:.2f} m (> 5 m)"
                    )


@dataclass(frozen=True)
class FrenetPose:
    """Curvilinear pose: arc length s (wrapped into [0, L)) and signed lateral
    offset n (positive toward the left bound). ``dpsi`` is the optional heading
    misalignment against the local reference tangent."""

    s: float
    n: float
    dpsi: float = 0.0


@dataclass
class ReferenceLine:
    """Closed arc-length parameterized track frame.

    All arrays share one length N and describe samples at ``s`` (strictly
    increasing, s[0] = 0). The line closes onto itself at total length ``L``.
    ``psi_unwrapped`` is continuous along the lap (no 2*pi jumps) which makes
    interpolation of heading and curvature well behaved across the seam.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    psi: np.ndarray          # wrapped to (-pi, pi]
    psi_unwrapped: np.ndarray
    kappa: np.ndarray        # 1/m, left turns positive
    w_left: np.ndarray       # m, > 0
    w_right: np.ndarray      # m, > 0
    length: float
    v_cap: np.ndarray | None = None   # m/s, optional per-s speed ceiling
    a_z: np.ndarray | None = None     # m/s^2, vertical acceleration (constant g by default)
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)
    _aug: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.a_z is None:
            self.a_z = np.full(len(self.s), GRAVITY)
        self._check_invariants()

    # -- construction helpers -------------------------------------------------

    def _check_invariants(self):
        s = self.s
        if s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise TrackGeometryError("arc length samples must start at 0 and increase strictly")
        if self.length <= s[-1]:
            raise TrackGeometryError("total length must exceed the last sample")
        if np.any(self.w_left <= 0) or np.any(self.w_right <= 0):
            raise TrackGeometryError("track widths must be positive everywhere")
        # periodic closure: s=0 and s=L describe the same state
        pos0 = np.array([self.x[0], self.y[0], self.z[0]])
        posL = self.sample_xyz(np.array([self.length]))[0]
        if np.linalg.norm(pos0 - posL) > 1e-3:
            raise TrackGeometryError("reference line does not close on itself (position)")

    def _augmented(self) -> dict:
        """Arrays extended by the wrap-around sample at s = L for interpolation."""
        if self._aug is None:
            # heading advances by the total turn of the closed loop (+-2*pi)
            turn = 2.0 * math.pi * round((self.psi_unwrapped[-1] - self.psi_unwrapped[0]) / (2.0 * math.pi))
            aug = {
                "s": np.append(self.s, self.length),
                "x": np.append(self.x, self.x[0]),
                "y": np.append(self.y, self.y[0]),
                "z": np.append(self.z, self.z[0]),
                "psi_u": np.append(self.psi_unwrapped, self.psi_unwrapped[0] + turn),
                "kappa": np.append(self.kappa, self.kappa[0]),
                "w_left": np.append(self.w_left, self.w_left[0]),
                "w_right": np.append(self.w_right, self.w_right[0]),
                "a_z": np.append(self.a_z, self.a_z[0]),
            }
            if self.v_cap is not None:
                aug["v_cap"] = np.append(self.v_cap, self.v_cap[0])
            object.__setattr__(self, "_aug", aug)
        return self._aug

    def wrap(self, s):
        return np.mod(s, self.length)

    def sample_xyz(self, s) -> np.ndarray:
        a = self._augmented()
        sw = self.wrap(np.asarray(s, dtype=float))
        return np.column_stack([
            np.interp(sw, a["s"], a["x"]),
            np.interp(sw, a["s"], a["y"]),
            np.interp(sw, a["s"], a["z"]),
        ])

    def sample_psi(self, s) -> np.ndarray:
        a = self._augmented()
        sw = self.wrap(np.asarray(s, dtype=float))
        psi = np.interp(sw, a["s"], a["psi_u"])
        return _wrap_angle(psi)

    def sample_kappa(self, s) -> np.ndarray:
        a = self._augmented()
        return np.interp(self.wrap(np.asarray(s, dtype=float)), a["s"], a["kappa"])

    def sample_widths(self, s) -> tuple[np.ndarray, np.ndarray]:
        a = self._augmented()
        sw = self.wrap(np.asarray(s, dtype=float))
        return np.interp(sw, a["s"], a["w_left"]), np.interp(sw, a["s"], a["w_right"])

    def sample_az(self, s) -> np.ndarray:
        a = self._augmented()
        return np.interp(self.wrap(np.asarray(s, dtype=float)), a["s"], a["a_z"])

    def sample_v_cap(self, s) -> np.ndarray:
        if self.v_cap is None:
            return np.full(np.shape(np.asarray(s)), np.inf)
        a = self._augmented()
        return np.interp(self.wrap(np.asarray(s, dtype=float)), a["s"], a["v_cap"])

    def normals(self, s) -> np.ndarray:
        """Left unit normal at s, (M, 2)."""
        psi = self.sample_psi(s)
        return np.column_stack([-np.sin(psi), np.cos(psi)])

    def _kdtree(self) -> cKDTree:
        if self._tree is None:
            object.__setattr__(self, "_tree", cKDTree(np.column_stack([self.x, self.y])))
        return self._tree


def _as_points3(pts) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(pts, dtype=float))
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.zeros(len(arr))])
    if arr.shape[1] != 3:
        raise TrackGeometryError("points must be (N, 2) or (N, 3)")
    return arr


def _wrap_angle(a):
    return np.mod(np.asarray(a) + math.pi, 2.0 * math.pi) - math.pi


def _polyline_length(pts: np.ndarray, closed: bool) -> float:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(np.sum(seg))
    if closed:
        total += float(np.linalg.norm(pts[0] - pts[-1]))
    return total


# ---------------------------------------------------------------------------
# bound smoothing
# ---------------------------------------------------------------------------

def resample_polyline(pts: np.ndarray, spacing: float, closed: bool,
                      window: int = 7, degree: int = 3) -> np.ndarray:
    """Resample a polyline at uniform arc length using sliding least-squares
    polynomial fits (degree 3 over 7 points by default).

    Returns (M, 3) points; for closed polylines the duplicate end point is
    omitted and M = round(length / spacing).
    """
    pts = _as_points3(pts)
    if closed and np.linalg.norm(pts[0] - pts[-1]) > 1e-9:
        pts = np.vstack([pts, pts[0]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(seg)])
    total = u[-1]
    if total <= 0:
        raise TrackGeometryError("degenerate polyline")
    if closed:
        m = max(4, int(round(total / spacing)))
        targets = np.arange(m) * (total / m)
    else:
        m = max(4, int(math.floor(total / spacing)) + 1)
        targets = np.linspace(0.0, total, m)

    half = window // 2
    n_src = len(pts)
    out = np.empty((len(targets), 3))
    idx_near = np.searchsorted(u, targets)
    for k, (t, i0) in enumerate(zip(targets, idx_near)):
        if closed:
            idx = (np.arange(i0 - half, i0 + half + 1)) % (n_src - 1)
            uu = u[idx].copy()
            # unwrap the window's parameter across the seam
            jump = np.where(np.diff(uu) < 0)[0]
            if len(jump):
                uu[jump[0] + 1:] += total
                if t < uu[0] - total / 2:
                    uu -= total
        else:
            lo = min(max(0, i0 - half), n_src - window)
            idx = np.arange(lo, lo + window)
            uu = u[idx]
        du = uu - t
        # local LSQ polynomial per coordinate, evaluated at the target
        V = np.vander(du, degree + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, pts[idx], rcond=None)
        out[k] = coef[0]
    return out


def _lowpass_fft(signal: np.ndarray, sample_spacing: float, cutoff_wavelength: float,
                 closed: bool) -> np.ndarray:
    """Remove spatial-frequency components with wavelength below the cutoff."""
    if closed:
        n = len(signal)
        spec = np.fft.rfft(signal)
        wavelengths = np.full(len(spec), np.inf)
        wavelengths[1:] = (n * sample_spacing) / np.arange(1, len(spec))
        spec[wavelengths < cutoff_wavelength] = 0.0
        return np.fft.irfft(spec, n)
    # open signal: even (mirror) extension avoids wrap-around discontinuities
    ext = np.concatenate([signal, signal[::-1]])
    n = len(ext)
    spec = np.fft.rfft(ext)
    wavelengths = np.full(len(spec), np.inf)
    wavelengths[1:] = (n * sample_spacing) / np.arange(1, len(spec))
    spec[wavelengths < cutoff_wavelength] = 0.0
    return np.fft.irfft(spec, n)[: len(signal)]


def _polyline_self_intersects(pts: np.ndarray, closed: bool) -> bool:
    """Segment pair intersection test; adjacent segments are skipped."""
    p = pts[:, :2]
    segs = np.stack([p, np.roll(p, -1, axis=0)], axis=1) if closed else \
        np.stack([p[:-1], p[1:]], axis=1)
    n = len(segs)
    for i in range(n):
        a0, a1 = segs[i]
        j0 = i + 2
        j1 = n - 1 if (closed and i == 0) else n
        if j0 >= j1:
            continue
        b0 = segs[j0:j1, 0]
        b1 = segs[j0:j1, 1]
        if len(b0) == 0:
            continue
        d1 = a1 - a0
        d2 = b1 - b0
        denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        delta = b0 - a0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (delta[:, 0] * d2[:, 1] - delta[:, 1] * d2[:, 0]) / denom
            uu = (delta[:, 0] * d1[1] - delta[:, 1] * d1[0]) / denom
        hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t < 1 - 1e-9) & (uu > 1e-9) & (uu < 1 - 1e-9)
        if np.any(hit):
            return True
    return False


def smooth_bounds(raw: RawBounds, cutoff_wavelength: float = 40.0,
                  spacing: float = 1.0) -> RawBounds:
    """Smooth raw bound point sets.

    Pipeline: tangential polynomial resampling at uniform arc length, discrete
    spatial-frequency decomposition per coordinate, removal of components with
    wavelength below ``cutoff_wavelength``, reconstruction, and a final
    resampling of each bound at its intersections with planes orthogonal to
    the centerline. Output point count per bound is ceil(bound length /
    spacing).
    """
    if cutoff_wavelength <= 2.0 * spacing:
        raise TrackGeometryError("cutoff_wavelength must exceed 2 * spacing")
    raw.validate()

    smoothed = {}
    for name, pts in (("left", raw.left), ("right", raw.right)):
        res = resample_polyline(pts, spacing, raw.closed)
        filt = np.column_stack([
            _lowpass_fft(res[:, k], spacing, cutoff_wavelength, raw.closed)
            for k in range(3)
        ])
        if _polyline_self_intersects(filt, raw.closed):
            raise TrackGeometryError(f"{name} bound self-intersects after smoothing")
        smoothed[name] = filt

    # centerline from arc-fraction matched bound pairs
    center = _midline(smoothed["left"], smoothed["right"], raw.closed)

    out = {}
    for name in ("left", "right"):
        pts = smoothed[name]
        n_out = int(math.ceil(_polyline_length(pts, raw.closed) / spacing))
        out[name] = _sample_at_normals(center, pts, n_out, raw.closed)
    return RawBounds(left=out["left"], right=out["right"], closed=raw.closed)


def _arc_fractions(pts: np.ndarray, closed: bool) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(seg)])
    total = u[-1] + (np.linalg.norm(pts[0] - pts[-1]) if closed else 0.0)
    return u / total


def _interp_at_fractions(pts: np.ndarray, fracs: np.ndarray, closed: bool) -> np.ndarray:
    src_f = _arc_fractions(pts, closed)
    if closed:
        src_f = np.append(src_f, 1.0)
        pts = np.vstack([pts, pts[0]])
    return np.column_stack([np.interp(fracs, src_f, pts[:, k]) for k in range(3)])


def _midline(left: np.ndarray, right: np.ndarray, closed: bool) -> np.ndarray:
    m = max(len(left), len(right))
    fracs = np.arange(m) / m if closed else np.linspace(0.0, 1.0, m)
    return 0.5 * (_interp_at_fractions(left, fracs, closed)
                  + _interp_at_fractions(right, fracs, closed))


def _sample_at_normals(center: np.ndarray, bound: np.ndarray, n_out: int,
                       closed: bool) -> np.ndarray:
    """Intersect centerline normals with a bound polyline at n_out stations."""
    fracs = np.arange(n_out) / n_out if closed else np.linspace(0.0, 1.0, n_out)
    stations = _interp_at_fractions(center, fracs, closed)
    # tangents via central differences on the station set
    nxt = np.roll(stations, -1, axis=0)
    prv = np.roll(stations, 1, axis=0)
    if not closed:
        nxt[-1] = stations[-1] + (stations[-1] - stations[-2])
        prv[0] = stations[0] - (stations[1] - stations[0])
    tang = nxt[:, :2] - prv[:, :2]
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    normals = np.column_stack([-tang[:, 1], tang[:, 0]])

    b0 = bound[:, :2]
    b1 = np.roll(bound, -1, axis=0)[:, :2] if closed else bound[1:, :2]
    a0 = b0 if closed else b0[:-1]
    bz0 = bound[:, 2] if closed else bound[:-1, 2]
    bz1 = np.roll(bound[:, 2], -1) if closed else bound[1:, 2]
    d2 = b1 - a0

    out = np.empty((n_out, 3))
    for i in range(n_out):
        p = stations[i, :2]
        d1 = normals[i]
        denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        delta = a0 - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (delta[:, 0] * d2[:, 1] - delta[:, 1] * d2[:, 0]) / denom
            uu = (delta[:, 0] * d1[1] - delta[:, 1] * d1[0]) / denom
        ok = (np.abs(denom) > 1e-12) & (uu >= -1e-9) & (uu <= 1 + 1e-9)
        if not np.any(ok):
            raise TrackGeometryError("centerline normal does not intersect bound")
        ts = np.where(ok, np.abs(t), np.inf)
        j = int(np.argmin(ts))
        out[i, :2] = p + t[j] * d1
        out[i, 2] = bz0[j] + uu[j] * (bz1[j] - bz0[j])
    return out


# ---------------------------------------------------------------------------
# reference line construction
# ---------------------------------------------------------------------------

def prepare_track(bounds: RawBounds, cutoff_wavelength: float = 40.0,
                  spacing: float = 1.0) -> tuple[ReferenceLine, RawBounds]:
    """Full ingestion pipeline: smooth the raw bounds, derive the centerline,
    and build the reference frame. Returns (reference line, smoothed bounds)."""
    smoothed = smooth_bounds(bounds, cutoff_wavelength, spacing)
    center = _midline(smoothed.left, smoothed.right, smoothed.closed)
    return build_reference_line(center, smoothed, spacing=spacing), smoothed


def build_reference_line(line_points: np.ndarray, bounds: RawBounds,
                         spacing: float = 1.0) -> ReferenceLine:
    """Build a closed reference frame around a centerline or raceline.

    Heading and curvature come from central differences on the closed loop;
    widths are the normal-ray distances to each bound.
    """
    pts = _as_points3(line_points)
    if not bounds.closed:
        raise TrackGeometryError("reference line requires closed bounds")
    if np.linalg.norm(pts[0] - pts[-1]) > 5.0:
        raise TrackGeometryError("line points do not form a closed loop")

    res = resample_polyline(pts, spacing, closed=True)
    n = len(res)
    length = _polyline_length(res, closed=True)
    h = length / n
    s = np.arange(n) * h

    dxy = (np.roll(res, -1, axis=0) - np.roll(res, 1, axis=0)) / (2.0 * h)
    psi = np.arctan2(dxy[:, 1], dxy[:, 0])
    psi_u = np.unwrap(psi)
    dpsi = np.roll(psi_u, -1) - np.roll(psi_u, 1)
    # the roll across the seam misses the lap's total turn of +-2*pi
    dpsi[0] = _wrap_angle(psi_u[1] - psi_u[-1])
    dpsi[-1] = _wrap_angle(psi_u[0] - psi_u[-2])
    kappa = dpsi / (2.0 * h)

    normals = np.column_stack([-np.sin(psi), np.cos(psi)])
    w_left = _ray_distances(res[:, :2], normals, bounds.left)
    w_right = _ray_distances(res[:, :2], -normals, bounds.right)

    return ReferenceLine(
        s=s, x=res[:, 0], y=res[:, 1], z=res[:, 2],
        psi=_wrap_angle(psi_u), psi_unwrapped=psi_u, kappa=kappa,
        w_left=w_left, w_right=w_right, length=length,
    )


def _ray_distances(origins: np.ndarray, dirs: np.ndarray, bound: np.ndarray) -> np.ndarray:
    b = bound[:, :2]
    a0 = b
    d2 = np.roll(b, -1, axis=0) - b
    out = np.empty(len(origins))
    for i, (p, d1) in enumerate(zip(origins, dirs)):
        denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        delta = a0 - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (delta[:, 0] * d2[:, 1] - delta[:, 1] * d2[:, 0]) / denom
            uu = (delta[:, 0] * d1[1] - delta[:, 1] * d1[0]) / denom
        ok = (np.abs(denom) > 1e-12) & (uu >= -1e-9) & (uu <= 1 + 1e-9) & (t > 0)
        if not np.any(ok):
            raise TrackGeometryError("normal ray fails to intersect a bound")
        out[i] = np.min(t[ok])
    return out


# ---------------------------------------------------------------------------
# Frenet conversions
# ---------------------------------------------------------------------------

def cart_to_frenet(point, ref: ReferenceLine, heading: float | None = None) -> FrenetPose:
    """Project a cartesian point onto the reference line.

    The nearest-s candidate wins; exact distance ties resolve toward smaller
    s. Raises AmbiguousProjectionError near the local curvature center.
    """
    p = np.asarray(point, dtype=float)[:2]
    tree = ref._kdtree()
    k = min(8, len(ref.s))
    _, idxs = tree.query(p, k=k)
    idxs = np.atleast_1d(idxs)

    pts = np.column_stack([ref.x, ref.y])
    n_nodes = len(ref.s)
    cands = []
    seen = set()
    for i in idxs:
        for j in (int(i) - 1, int(i)):
            j %= n_nodes
            if j in seen:
                continue
            seen.add(j)
            a = pts[j]
            b = pts[(j + 1) % n_nodes]
            seg = b - a
            seg_len2 = float(seg @ seg)
            if seg_len2 <= 0:
                continue
            t = float(np.clip((p - a) @ seg / seg_len2, 0.0, 1.0))
            foot = a + t * seg
            d = float(np.linalg.norm(p - foot))
            seg_len = math.sqrt(seg_len2)
            s_here = ref.s[j] + t * seg_len
            nrm = np.array([-seg[1], seg[0]]) / seg_len
            n_val = float((p - foot) @ nrm)
            cands.append((round(d, 9), s_here, n_val))
    cands.sort(key=lambda c: (c[0], c[1]))
    _, s_best, n_best = cands[0]
    s_best = float(ref.wrap(s_best))

    # refine so the residual is orthogonal to the interpolated tangent; this
    # makes frenet_to_cart the exact inverse (both use the heading-based frame)
    for _ in range(8):
        c = ref.sample_xyz(np.array([s_best]))[0][:2]
        psi = float(ref.sample_psi(s_best))
        tang = np.array([math.cos(psi), math.sin(psi)])
        nrm = np.array([-math.sin(psi), math.cos(psi)])
        delta = p - c
        g = float(delta @ tang)
        n_best = float(delta @ nrm)
        denom = 1.0 - float(ref.sample_kappa(s_best)) * n_best
        if abs(denom) < 1e-6:
            break
        step = g / denom
        s_best = float(ref.wrap(s_best + step))
        if abs(step) < 1e-10:
            break

    kappa_loc = float(ref.sample_kappa(s_best))
    if abs(kappa_loc) > 1e-9 and n_best * kappa_loc > 0.95:
        raise AmbiguousProjectionError(
            f"point at n={n_best:.2f} m lies near curvature center (1/kappa={1/kappa_loc:.2f} m)"
        )
    dpsi = 0.0
    if heading is not None:
        dpsi = float(_wrap_angle(heading - ref.sample_psi(s_best)))
    return FrenetPose(s=s_best, n=n_best, dpsi=dpsi)


def frenet_to_cart(fp: FrenetPose, ref: ReferenceLine) -> np.ndarray:
    """Map a Frenet pose back to a 3D cartesian point."""
    s = ref.wrap(fp.s)
    base = ref.sample_xyz(np.array([s]))[0]
    psi = float(ref.sample_psi(s))
    return base + fp.n * np.array([-math.sin(psi), math.cos(psi), 0.0])


# ---------------------------------------------------------------------------
# track file I/O
# ---------------------------------------------------------------------------

def load_track_file(path) -> tuple[RawBounds, np.ndarray | None]:
    """Read a track file.

    Format: named sections introduced by ``[left]``, ``[right]`` or
    ``[centerline]``, each followed by one ``x y z`` (or ``x y``) line per
    point. ``#`` starts a comment. A ``closed: true|false`` line may appear
    before the first section (default true).
    """
    sections: dict[str, list] = {"left": [], "right": [], "centerline": []}
    current = None
    closed = True
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                if current not in sections:
                    raise TrackGeometryError(f"unknown section '{current}' at line {lineno}")
                continue
            if ":" in line and current is None:
                key, val = (w.strip() for w in line.split(":", 1))
                if key.lower() == "closed":
                    closed = val.lower() in ("1", "true", "yes")
                continue
            if current is None:
                raise TrackGeometryError(f"point outside any section at line {lineno}")
            vals = [float(w) for w in line.replace(",", " ").split()]
            if len(vals) not in (2, 3):
                raise TrackGeometryError(f"expected 2 or 3 coordinates at line {lineno}")
            sections[current].append(vals)

    if not sections["left"] or not sections["right"]:
        raise TrackGeometryError("track file must contain [left] and [right] sections")
    bounds = RawBounds(left=np.array(sections["left"]),
                       right=np.array(sections["right"]), closed=closed)
    center = np.array(sections["centerline"]) if sections["centerline"] else None
    if center is not None:
        center = _as_points3(center)
    return bounds, center


def save_track_file(path, bounds: RawBounds, centerline: np.ndarray | None = None):
    with open(path, "w") as f:
        f.write("# track bounds, coordinates in meters\n")
        f.write(f"closed: {str(bounds.closed).lower()}\n")
        for name, pts in (("left", bounds.left), ("right", bounds.right)):
            f.write(f"[{name}]\n")
            for p in pts:
                f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
        if centerline is not None:
            f.write("[centerline]\n")
            for p in _as_points3(centerline):
                f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
