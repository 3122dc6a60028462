"""Synthetic worlds, ground-truth trajectories and scan synthesis.

A world is a bag of rectangular plane patches and straight edge segments.
Scans are produced by casting a regular angular grid of rays from the true
sensor pose and keeping the nearest patch hit per ray (which models
occlusion for free), plus edge samples that survive a line-of-sight check.
Plane and edge points are labeled by construction, standing in for a
feature-extraction frontend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import InvalidArgumentError
from .geometry import BodyPose
from .motion import CenterState
from .registration import ScanFrame


@dataclass
class PlanePatch:
    origin: np.ndarray          # patch center
    normal: np.ndarray          # unit
    u: np.ndarray               # in-plane axis, unit
    v: np.ndarray               # in-plane axis, unit
    half_u: float
    half_v: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.normal = np.asarray(self.normal, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-9:
            raise InvalidArgumentError("patch normal must be unit length")
        if self.half_u <= 0 or self.half_v <= 0 or not np.isfinite(self.half_u + self.half_v):
            raise InvalidArgumentError("patch extents must be positive and finite")


@dataclass
class EdgeSegment:
    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)


class World:
    """Plane patches + edge segments, packed for vectorized ray casting."""

    def __init__(self, planes: list[PlanePatch], edges: list[EdgeSegment]):
        self.planes = list(planes)
        self.edges = list(edges)
        if self.planes:
            self.p_origin = np.array([p.origin for p in self.planes])
            self.p_normal = np.array([p.normal for p in self.planes])
            self.p_u = np.array([p.u for p in self.planes])
            self.p_v = np.array([p.v for p in self.planes])
            self.p_half_u = np.array([p.half_u for p in self.planes])
            self.p_half_v = np.array([p.half_v for p in self.planes])
            self.p_radius = np.sqrt(self.p_half_u**2 + self.p_half_v**2)
        else:
            self.p_origin = np.zeros((0, 3))
            self.p_normal = np.zeros((0, 3))
            self.p_u = np.zeros((0, 3))
            self.p_v = np.zeros((0, 3))
            self.p_half_u = np.zeros(0)
            self.p_half_v = np.zeros(0)
            self.p_radius = np.zeros(0)

    def edge_samples(self, step: float = 0.12):
        """Cached (points, unit directions) sampled along every edge."""
        if getattr(self, "_edge_cache", None) is None or self._edge_cache[0] != step:
            pts = []
            dirs = []
            for e in self.edges:
                seg_len = float(np.linalg.norm(e.p1 - e.p0))
                n = max(2, int(seg_len / step))
                s = np.linspace(0.0, 1.0, n).reshape(-1, 1)
                pts.append(e.p0 + s * (e.p1 - e.p0))
                dirs.append(np.tile((e.p1 - e.p0) / seg_len, (n, 1)))
            if pts:
                self._edge_cache = (step, np.vstack(pts), np.vstack(dirs))
            else:
                self._edge_cache = (step, np.zeros((0, 3)), np.zeros((0, 3)))
        return self._edge_cache[1], self._edge_cache[2]

    def all_points(self, step: float = 0.5) -> np.ndarray:
        """Coarse point dump of every surface, for external visualization."""
        pts = []
        for p in self.planes:
            nu = max(2, int(2 * p.half_u / step))
            nv = max(2, int(2 * p.half_v / step))
            a = np.linspace(-p.half_u, p.half_u, nu)
            b = np.linspace(-p.half_v, p.half_v, nv)
            aa, bb = np.meshgrid(a, b)
            pts.append(p.origin + aa.reshape(-1, 1) * p.u + bb.reshape(-1, 1) * p.v)
        for e in self.edges:
            n = max(2, int(np.linalg.norm(e.p1 - e.p0) / step))
            s = np.linspace(0.0, 1.0, n).reshape(-1, 1)
            pts.append(e.p0 + s * (e.p1 - e.p0))
        return np.vstack(pts) if pts else np.zeros((0, 3))

    def cast_rays(self, origin: np.ndarray, dirs: np.ndarray, max_range: float,
                  min_range: float = 0.05, axis: np.ndarray | None = None,
                  cone_cos: float = -1.0):
        """Nearest patch hit per ray.

        Returns (ranges, mask, patch_index); misses carry inf range and
        index -1.  When ``axis`` is given, patches entirely outside the cone
        around it (half-angle arccos(cone_cos), padded by each patch's
        angular radius) are skipped up front.
        """
        n_rays = len(dirs)
        best = np.full(n_rays, np.inf)
        which = np.full(n_rays, -1, dtype=np.int64)
        if len(self.planes) == 0:
            return best, np.zeros(n_rays, dtype=bool), which
        rel = self.p_origin - origin
        dist = np.linalg.norm(rel, axis=1)
        keep = dist <= max_range + self.p_radius
        if axis is not None and cone_cos > -1.0:
            safe = np.maximum(dist, 1e-9)
            # Patch center direction must lie within the cone, padded by the
            # patch's own angular extent (sin a = radius / distance).
            pad = np.minimum(self.p_radius / safe, 1.0)
            cos_dir = (rel @ axis) / safe
            ang = np.arccos(np.clip(cos_dir, -1.0, 1.0))
            keep &= (ang - np.arcsin(pad)) <= math.acos(min(cone_cos, 1.0))
            keep |= dist <= self.p_radius        # patches overlapping origin
        near = np.flatnonzero(keep)
        if len(near) == 0:
            return best, np.zeros(n_rays, dtype=bool), which
        po = self.p_origin[near]
        pn = self.p_normal[near]
        pu = self.p_u[near]
        pv = self.p_v[near]
        hu = self.p_half_u[near]
        hv = self.p_half_v[near]

        denom = dirs @ pn.T                              # (rays, patches)
        num = np.einsum("pj,pj->p", po - origin, pn)     # per-patch offset
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num[None, :] / denom
        t = np.where(np.abs(denom) < 1e-12, np.inf, t)
        t = np.where((t < min_range) | (t > max_range), np.inf, t)
        finite = np.isfinite(t)
        if finite.any():
            t_safe = np.where(finite, t, 0.0)
            hit = origin[None, None, :] + t_safe[:, :, None] * dirs[:, None, :]
            rel = hit - po[None, :, :]
            du = np.einsum("rpj,pj->rp", rel, pu)
            dv = np.einsum("rpj,pj->rp", rel, pv)
            inside = (finite & (np.abs(du) <= hu[None, :])
                      & (np.abs(dv) <= hv[None, :]))
            t = np.where(inside, t, np.inf)
            best = t.min(axis=1)
            hit_mask = np.isfinite(best)
            if hit_mask.any():
                which[hit_mask] = near[np.argmin(t[hit_mask], axis=1)]
        return best, np.isfinite(best), which


@dataclass
class SensorSpec:
    name: str
    extrinsic: BodyPose          # true mounting pose w.r.t. the center
    fov_h: float = 38.4          # degrees
    fov_v: float = 38.4
    max_range: float = 30.0
    rate: float = 10.0           # Hz
    noise_std: float = 0.02      # m, isotropic per point
    phase: float = 0.0           # s, scan schedule offset
    ray_step: float = 2.4        # degrees between rays


@dataclass
class SensorRig:
    sensors: list[SensorSpec]

    @property
    def n(self) -> int:
        return len(self.sensors)

    def true_extrinsics(self) -> np.ndarray:
        return np.array([geometry.x_from_pose(s.extrinsic) for s in self.sensors])


def default_rig(max_range: float = 30.0, noise_std: float = 0.02,
                rate: float = 10.0, ray_step: float = 2.4) -> SensorRig:
    """Five-sensor ring: one wide unit looking forward, four narrow units
    looking left / right / back-left / back-right.

    Mounting offsets are chosen so the extrinsic rotation vectors and
    translations each sum to zero, i.e. the reference frame already is the
    rig's virtual center.
    """
    def yaw(deg):
        return np.array([0.0, 0.0, math.radians(deg)])

    mounts = [
        ("front", yaw(0.0), [0.35, 0.0, 0.0], 98.4),
        ("left", yaw(90.0), [0.05, 0.25, 0.0], 38.4),
        ("right", yaw(-90.0), [0.05, -0.25, 0.0], 38.4),
        ("back-left", yaw(144.0), [-0.225, 0.15, 0.0], 38.4),
        ("back-right", yaw(-144.0), [-0.225, -0.15, 0.0], 38.4),
    ]
    sensors = []
    for k, (name, r, t, fov_h) in enumerate(mounts):
        sensors.append(SensorSpec(
            name=name,
            extrinsic=BodyPose(r, t),
            fov_h=fov_h,
            fov_v=38.4,
            max_range=max_range,
            rate=rate,
            noise_std=noise_std,
            phase=0.02 * k * (1.0 / rate) * 5.0,   # stagger the schedules
            ray_step=ray_step,
        ))
    return SensorRig(sensors)


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Segment:
    kind: str                    # straight | arc | pause | spin
    length: float = 0.0          # m (straight)
    speed: float = 1.3           # m/s
    radius: float = 0.0          # m (arc)
    angle: float = 0.0           # rad, signed (arc / spin)
    duration: float = 0.0        # s (pause)
    rate: float = 0.0            # rad/s (spin)


def straight(length: float, speed: float = 1.3) -> Segment:
    return Segment("straight", length=length, speed=speed)


def arc(radius: float, angle_deg: float, speed: float = 1.3) -> Segment:
    return Segment("arc", radius=radius, angle=math.radians(angle_deg), speed=speed)


def pause(duration: float) -> Segment:
    return Segment("pause", duration=duration)


def spin(angle_deg: float, rate_deg_s: float = 20.0) -> Segment:
    return Segment("spin", angle=math.radians(angle_deg),
                   rate=math.radians(rate_deg_s))


# Gauss-Legendre 5-point nodes/weights on [0, 1]; used to integrate the
# position between cached grid nodes so state_at stays smooth in t.
_GL_NODES = 0.5 * (1.0 + np.array([
    -0.906179845938664, -0.538469310105683, 0.0,
    0.538469310105683, 0.906179845938664]))
_GL_WEIGHTS = 0.5 * np.array([
    0.236926885056189, 0.478628670499366, 0.568888888888889,
    0.478628670499366, 0.236926885056189])


class TrajectorySpec:
    """Piecewise planar trajectory with velocity-continuous transitions.

    Segments define target (speed, turn rate) plateaus; between plateaus the
    pair ramps linearly over ``blend`` seconds, so velocity is continuous
    (the position path is C^1) and no downstream consumer ever sees an
    instantaneous velocity step.  Yaw is closed form (turn rate is piecewise
    linear); planar position comes from cached quadrature over the dense
    construction grid.  Linear velocity is world frame, angular rate body
    frame (pure yaw rate).
    """

    GRID_DT = 0.01

    def __init__(self, segments: list[Segment], start_xy=(0.0, 0.0),
                 start_yaw: float = 0.0, height: float = 0.8,
                 blend: float = 1.0):
        self.segments = list(segments)
        self.height = float(height)
        self.blend = float(blend)
        self.start = (float(start_xy[0]), float(start_xy[1]), float(start_yaw))

        # Piecewise-linear (speed, turn-rate) timeline: per interval k,
        # values ramp from (_s0, _w0) to (_s1, _w1) over [_tb[k], _tb[k+1]].
        plateaus = []
        for seg in self.segments:
            if seg.kind == "straight":
                plateaus.append((seg.length / seg.speed, seg.speed, 0.0))
            elif seg.kind == "arc":
                sgn = 1.0 if seg.angle >= 0.0 else -1.0
                plateaus.append((abs(seg.angle) * seg.radius / seg.speed,
                                 seg.speed, sgn * seg.speed / seg.radius))
            elif seg.kind == "pause":
                plateaus.append((seg.duration, 0.0, 0.0))
            elif seg.kind == "spin":
                sgn = 1.0 if seg.angle >= 0.0 else -1.0
                plateaus.append((abs(seg.angle) / seg.rate, 0.0, sgn * seg.rate))
            else:
                raise InvalidArgumentError(f"unknown segment kind {seg.kind!r}")

        # A blend between plateaus a and b sweeps 0.5*(wa+wb)*tau of yaw and
        # 0.5*(sa+sb)*tau of distance; half of each belongs to either side.
        # Shortening every plateau by its blend half-shares keeps each
        # segment's net heading change and travel exactly as requested, so
        # plans compose the same way they would with instant switches.
        blended = [False] * max(len(plateaus) - 1, 0)
        for k in range(1, len(plateaus)):
            blended[k - 1] = (self.blend > 0.0
                              and plateaus[k - 1][1:] != plateaus[k][1:])
        adjusted = []
        for k, (dur, s, w) in enumerate(plateaus):
            share = 0.0
            if k > 0 and blended[k - 1]:
                share += 0.5 * self.blend
            if k < len(plateaus) - 1 and blended[k]:
                share += 0.5 * self.blend
            if (s != 0.0 or w != 0.0):
                dur = dur - share
                if dur < 0.0:
                    raise InvalidArgumentError(
                        "segment too short for velocity blending")
            adjusted.append((dur, s, w))

        tb = [0.0]
        s0, s1, w0, w1 = [], [], [], []

        def push(duration, sa, sb, wa, wb):
            if duration <= 0.0:
                return
            tb.append(tb[-1] + duration)
            s0.append(sa)
            s1.append(sb)
            w0.append(wa)
            w1.append(wb)

        for k, (dur, s, w) in enumerate(adjusted):
            if k > 0 and blended[k - 1]:
                ps, pw = adjusted[k - 1][1], adjusted[k - 1][2]
                push(self.blend, ps, s, pw, w)
            push(dur, s, s, w, w)

        self._tb = np.asarray(tb)
        self._s0 = np.asarray(s0)
        self._s1 = np.asarray(s1)
        self._w0 = np.asarray(w0)
        self._w1 = np.asarray(w1)
        self.total_duration = float(self._tb[-1])

        # Yaw at interval starts is closed form (turn rate linear in t).
        spans = np.diff(self._tb)
        self._yaw_b = np.concatenate(
            [[self.start[2]],
             self.start[2] + np.cumsum(0.5 * (self._w0 + self._w1) * spans)])

        # Dense grid with cached cumulative positions; nodes are aligned to
        # interval edges so no quadrature step straddles a velocity kink.
        nodes = [0.0]
        for k in range(len(self._s0)):
            ta, tb_k = self._tb[k], self._tb[k + 1]
            m = max(1, int(math.ceil((tb_k - ta) / self.GRID_DT)))
            nodes.extend(ta + (tb_k - ta) * (np.arange(1, m + 1) / m))
        self._grid_t = np.asarray(nodes)
        if len(self._s0) == 0:
            self._grid_pos = np.tile(self.start[:2], (len(nodes), 1))
        else:
            ta = self._grid_t[:-1]
            tb_g = self._grid_t[1:]
            gl = ta[:, None] + (tb_g - ta)[:, None] * _GL_NODES[None, :]
            s, _, yaw = self._sw_yaw_vec(gl.ravel())
            f = np.stack([s * np.cos(yaw), s * np.sin(yaw)], axis=1)
            f = f.reshape(len(ta), len(_GL_NODES), 2)
            disp = (tb_g - ta)[:, None] * np.einsum("k,nkj->nj", _GL_WEIGHTS, f)
            pos = np.empty((len(nodes), 2))
            pos[0] = self.start[:2]
            pos[1:] = self.start[:2] + np.cumsum(disp, axis=0)
            self._grid_pos = pos

    def _interval(self, t: float) -> int:
        if len(self._s0) == 0:
            return -1
        return int(np.clip(np.searchsorted(self._tb, t, side="right") - 1,
                           0, len(self._s0) - 1))

    def _sw_yaw_vec(self, ts: np.ndarray):
        """(speed, turn rate, yaw) for an array of times, closed form."""
        ts = np.clip(ts, 0.0, self.total_duration)
        k = np.clip(np.searchsorted(self._tb, ts, side="right") - 1,
                    0, len(self._s0) - 1)
        span = self._tb[k + 1] - self._tb[k]
        tau = ts - self._tb[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.where(span > 0, tau / span, 0.0)
        s = self._s0[k] + (self._s1[k] - self._s0[k]) * a
        w = self._w0[k] + (self._w1[k] - self._w0[k]) * a
        quad = np.where(span > 0,
                        0.5 * (self._w1[k] - self._w0[k]) * tau * tau
                        / np.where(span > 0, span, 1.0), 0.0)
        yaw = self._yaw_b[k] + self._w0[k] * tau + quad
        return s, w, yaw

    def _sw_yaw(self, t: float):
        """(speed, turn rate, yaw) at time t, closed form."""
        if len(self._s0) == 0:
            return 0.0, 0.0, self.start[2]
        t = min(max(t, 0.0), self.total_duration)
        k = self._interval(t)
        span = self._tb[k + 1] - self._tb[k]
        tau = t - self._tb[k]
        a = tau / span if span > 0 else 0.0
        s = self._s0[k] + (self._s1[k] - self._s0[k]) * a
        w = self._w0[k] + (self._w1[k] - self._w0[k]) * a
        yaw = (self._yaw_b[k] + self._w0[k] * tau
               + 0.5 * (self._w1[k] - self._w0[k]) * tau * tau / span
               if span > 0 else self._yaw_b[k])
        return float(s), float(w), float(yaw)

    def _integrate(self, ta: float, tb: float) -> np.ndarray:
        """Planar displacement over [ta, tb] (must not span interval edges
        by more than quadrature can absorb; grid construction aligns well
        within GRID_DT so a single 5-point rule is exact to ~1e-14)."""
        if tb <= ta:
            return np.zeros(2)
        ts = ta + (tb - ta) * _GL_NODES
        vals = np.empty((len(ts), 2))
        for i, t in enumerate(ts):
            s, _, yaw = self._sw_yaw(t)
            vals[i] = (s * math.cos(yaw), s * math.sin(yaw))
        return (tb - ta) * (_GL_WEIGHTS @ vals)

    def path_length(self) -> float:
        """Total distance traveled (speed is piecewise linear, so exact)."""
        spans = np.diff(self._tb)
        return float(np.sum(0.5 * (np.abs(self._s0) + np.abs(self._s1)) * spans))

    def state_at(self, t: float) -> CenterState:
        """Pose and velocities at time t (clamped to the trajectory end)."""
        t = min(max(t, 0.0), self.total_duration)
        s, w, yaw = self._sw_yaw(t)
        if len(self._s0) == 0:
            x, y = self.start[:2]
        else:
            i = int(np.clip(np.searchsorted(self._grid_t, t, side="right") - 1,
                            0, len(self._grid_t) - 1))
            x, y = self._grid_pos[i] + self._integrate(self._grid_t[i], t)
        v = np.array([s * math.cos(yaw), s * math.sin(yaw), 0.0])
        return CenterState([0.0, 0.0, yaw], [x, y, self.height],
                           np.array([0.0, 0.0, w]), v)

    def sample_stations(self, step: float):
        """(position, heading yaw) samples every ~step meters of travel."""
        out = []
        acc = step
        for i in range(len(self._grid_t) - 1):
            d = float(np.linalg.norm(self._grid_pos[i + 1] - self._grid_pos[i]))
            acc += d
            if acc >= step:
                acc = 0.0
                _, _, yaw = self._sw_yaw(self._grid_t[i])
                out.append((np.array([self._grid_pos[i][0],
                                      self._grid_pos[i][1], 0.0]), yaw))
        return out


def ground_truth_state(trajectory: TrajectorySpec, t: float) -> CenterState:
    return trajectory.state_at(t)


# --------------------------------------------------------------------------
# scan synthesis


def _ray_grid(fov_h_deg: float, fov_v_deg: float, step_deg: float) -> np.ndarray:
    """Sensor-frame unit directions on a regular az/el grid, +x forward."""
    half_h = math.radians(fov_h_deg) / 2.0
    half_v = math.radians(fov_v_deg) / 2.0
    step = math.radians(step_deg)
    n_az = max(2, int(round(2 * half_h / step)) + 1)
    n_el = max(2, int(round(2 * half_v / step)) + 1)
    az = np.linspace(-half_h, half_h, n_az)
    el = np.linspace(-half_v, half_v, n_el)
    aa, ee = np.meshgrid(az, el)
    aa = aa.ravel()
    ee = ee.ravel()
    return np.column_stack([np.cos(ee) * np.cos(aa),
                            np.cos(ee) * np.sin(aa),
                            np.sin(ee)])


def in_fov(dirs_sensor: np.ndarray, fov_h_deg: float, fov_v_deg: float) -> np.ndarray:
    """Membership test for sensor-frame direction vectors."""
    az = np.arctan2(dirs_sensor[:, 1], dirs_sensor[:, 0])
    el = np.arctan2(dirs_sensor[:, 2], np.hypot(dirs_sensor[:, 0], dirs_sensor[:, 1]))
    return ((np.abs(az) <= math.radians(fov_h_deg) / 2.0 + 1e-12)
            & (np.abs(el) <= math.radians(fov_v_deg) / 2.0 + 1e-12))


def synthesize_scan(world: World, rig: SensorRig, sensor_id: int,
                    true_pose_center: BodyPose, t: float,
                    noise_seed: int = 0, edge_step: float = 0.12) -> ScanFrame:
    """Ray-cast one scan from T_center * T_extrinsic at time t.

    The RNG is keyed on (seed, sensor, time), so the scan does not depend on
    who asks for it or in which order.
    """
    if not 0 <= sensor_id < rig.n:
        raise InvalidArgumentError(f"sensor id {sensor_id} out of range")
    spec = rig.sensors[sensor_id]
    T = geometry.compose(true_pose_center, spec.extrinsic)
    R = T.R
    origin = T.translation

    # Pre-cull patches to the sensor cone (pad by half the grid diagonal).
    axis = R @ np.array([1.0, 0.0, 0.0])
    cone = math.cos(math.acos(math.cos(math.radians(spec.fov_h) / 2.0)
                              * math.cos(math.radians(spec.fov_v) / 2.0)) + 0.05)

    dirs_s = _ray_grid(spec.fov_h, spec.fov_v, spec.ray_step)
    dirs_w = dirs_s @ R.T
    ranges, hit, which = world.cast_rays(origin, dirs_w, spec.max_range,
                                         axis=axis, cone_cos=cone)
    plane_pts_s = dirs_s[hit] * ranges[hit][:, None]
    # Source-primitive labels carry the surface normal, in the sensor frame.
    plane_normals_s = world.p_normal[which[hit]] @ R if hit.any() else np.zeros((0, 3))

    edge_pts_s = np.zeros((0, 3))
    edge_dirs_s = np.zeros((0, 3))
    if world.edges:
        pts_w, dirs_all = world.edge_samples(edge_step)
        rel = pts_w - origin
        dist = np.linalg.norm(rel, axis=1)
        ok = (dist > 0.05) & (dist <= spec.max_range)
        if ok.any():
            rel = rel[ok]
            dist = dist[ok]
            dirs_ok = dirs_all[ok]
            dirs = rel / dist[:, None]
            ds = dirs @ R
            ok2 = in_fov(ds, spec.fov_h, spec.fov_v)
            if ok2.any():
                # Line-of-sight: an edge sample is dropped when a patch
                # sits in front of it along the same ray.
                block, _, _ = world.cast_rays(origin, dirs[ok2],
                                              spec.max_range,
                                              axis=axis, cone_cos=cone)
                vis = block >= dist[ok2] - 1e-6
                edge_pts_s = ds[ok2][vis] * dist[ok2][vis][:, None]
                edge_dirs_s = dirs_ok[ok2][vis] @ R

    rng = np.random.default_rng(
        np.random.SeedSequence((int(noise_seed) & 0xFFFFFFFF, sensor_id,
                                int(round(t * 1e6)) & 0x7FFFFFFFFFFF)))
    if spec.noise_std > 0.0:
        if len(plane_pts_s):
            plane_pts_s = plane_pts_s + rng.normal(0.0, spec.noise_std,
                                                   size=plane_pts_s.shape)
        if len(edge_pts_s):
            edge_pts_s = edge_pts_s + rng.normal(0.0, spec.noise_std,
                                                 size=edge_pts_s.shape)
    return ScanFrame(sensor_id, t, plane_pts_s, edge_pts_s,
                     plane_normals=plane_normals_s, edge_dirs=edge_dirs_s)
