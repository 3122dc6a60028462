"""Deterministic discrete-event simulation of the filter-node network.

Virtual time only: scan arrivals and message deliveries live in one event
queue ordered by (time, kind, id, sequence), with deliveries processed
before scans at equal times so a zero-latency bus behaves exactly like a
shared sequential filter.  All randomness (scan noise, drops, jitter,
perturbed initialization) is drawn from generators keyed on the scenario
seed, so one seed gives one byte-identical run log.

Broadcast semantics: every emitted state message is scheduled for delivery
to every other node; each node keeps only the newest-stamped message it has
seen (its own updates included).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .ekf import (
    FilterConfig,
    FilterNode,
    FullState,
    StateCovariance,
    StateMessage,
    StepRecord,
    apply_gauge,
    regauge_zero_sum,
)
from .errors import (
    ConfigError,
    InsufficientOverlapError,
    MapAlignTimeoutError,
    RegistrationError,
)
from .geometry import BodyPose
from .motion import CenterState
from .registration import (
    LocalMap,
    RegistrationConfig,
    align_maps,
    register,
    update_local_map,
)
from .scenes import SceneSpec
from .world import SensorRig, TrajectorySpec, World, synthesize_scan

EVENT_DELIVERY = 0
EVENT_SCAN = 1


@dataclass
class BusConfig:
    latency: float = 0.0          # fixed link delay, seconds
    jitter: float = 0.0           # uniform extra delay in [0, jitter)
    drop_prob: float = 0.0
    reorder: bool = False         # False clamps each link to FIFO order
    seed: int = 0

    def validate(self):
        if self.latency < 0 or self.jitter < 0:
            raise ConfigError("latency and jitter must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError("drop_prob must be in [0, 1]")


@dataclass
class InitPolicy:
    kind: str = "truth"           # zero | perturbed | truth | map-align
    sigma_r: float = 0.1          # rad, perturbed policy
    sigma_t: float = 0.1          # m
    boot_duration: float = 30.0   # s, map-align bootstrap budget
    align_check_every: float = 2.0

    def validate(self):
        if self.kind not in ("zero", "perturbed", "truth", "map-align"):
            raise ConfigError(f"unknown init policy {self.kind!r}")


@dataclass
class Scenario:
    world: World
    trajectory: TrajectorySpec
    rig: SensorRig
    bus: BusConfig = field(default_factory=BusConfig)
    duration: float = 60.0
    seed: int = 0
    init: InitPolicy = field(default_factory=InitPolicy)
    enabled: list[int] | None = None          # sensors that produce scans
    failures: list[tuple[int, float, float]] = field(default_factory=list)
    # The analytic process Jacobian matches the finite-difference one to
    # ~1e-7 and is much cheaper, so long simulations default to it.
    filter_cfg: FilterConfig = field(
        default_factory=lambda: FilterConfig(jacobian_method="analytic"))
    reg_cfg: RegistrationConfig = field(default_factory=RegistrationConfig)
    name: str = "scenario"

    @staticmethod
    def from_scene(scene: SceneSpec, **overrides) -> "Scenario":
        sc = Scenario(world=scene.world, trajectory=scene.trajectory,
                      rig=scene.rig, duration=scene.duration, name=scene.name)
        return replace(sc, **overrides)

    def validate(self):
        self.bus.validate()
        self.init.validate()
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.rig.n == 0:
            raise ConfigError("rig has no sensors")
        for s in self.rig.sensors:
            if s.rate <= 0:
                raise ConfigError("scan rates must be positive")
        ids = self.enabled if self.enabled is not None else range(self.rig.n)
        for i in ids:
            if not 0 <= i < self.rig.n:
                raise ConfigError(f"enabled sensor {i} out of range")
        for i, t0, t1 in self.failures:
            if not 0 <= i < self.rig.n or t1 < t0:
                raise ConfigError(f"bad failure window {(i, t0, t1)}")


def fail_sensor(scenario: Scenario, sensor_id: int, t_start: float,
                t_end: float) -> Scenario:
    """Scenario copy where the given sensor is fully offline in [t0, t1)."""
    return replace(scenario,
                   failures=scenario.failures + [(sensor_id, t_start, t_end)])


@dataclass
class RunLog:
    n_sensors: int
    seed: int
    name: str
    true_extrinsics: np.ndarray
    records: list[StepRecord] = field(default_factory=list)
    n_messages: int = 0
    n_dropped: int = 0
    n_scans: int = 0
    t_start: float = 0.0
    meta: dict = field(default_factory=dict)

    def stamps(self) -> np.ndarray:
        return np.array([r.stamp for r in self.records])

    def center_states(self) -> np.ndarray:
        return np.array([r.state[:12] for r in self.records])

    def gt_center_states(self) -> np.ndarray:
        return np.array([r.gt_center for r in self.records])

    def extrinsic_series(self) -> np.ndarray:
        """(steps, N, 6) posterior extrinsics."""
        return np.array([r.state[12:].reshape(-1, 6) for r in self.records])

    def write(self, out_dir):
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dim = 12 + 6 * self.n_sensors
        header = (["stamp", "sensor", "flags", "reason", "reg_cost",
                   "reg_iters", "reg_corr", "r_re_norm", "t_re_norm"]
                  + [f"x{k}" for k in range(dim)]
                  + [f"p{k}" for k in range(dim)]
                  + [f"gt{k}" for k in range(12)])
        lines = [",".join(header)]
        for r in self.records:
            gt = r.gt_center if r.gt_center is not None else np.full(12, np.nan)
            row = ([repr(float(r.stamp)), str(r.sensor_id), str(r.flags),
                    r.reason or "-", repr(float(r.reg_cost)),
                    str(r.reg_iterations), str(r.reg_correspondences),
                    repr(float(r.r_re_norm)), repr(float(r.t_re_norm))]
                   + [repr(float(v)) for v in r.state]
                   + [repr(float(v)) for v in r.cov_diag]
                   + [repr(float(v)) for v in gt])
            lines.append(",".join(row))
        (out / "steps.csv").write_text("\n".join(lines) + "\n")

        def tum_line(stamp, r, t):
            q = geometry.rotvec_to_quat(r)
            vals = [stamp, t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
            return " ".join(repr(float(v)) for v in vals)

        est = []
        gt = []
        for r in self.records:
            if r.flags != 0 and (r.reason in ("stale", "uninitialized")):
                continue
            est.append(tum_line(r.stamp, r.state[0:3], r.state[3:6]))
            if r.gt_center is not None:
                gt.append(tum_line(r.stamp, r.gt_center[0:3], r.gt_center[3:6]))
        (out / "est_center.txt").write_text("\n".join(est) + "\n")
        (out / "gt_center.txt").write_text("\n".join(gt) + "\n")

        np.savetxt(out / "true_extrinsics.txt", self.true_extrinsics)
        meta = dict(self.meta)
        meta.update({
            "n_sensors": self.n_sensors,
            "seed": self.seed,
            "name": self.name,
            "n_messages": self.n_messages,
            "n_dropped": self.n_dropped,
            "n_scans": self.n_scans,
            "t_start": self.t_start,
        })
        (out / "meta.json").write_text(json.dumps(meta, sort_keys=True,
                                                  indent=1) + "\n")


def _default_cov(n_sensors: int, extr_r_std: float, extr_t_std: float,
                 pose_std: float = 1e-2, vel_std: float = 0.1) -> StateCovariance:
    d = np.empty(12 + 6 * n_sensors)
    d[0:3] = pose_std**2
    d[3:6] = pose_std**2
    d[6:9] = vel_std**2
    d[9:12] = vel_std**2
    for j in range(n_sensors):
        c = 12 + 6 * j
        d[c:c + 3] = extr_r_std**2
        d[c + 3:c + 6] = extr_t_std**2
    return StateCovariance(np.diag(d))


@dataclass
class InitResult:
    state: FullState
    cov: StateCovariance
    t_start: float
    # Boot products, present for the policies that run the alignment phase:
    # per-node maps (already in the common frame) and odometry chain seeds.
    maps: list | None = None
    odometry: list | None = None        # [(pose, increment, stamp)] per node

    def __iter__(self):
        # Unpacks like the plain (state, cov, t_start) triple.
        return iter((self.state, self.cov, self.t_start))


class _BootOdometry:
    """Per-sensor scan-to-map odometry in the sensor's own start frame.

    Also accumulates the sensor's own-frame direction of travel during
    straight motion: for a rigid rig that direction differs between two
    sensors by exactly their relative mounting yaw, which makes a reliable
    alignment seed no matter how self-similar the environment is.
    """

    def __init__(self, reg_cfg: RegistrationConfig):
        self.reg_cfg = reg_cfg
        self.map = LocalMap(voxel=reg_cfg.voxel, window=reg_cfg.map_window)
        self.pose = BodyPose.identity()
        self.increment = BodyPose.identity()
        self.stamp = None
        self._travel_sum = np.zeros(2)

    def process(self, scan):
        guess = geometry.compose(self.pose, self.increment)
        if self.map.n_landmarks >= self.reg_cfg.min_points:
            try:
                res = register(scan, self.map, guess, self.reg_cfg)
                if res.converged:
                    guess = geometry.compose(guess,
                                             geometry.pose_from_x(res.delta_x))
            except RegistrationError:
                pass
        if self.stamp is not None and scan.stamp > self.stamp:
            self.increment = geometry.compose(geometry.inverse(self.pose),
                                              guess)
            inc_t = self.increment.translation[:2]
            if (np.linalg.norm(self.increment.rotation) < 5e-3
                    and np.linalg.norm(inc_t) > 0.02):
                self._travel_sum += inc_t / np.linalg.norm(inc_t)
        self.pose = guess
        self.stamp = scan.stamp
        update_local_map(self.map, scan, self.pose, self.reg_cfg)

    def travel_yaw(self):
        """Own-frame heading of straight travel, or None if not yet seen."""
        if np.linalg.norm(self._travel_sum) < 5.0:
            return None
        return float(np.arctan2(self._travel_sum[1], self._travel_sum[0]))


def _map_align_boot(policy: InitPolicy, sc: Scenario):
    """Run per-sensor odometry until all maps align to sensor 0's frame.

    Returns (aligned extrinsics (N, 6) in the zero-sum gauge, boot end time,
    per-node odometry trackers, align transforms T_0i, node-0 velocity).
    """
    n = sc.rig.n
    odos = [_BootOdometry(sc.reg_cfg) for _ in range(n)]
    times = []
    for i in range(n):
        spec = sc.rig.sensors[i]
        t = spec.phase
        while t <= policy.boot_duration:
            times.append((t, i))
            t += 1.0 / spec.rate
    times.sort()

    aligned: dict[int, BodyPose] = {}
    next_check = policy.align_check_every
    prev_pose0 = None
    prev_stamp0 = None
    vel0 = np.zeros(3)
    for t, i in times:
        gt = sc.trajectory.state_at(t)
        scan = synthesize_scan(sc.world, sc.rig, i, gt.pose(), t,
                               noise_seed=sc.seed)
        if scan.n_points == 0:
            continue
        if i == 0:
            prev_pose0 = odos[0].pose.copy()
            prev_stamp0 = odos[0].stamp
        odos[i].process(scan)
        if i == 0 and prev_stamp0 is not None and scan.stamp > prev_stamp0:
            vel0 = (odos[0].pose.translation - prev_pose0.translation) / (
                scan.stamp - prev_stamp0)
        if t >= next_check:
            next_check += policy.align_check_every
            yaw0 = odos[0].travel_yaw()
            for j in range(1, n):
                if j in aligned:
                    continue
                # ICP is local; the straight-travel headings give the right
                # yaw basin (immune to room self-similarity), with a small
                # sweep around it for slack.
                yawj = odos[j].travel_yaw()
                if yaw0 is None or yawj is None:
                    continue
                seed = yaw0 - yawj
                best = None
                for off in (0.0, np.radians(20.0), np.radians(-20.0)):
                    guess = BodyPose([0.0, 0.0, seed + off], np.zeros(3))
                    try:
                        T, fitness = align_maps(odos[0].map, odos[j].map,
                                                guess, sc.reg_cfg)
                    except InsufficientOverlapError:
                        continue
                    if best is None or fitness > best[1]:
                        best = (T, fitness)
                if best is not None and best[1] >= max(
                        sc.reg_cfg.min_overlap, 0.5):
                    aligned[j] = best[0]
            if len(aligned) == n - 1:
                # One refinement pass against the matured maps.
                for j in range(1, n):
                    try:
                        T, fitness = align_maps(odos[0].map, odos[j].map,
                                                aligned[j], sc.reg_cfg)
                        if fitness >= sc.reg_cfg.min_overlap:
                            aligned[j] = T
                    except InsufficientOverlapError:
                        pass
                transforms = [BodyPose.identity()] + [aligned[j]
                                                      for j in range(1, n)]
                state = FullState(
                    CenterState(), np.array([geometry.x_from_pose(e)
                                             for e in transforms]))
                state = regauge_zero_sum(state)
                return state.extrinsics, t, odos, transforms, vel0
    raise MapAlignTimeoutError(
        f"map alignment incomplete after {policy.boot_duration}s "
        f"({len(aligned)}/{n - 1} sensors aligned)")


def initialize_extrinsics(policy: InitPolicy, sc: Scenario) -> InitResult:
    """Initial full state / covariance / start time per the chosen policy.

    truth      -- exact mounting poses, tight priors, no bootstrap;
    map-align  -- per-sensor odometry in own frames until the maps overlap
                  enough to align; extrinsics come from the aligned frames
                  (zero-sum gauge) and every node starts with its aligned
                  map preloaded;
    zero       -- same bootstrap (so the maps share one frame), but the
                  state's extrinsic blocks start at zero with wide priors;
    perturbed  -- same bootstrap, extrinsics start at truth plus noise.

    The bootstrap is what ties the per-node maps to a single reference
    frame; without it each node's map silently anchors to its own initial
    extrinsic guess and the filter can never observe the difference.
    """
    policy.validate()
    n = sc.rig.n
    truth = sc.rig.true_extrinsics()
    gt0 = sc.trajectory.state_at(0.0)

    if policy.kind == "truth":
        state = FullState(gt0.copy(), truth.copy(), stamp=0.0)
        return InitResult(state, _default_cov(n, 0.02, 0.02), 0.0)

    extr_aligned, t_boot, odos, transforms, vel0 = _map_align_boot(policy, sc)
    # The estimate's world frame is sensor 0's start frame; express the
    # center through node 0's odometry and the re-gauged extrinsic.
    E0 = geometry.pose_from_x(extr_aligned[0])
    center_pose = geometry.compose(odos[0].pose, geometry.inverse(E0))
    omega0 = odos[0].increment.rotation * sc.rig.sensors[0].rate
    center = CenterState(center_pose.rotation, center_pose.translation,
                         omega0, vel0)

    maps = [odos[i].map if i == 0 else odos[i].map.transformed(transforms[i])
            for i in range(n)]
    odometry = []
    for i in range(n):
        pose_common = geometry.compose(transforms[i], odos[i].pose)
        odometry.append((pose_common, odos[i].increment.copy(),
                         odos[i].stamp))

    if policy.kind == "map-align":
        extr = extr_aligned
        cov = _default_cov(n, 0.1, 0.1)
    elif policy.kind == "zero":
        extr = np.zeros((n, 6))
        cov = _default_cov(n, 1.5, 0.8)
    else:  # perturbed
        rng = np.random.default_rng(np.random.SeedSequence((sc.seed, 0x1217)))
        noise = np.hstack([rng.normal(0.0, policy.sigma_r, size=(n, 3)),
                           rng.normal(0.0, policy.sigma_t, size=(n, 3))])
        extr = truth + noise
        cov = _default_cov(n, max(policy.sigma_r, 0.02) * 1.5,
                           max(policy.sigma_t, 0.02) * 1.5)

    state = FullState(center, extr, stamp=t_boot)
    return InitResult(state, cov, t_boot, maps=maps, odometry=odometry)


def run_scenario(sc: Scenario) -> RunLog:
    """Drive the whole network once; returns the complete run log."""
    import heapq

    sc.validate()
    n = sc.rig.n
    init = initialize_extrinsics(sc.init, sc)
    state0, cov0, t_start = init
    nodes = [FilterNode(i, n, sc.filter_cfg, sc.reg_cfg) for i in range(n)]
    for i, node in enumerate(nodes):
        node.seed(state0, cov0)
        if init.maps is not None:
            node.local_map = init.maps[i]
        if init.odometry is not None:
            pose, incr, stamp = init.odometry[i]
            node.odom_pose = pose.copy()
            node.odom_increment = incr.copy()
            node._odom_stamp = stamp

    rng_bus = np.random.default_rng(np.random.SeedSequence((sc.bus.seed, 0xB5)))
    enabled = list(range(n)) if sc.enabled is None else sorted(sc.enabled)

    def is_failed(i: int, t: float) -> bool:
        return any(i == fi and f0 <= t < f1 for fi, f0, f1 in sc.failures)

    heap = []
    seq = 0
    t_end = t_start + sc.duration
    for i in enabled:
        spec = sc.rig.sensors[i]
        t = t_start + spec.phase
        while t <= t_end + 1e-12:
            heapq.heappush(heap, (t, EVENT_SCAN, i, seq, None))
            seq += 1
            t += 1.0 / spec.rate

    log = RunLog(n_sensors=n, seed=sc.seed, name=sc.name,
                 true_extrinsics=sc.rig.true_extrinsics(), t_start=t_start,
                 meta={"duration": sc.duration,
                       "enabled": enabled,
                       "init": sc.init.kind,
                       "bus": {"latency": sc.bus.latency,
                               "jitter": sc.bus.jitter,
                               "drop_prob": sc.bus.drop_prob,
                               "reorder": sc.bus.reorder,
                               "seed": sc.bus.seed},
                       "failures": [list(f) for f in sc.failures]})
    last_link_time: dict[tuple[int, int], float] = {}

    while heap:
        t, kind, who, _, payload = heapq.heappop(heap)
        if kind == EVENT_DELIVERY:
            if not is_failed(who, t):
                nodes[who].receive(payload)
            else:
                log.n_dropped += 1
            continue

        if is_failed(who, t):
            continue
        log.n_scans += 1
        gt = sc.trajectory.state_at(t)
        scan = synthesize_scan(sc.world, sc.rig, who, gt.pose(), t,
                               noise_seed=sc.seed)
        msg, record = nodes[who].step(scan)
        record.gt_center = gt.pack()
        log.records.append(record)
        if msg is None:
            continue
        for j in range(n):
            if j == who:
                continue
            if sc.bus.drop_prob > 0.0 and rng_bus.random() < sc.bus.drop_prob:
                log.n_dropped += 1
                continue
            delay = sc.bus.latency
            if sc.bus.jitter > 0.0:
                delay += sc.bus.jitter * rng_bus.random()
            t_del = t + delay
            if not sc.bus.reorder:
                key = (who, j)
                t_del = max(t_del, last_link_time.get(key, t_del))
                last_link_time[key] = t_del
            heapq.heappush(heap, (t_del, EVENT_DELIVERY, j, seq, msg))
            seq += 1
            log.n_messages += 1
    return log
