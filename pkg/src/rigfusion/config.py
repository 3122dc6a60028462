"""Scenario configuration files.

A scenario is a single JSON document.  Minimal form:

    {"scene": "courtyard", "duration": 120, "seed": 3}

Full schema (all keys optional unless noted):

    scene        builtin scene name ("urban-block", "out-and-back",
                 "wide-boulevard", "courtyard"); omit when giving an inline
                 world + trajectory
    world        inline world, either {"kind": "room", ...room params} or
                 {"kind": "corridor", ...corridor params} (corridor uses the
                 trajectory) or {"planes": [...], "edges": [...]} with
                 planes as {origin, normal, u, half_u, half_v} and edges as
                 {p0, p1}
    trajectory   {"start": [x, y, yaw_deg], "height": z, "blend": s,
                  "segments": [["straight", length, speed],
                               ["arc", radius, angle_deg, speed],
                               ["pause", duration],
                               ["spin", angle_deg, rate_deg_s]]}
    rig          overrides for every sensor: {"max_range", "rate",
                  "noise_std", "ray_step"}; or "sensors": [{name, r, t,
                  fov_h, fov_v, ...}] to replace the rig wholesale
    sensors      enabled subset, by name or index (default: all)
    failures     [[sensor, t_start, t_end], ...]
    bus          {"latency", "jitter", "drop_prob", "reorder", "seed"}
    init         {"policy": "zero" | "perturbed" | "truth" | "map-align",
                  "sigma_r", "sigma_t", "boot_duration"}
    noise        {"sigma_omega", "sigma_v"} process noise stds
    filter       {"s", "gate_prob", "gate_enabled", "gate_max_consecutive",
                  "joseph", "max_dt", "jacobian_method"}
    registration {"meas_noise", "voxel", "corr_radius", "min_points",
                  "map_window", "cond_max", "max_iters", "min_overlap"}
    duration     simulated seconds (default: scene's recommended length)
    seed         master seed for scan noise and initialization draws
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .ekf import FilterConfig
from .errors import ConfigError
from .geometry import BodyPose
from .motion import ProcessNoise
from .network import BusConfig, InitPolicy, Scenario
from .registration import RegistrationConfig
from .scenes import builtin_scenes, corridor_world, room_world
from .world import (
    EdgeSegment,
    PlanePatch,
    SensorRig,
    SensorSpec,
    TrajectorySpec,
    World,
    arc,
    pause,
    spin,
    straight,
)


def _segment(row):
    try:
        kind = row[0]
        if kind == "straight":
            return straight(float(row[1]), float(row[2]) if len(row) > 2 else 1.3)
        if kind == "arc":
            return arc(float(row[1]), float(row[2]),
                       float(row[3]) if len(row) > 3 else 1.3)
        if kind == "pause":
            return pause(float(row[1]))
        if kind == "spin":
            return spin(float(row[1]), float(row[2]) if len(row) > 2 else 20.0)
    except (IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad trajectory segment {row!r}: {exc}") from exc
    raise ConfigError(f"unknown segment kind {row[0]!r}")


def _trajectory(doc) -> TrajectorySpec:
    segs = [_segment(row) for row in doc.get("segments", [])]
    start = doc.get("start", [0.0, 0.0, 0.0])
    return TrajectorySpec(
        segs,
        start_xy=(float(start[0]), float(start[1])),
        start_yaw=math.radians(float(start[2])) if len(start) > 2 else 0.0,
        height=float(doc.get("height", 0.8)),
        blend=float(doc.get("blend", 1.0)),
    )


def _world(doc, trajectory: TrajectorySpec | None) -> World:
    kind = doc.get("kind")
    if kind == "room":
        args = {k: v for k, v in doc.items() if k != "kind"}
        return room_world(**args)
    if kind == "corridor":
        if trajectory is None:
            raise ConfigError("corridor world needs a trajectory")
        args = {k: v for k, v in doc.items() if k != "kind"}
        return corridor_world(trajectory, **args)
    if "planes" in doc or "edges" in doc:
        planes = []
        for p in doc.get("planes", []):
            n = np.asarray(p["normal"], dtype=float)
            n = n / np.linalg.norm(n)
            u = np.asarray(p["u"], dtype=float)
            u = u / np.linalg.norm(u)
            v = np.cross(n, u)
            planes.append(PlanePatch(np.asarray(p["origin"], dtype=float),
                                     n, u, v, float(p["half_u"]),
                                     float(p["half_v"])))
        edges = [EdgeSegment(np.asarray(e["p0"], dtype=float),
                             np.asarray(e["p1"], dtype=float))
                 for e in doc.get("edges", [])]
        return World(planes, edges)
    raise ConfigError("world must be a room, a corridor, or primitive lists")


def _rig(doc, base: SensorRig | None) -> SensorRig:
    if "sensors" in doc:
        sensors = []
        for s in doc["sensors"]:
            sensors.append(SensorSpec(
                name=s.get("name", f"sensor{len(sensors)}"),
                extrinsic=BodyPose(np.asarray(s.get("r", [0, 0, 0]), dtype=float),
                                   np.asarray(s.get("t", [0, 0, 0]), dtype=float)),
                fov_h=float(s.get("fov_h", 38.4)),
                fov_v=float(s.get("fov_v", 38.4)),
                max_range=float(s.get("max_range", 30.0)),
                rate=float(s.get("rate", 10.0)),
                noise_std=float(s.get("noise_std", 0.02)),
                phase=float(s.get("phase", 0.0)),
                ray_step=float(s.get("ray_step", 2.4)),
            ))
        return SensorRig(sensors)
    if base is None:
        raise ConfigError("no rig: give a scene or rig.sensors")
    overrides = {k: doc[k] for k in ("max_range", "rate", "noise_std",
                                     "ray_step") if k in doc}
    sensors = [dataclasses.replace(s, **overrides) for s in base.sensors]
    return SensorRig(sensors)


def sensor_ids(rig: SensorRig, names) -> list[int]:
    """Resolve a mixed list of sensor names / indices against the rig."""
    by_name = {s.name: i for i, s in enumerate(rig.sensors)}
    out = []
    for n in names:
        if isinstance(n, int) or (isinstance(n, str) and n.isdigit()):
            i = int(n)
            if not 0 <= i < rig.n:
                raise ConfigError(f"sensor index {i} out of range")
            out.append(i)
        elif n in by_name:
            out.append(by_name[n])
        else:
            raise ConfigError(f"unknown sensor {n!r} "
                              f"(have {sorted(by_name)})")
    return sorted(set(out))


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario config must be a JSON object")
    scene = None
    if "scene" in doc:
        catalog = builtin_scenes()
        if doc["scene"] not in catalog:
            raise ConfigError(f"unknown scene {doc['scene']!r} "
                              f"(have {sorted(catalog)})")
        scene = catalog[doc["scene"]]

    trajectory = (_trajectory(doc["trajectory"]) if "trajectory" in doc
                  else (scene.trajectory if scene else None))
    if trajectory is None:
        raise ConfigError("no trajectory: give a scene or an inline one")
    world = (_world(doc["world"], trajectory) if "world" in doc
             else (scene.world if scene else None))
    if world is None:
        raise ConfigError("no world: give a scene or an inline one")
    rig = _rig(doc.get("rig", {}), scene.rig if scene else None)

    bus_doc = doc.get("bus", {})
    bus = BusConfig(latency=float(bus_doc.get("latency", 0.0)),
                    jitter=float(bus_doc.get("jitter", 0.0)),
                    drop_prob=float(bus_doc.get("drop_prob", 0.0)),
                    reorder=bool(bus_doc.get("reorder", False)),
                    seed=int(bus_doc.get("seed", doc.get("seed", 0))))

    init_doc = doc.get("init", {})
    init = InitPolicy(kind=init_doc.get("policy", "truth"),
                      sigma_r=float(init_doc.get("sigma_r", 0.1)),
                      sigma_t=float(init_doc.get("sigma_t", 0.1)),
                      boot_duration=float(init_doc.get("boot_duration", 30.0)))

    noise_doc = doc.get("noise", {})
    pn = ProcessNoise.from_stds(float(noise_doc.get("sigma_omega", 0.05)),
                                float(noise_doc.get("sigma_v", 0.1)))
    filt_doc = doc.get("filter", {})
    # Calibration transients carry persistent large innovations that a
    # chi-square gate would starve, so the gate defaults on only when the
    # extrinsics start at truth.
    filter_cfg = FilterConfig(
        max_dt=float(filt_doc.get("max_dt", 1.0)),
        process_noise=pn,
        s=float(filt_doc.get("s", 1.0)),
        gate_enabled=bool(filt_doc.get("gate_enabled", init.kind == "truth")),
        gate_prob=float(filt_doc.get("gate_prob", 0.999)),
        gate_max_consecutive=int(filt_doc.get("gate_max_consecutive", 5)),
        joseph=bool(filt_doc.get("joseph", False)),
        jacobian_method=filt_doc.get("jacobian_method", "analytic"),
    )
    reg_doc = doc.get("registration", {})
    reg_cfg = RegistrationConfig(**{k: reg_doc[k] for k in reg_doc})

    enabled = None
    if "sensors" in doc:
        enabled = sensor_ids(rig, doc["sensors"])
    failures = [(int(f[0]), float(f[1]), float(f[2]))
                for f in doc.get("failures", [])]

    duration = float(doc.get("duration",
                             scene.duration if scene else
                             trajectory.total_duration))
    sc = Scenario(world=world, trajectory=trajectory, rig=rig, bus=bus,
                  duration=duration, seed=int(doc.get("seed", 0)), init=init,
                  enabled=enabled, failures=failures, filter_cfg=filter_cfg,
                  reg_cfg=reg_cfg,
                  name=doc.get("scene", doc.get("name", "scenario")))
    sc.validate()
    return sc


def load_scenario(path) -> Scenario:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)
