"""Built-in worlds and routes used by the simulator and the test suite.

Scene construction is deterministic (no RNG): every patch and pillar is
placed from the route geometry alone.

Catalog:

- ``urban-block``: one-way corridor route of ~551.4 m with features in every
  direction (walls, floor, pillars, buttresses).  The trend scene for
  localization accuracy with the full rig.
- ``out-and-back``: ~436.5 m route that returns near its start.
- ``wide-boulevard``: a degeneracy trap.  The roadway is so wide (and the
  per-scene sensor range so short) that the forward-looking sensor only ever
  sees the floor: its scans cannot constrain the along-track direction, while
  the sideways sensors still reach the walls and the shallow wall fixtures.
  The route changes speed so pure dead reckoning drifts.
- ``courtyard``: an enclosed room with dense features and a turn-heavy loop;
  the calibration scene where extrinsics are excited early and often.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import (
    EdgeSegment,
    PlanePatch,
    SensorRig,
    TrajectorySpec,
    World,
    arc,
    default_rig,
    straight,
    spin,
)

Z = np.array([0.0, 0.0, 1.0])


@dataclass
class SceneSpec:
    name: str
    description: str
    world: World
    trajectory: TrajectorySpec
    rig: SensorRig
    duration: float              # recommended simulated length, seconds


def _rot_z(v, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])


def _stations(trajectory: TrajectorySpec, step: float):
    """(position, heading yaw) samples spaced ~step along the moving path."""
    return trajectory.sample_stations(step)


def _tune_tail(segments, target_length, **traj_kwargs) -> TrajectorySpec:
    """Adjust the final straight so the blended path hits target_length."""
    traj = TrajectorySpec(segments, **traj_kwargs)
    deficit = target_length - traj.path_length()
    tail = segments[-1]
    assert tail.kind == "straight"
    segments = segments[:-1] + [straight(tail.length + deficit, tail.speed)]
    return TrajectorySpec(segments, **traj_kwargs)


def corridor_world(trajectory: TrajectorySpec, half_width: float = 6.0,
                   wall_height: float = 3.0, wall_step: float = 2.0,
                   floor_step: float = 4.0, pillar_every: float = 6.0,
                   pillar_inset: float = 0.35, buttress_every: float = 9.0,
                   buttress_depth: float = 0.8, with_pillars: bool = True,
                   with_buttresses: bool = True,
                   angled_buttresses: bool = True) -> World:
    """Walls, floor and optional fixtures swept along the route.

    Buttresses are shallow fins flush with the walls; their faces carry
    along-track information.  With ``angled_buttresses`` every second fin is
    rotated 45 degrees so its face constrains both horizontal directions.
    """
    planes: list[PlanePatch] = []
    edges: list[EdgeSegment] = []
    zc = wall_height / 2.0

    for pos, yaw in _stations(trajectory, wall_step):
        h = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        lat = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        for side in (+1.0, -1.0):
            anchor = pos + side * half_width * lat + zc * Z
            planes.append(PlanePatch(anchor, -side * lat, h, Z,
                                     wall_step / 2.0, zc))

    for pos, yaw in _stations(trajectory, floor_step):
        h = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        lat = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        planes.append(PlanePatch(pos.copy(), Z.copy(), h, lat,
                                 floor_step / 2.0, half_width))

    if with_pillars:
        for pos, yaw in _stations(trajectory, pillar_every):
            lat = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
            for side in (+1.0, -1.0):
                base = pos + side * (half_width - pillar_inset) * lat
                edges.append(EdgeSegment(base, base + wall_height * Z))

    if with_buttresses:
        stations = _stations(trajectory, buttress_every)
        for k, (pos, yaw) in enumerate(stations):
            h = np.array([math.cos(yaw), math.sin(yaw), 0.0])
            lat = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
            side = 1.0 if k % 2 == 0 else -1.0
            anchor = pos + side * (half_width - buttress_depth / 2.0) * lat + zc * Z
            tilt = math.radians(45.0) * side if (angled_buttresses and k % 4 >= 2) else 0.0
            n = _rot_z(h if k % 2 == 0 else -h, tilt)
            u = _rot_z(side * lat, tilt)
            planes.append(PlanePatch(anchor, n, u, Z, buttress_depth / 2.0, zc))

    return World(planes, edges)


def room_world(half_x: float = 22.0, half_y: float = 18.0,
               wall_height: float = 3.5, wall_step: float = 2.0,
               floor_step: float = 4.0, pillar_every: float = 5.0,
               pillar_inset: float = 0.4, buttress_every: float = 7.0,
               buttress_depth: float = 0.6, interior: bool = True) -> World:
    """Enclosed rectangular room with inward-facing walls and fixtures.

    ``interior`` adds an off-center diagonal wall stub and a few scattered
    pillars; without some asymmetry a rectangular room is self-similar under
    half-turns and map alignment between sensors is ambiguous.
    """
    planes: list[PlanePatch] = []
    edges: list[EdgeSegment] = []
    zc = wall_height / 2.0
    sides = [
        (np.array([0.0, -half_y, 0.0]), np.array([0.0, 1.0, 0.0]),
         np.array([1.0, 0.0, 0.0]), half_x),
        (np.array([0.0, half_y, 0.0]), np.array([0.0, -1.0, 0.0]),
         np.array([1.0, 0.0, 0.0]), half_x),
        (np.array([-half_x, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]),
         np.array([0.0, 1.0, 0.0]), half_y),
        (np.array([half_x, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]),
         np.array([0.0, 1.0, 0.0]), half_y),
    ]
    for base, n, u, half_len in sides:
        n_pat = max(1, int(round(2 * half_len / wall_step)))
        for k in range(n_pat):
            c = -half_len + (k + 0.5) * 2 * half_len / n_pat
            anchor = base + c * u + zc * Z
            planes.append(PlanePatch(anchor, n, u, Z, half_len / n_pat, zc))
        n_pil = max(1, int(round(2 * half_len / pillar_every)))
        for k in range(n_pil):
            c = -half_len + (k + 0.5) * 2 * half_len / n_pil
            p = base + c * u + pillar_inset * n
            edges.append(EdgeSegment(p, p + wall_height * Z))
        n_but = max(1, int(round(2 * half_len / buttress_every)))
        for k in range(n_but):
            c = -half_len + (k + 0.3) * 2 * half_len / n_but
            anchor = base + c * u + (buttress_depth / 2.0) * n + zc * Z
            tilt = math.radians(45.0) if k % 2 else 0.0
            planes.append(PlanePatch(anchor, _rot_z(u, tilt), _rot_z(n, tilt),
                                     Z, buttress_depth / 2.0, zc))

    nx = max(1, int(round(2 * half_x / floor_step)))
    ny = max(1, int(round(2 * half_y / floor_step)))
    for i in range(nx):
        for j in range(ny):
            cx = -half_x + (i + 0.5) * 2 * half_x / nx
            cy = -half_y + (j + 0.5) * 2 * half_y / ny
            planes.append(PlanePatch(np.array([cx, cy, 0.0]), Z.copy(),
                                     np.array([1.0, 0.0, 0.0]),
                                     np.array([0.0, 1.0, 0.0]),
                                     half_x / nx, half_y / ny))

    if interior:
        sx, sy = 0.38 * half_x, 0.45 * half_y
        u = np.array([math.cos(0.5), math.sin(0.5), 0.0])
        nvec = np.array([-math.sin(0.5), math.cos(0.5), 0.0])
        for k in range(3):
            anchor = (np.array([-sx, sy, 0.0]) + (2.0 * k + 1.0) * u + zc * Z)
            planes.append(PlanePatch(anchor, nvec, u, Z, 1.0, zc))
        for px, py in [(0.3 * half_x, -0.2 * half_y),
                       (-0.15 * half_x, 0.35 * half_y),
                       (0.55 * half_x, 0.4 * half_y)]:
            base = np.array([px, py, 0.0])
            edges.append(EdgeSegment(base, base + wall_height * Z))
    return World(planes, edges)


def _urban_block() -> SceneSpec:
    traj = _tune_tail([
        straight(150.0, 1.3),
        arc(10.0, -90.0, 1.3),
        straight(120.0, 1.3),
        arc(10.0, -90.0, 1.3),
        straight(150.0, 1.3),
        arc(10.0, 90.0, 1.3),
        straight(84.0, 1.3),
    ], 551.45, start_xy=(0.0, 0.0), start_yaw=0.0)
    world = corridor_world(traj, half_width=6.0, pillar_every=6.0,
                           buttress_every=9.0)
    return SceneSpec(
        name="urban-block",
        description="One-way corridor route, ~551.4 m, rich geometry on all "
                    "sides.",
        world=world,
        trajectory=traj,
        rig=default_rig(max_range=30.0),
        duration=traj.total_duration,
    )


def _out_and_back() -> SceneSpec:
    traj = _tune_tail([
        straight(175.0, 1.3),
        arc(8.0, 180.0, 1.3),
        straight(175.0, 1.3),
        arc(8.0, 90.0, 1.3),
        straight(45.0, 1.3),
    ], 436.47)
    world = corridor_world(traj, half_width=6.0, pillar_every=6.0,
                           buttress_every=9.0)
    return SceneSpec(
        name="out-and-back",
        description="Out-and-back route, ~436.5 m, ends near the start.",
        world=world,
        trajectory=traj,
        rig=default_rig(max_range=30.0),
        duration=traj.total_duration,
    )


def _wide_boulevard() -> SceneSpec:
    # Half width 10 m against a 12 m range: the wall ring is outside the
    # forward sensor's reach everywhere inside its cone (it would need
    # ~13.2 m), yet comfortably inside the sideways sensors' cones.
    traj = TrajectorySpec([
        straight(60.0, 1.3),
        straight(50.0, 0.9),
        straight(50.0, 1.5),
        straight(38.0, 1.1),
    ])
    world = corridor_world(traj, half_width=10.0, wall_height=3.0,
                           pillar_every=0.0, with_pillars=False,
                           buttress_every=7.0, buttress_depth=0.8,
                           angled_buttresses=True)
    return SceneSpec(
        name="wide-boulevard",
        description="Wide featureless boulevard with speed changes; the "
                    "forward sensor sees only floor and dead-reckons along "
                    "track.",
        world=world,
        trajectory=traj,
        rig=default_rig(max_range=12.0),
        duration=traj.total_duration,
    )


def _courtyard() -> SceneSpec:
    # Serpentine sweep: rows along x joined by 180-degree U-turns, climbing
    # the room, descending, then climbing again.  Turn directions mostly
    # alternate, which cancels the lateral walk the velocity blending
    # introduces, and the constant turning excites the extrinsics early.
    row = 26.0
    segs = [spin(360.0, 30.0), straight(row, 1.3)]
    heading_fwd = True
    for dy in [+1] * 4 + [-1] * 4 + [+1] * 2:
        sign = dy if heading_fwd else -dy
        segs += [arc(3.0, sign * 180.0, 1.3), straight(row, 1.3)]
        heading_fwd = not heading_fwd
    traj = TrajectorySpec(segs, start_xy=(-13.0, -12.0), start_yaw=0.0)
    return SceneSpec(
        name="courtyard",
        description="Enclosed courtyard with dense fixtures and a serpentine "
                    "sweep; the calibration-convergence scene.",
        world=room_world(),
        trajectory=traj,
        rig=default_rig(max_range=30.0),
        duration=traj.total_duration,
    )


_CATALOG: dict[str, SceneSpec] | None = None


def builtin_scenes() -> dict[str, SceneSpec]:
    """Catalog of ready-made scenes, keyed by name (built once, cached)."""
    global _CATALOG
    if _CATALOG is None:
        scenes = [_urban_block(), _out_and_back(), _wide_boulevard(),
                  _courtyard()]
        _CATALOG = {s.name: s for s in scenes}
    return dict(_CATALOG)
