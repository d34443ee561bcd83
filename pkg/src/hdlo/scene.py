"""Scene, goal and result files.

Scene files are single-document YAML, schema-versioned, parsed strictly
(unknown keys are rejected) into a validated Assembly plus the aperture
list.  Goal files describe an end-effector target either in world
coordinates or relative to the start equilibrium.  Result files are
self-describing YAML documents with full double-precision numerics so they
can serve as golden files and as inputs to the compare command.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from hdlo import assembly as am
from hdlo import envcon as ec
from hdlo import liegroup as lg
from hdlo import rod
from hdlo import statics as st
from hdlo.errors import SceneError

SCENE_SCHEMA = "hdlo-scene/1"
GOAL_SCHEMA = "hdlo-goal/1"
RESULT_SCHEMA = "hdlo-result/1"

_CLOSURE_MASKS = {
    "fixed": am.FIXED_CLOSURE_MASK,
    "spherical": am.SPHERICAL_CLOSURE_MASK,
}


def _check_keys(doc: dict, allowed, required, where: str) -> None:
    if not isinstance(doc, dict):
        raise SceneError(f"{where}: expected a mapping, got {type(doc).__name__}")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise SceneError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(doc)
    if missing:
        raise SceneError(f"{where}: missing required keys {sorted(missing)}")


def _vector(value, n: int, where: str) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SceneError(f"{where}: not numeric ({exc})")
    if v.shape != (n,):
        raise SceneError(f"{where}: expected {n} numbers, got shape {v.shape}")
    return v


def _number(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SceneError(f"{where}: expected a number, got {value!r}")
    return float(value)


def parse_pose(doc: Optional[dict], where: str) -> lg.Pose:
    """{translation: [x,y,z], rpy: [r,p,y]} (radians, extrinsic xyz)."""
    if doc is None:
        return lg.Pose.identity()
    _check_keys(doc, {"translation", "rpy"}, set(), where)
    t = _vector(doc.get("translation", (0.0, 0.0, 0.0)), 3, f"{where}.translation")
    rpy = _vector(doc.get("rpy", (0.0, 0.0, 0.0)), 3, f"{where}.rpy")
    R = Rotation.from_euler("xyz", rpy).as_matrix()
    return lg.Pose(R, t)


def pose_doc(g: lg.Pose) -> dict:
    rpy = Rotation.from_matrix(g.rotation).as_euler("xyz")
    return {"translation": g.translation.tolist(), "rpy": rpy.tolist()}


def _parse_material(doc, where: str) -> rod.Material:
    _check_keys(doc, {"youngs_modulus", "poisson_ratio", "density"},
                {"youngs_modulus", "poisson_ratio", "density"}, where)
    try:
        return rod.Material(
            _number(doc["youngs_modulus"], f"{where}.youngs_modulus"),
            _number(doc["poisson_ratio"], f"{where}.poisson_ratio"),
            _number(doc["density"], f"{where}.density"),
        )
    except ValueError as exc:
        raise SceneError(f"{where}: {exc}")


def _parse_cross_section(doc, where: str):
    _check_keys(doc, {"type", "outer_diameter", "inner_diameter", "diameter", "thickness"},
                {"type"}, where)
    kind = doc["type"]
    try:
        if kind == "tube":
            return rod.Tube(
                _number(doc["outer_diameter"], f"{where}.outer_diameter"),
                _number(doc.get("inner_diameter", 0.0), f"{where}.inner_diameter"),
            )
        if kind == "disk":
            return rod.Disk(
                _number(doc["diameter"], f"{where}.diameter"),
                _number(doc.get("thickness", 0.0), f"{where}.thickness"),
            )
    except KeyError as exc:
        raise SceneError(f"{where}: missing {exc}")
    raise SceneError(f"{where}.type: unknown cross-section type {kind!r}")


def _parse_joint(doc, where: str) -> am.JointSpec:
    _check_keys(doc, {"kind", "axis", "actuated", "limits"}, {"kind"}, where)
    kind = doc["kind"]
    if kind not in ("fixed", "revolute", "prismatic", "spherical", "free6"):
        raise SceneError(f"{where}.kind: unknown joint kind {kind!r}")
    axis = None
    if kind in ("revolute", "prismatic"):
        if "axis" not in doc:
            raise SceneError(f"{where}: {kind} joint needs an axis")
        axis = _vector(doc["axis"], 3, f"{where}.axis")
        n = float(np.linalg.norm(axis))
        if n == 0.0:
            raise SceneError(f"{where}.axis: zero axis")
        axis = axis / n
    elif "axis" in doc:
        raise SceneError(f"{where}: axis is only valid for revolute/prismatic joints")
    limits = None
    if "limits" in doc and doc["limits"] is not None:
        limits = np.asarray(doc["limits"], dtype=float)
        dof = am._JOINT_DOF[kind]
        if limits.shape != (dof, 2):
            raise SceneError(f"{where}.limits: expected shape ({dof}, 2), got {limits.shape}")
    return am.JointSpec(kind=kind, axis=axis, actuated=bool(doc.get("actuated", False)), limits=limits)


def _parse_link(doc, index: int, name_to_index: Dict[str, int], materials: Dict[str, rod.Material]) -> am.Link:
    where = f"links[{index}]"
    _check_keys(
        doc,
        {"name", "parent", "joint", "kind", "length", "cross_section", "material",
         "mass", "basis_orders", "mount", "n_p"},
        {"name", "joint", "kind", "length", "cross_section", "material"},
        where,
    )
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise SceneError(f"{where}.name: expected a non-empty string")
    parent_name = doc.get("parent")
    if parent_name is None:
        parent = -1
    else:
        if parent_name not in name_to_index:
            raise SceneError(f"{where}.parent: unknown link {parent_name!r} "
                             "(parents must be declared earlier)")
        parent = name_to_index[parent_name]
    kind = doc["kind"]
    if kind not in ("rigid", "deformable"):
        raise SceneError(f"{where}.kind: expected 'rigid' or 'deformable', got {kind!r}")

    mat = doc["material"]
    if isinstance(mat, str):
        if mat not in materials:
            raise SceneError(f"{where}.material: unknown material {mat!r}")
        material = materials[mat]
    else:
        material = _parse_material(mat, f"{where}.material")

    mass = doc.get("mass")
    if mass is not None:
        mass = _number(mass, f"{where}.mass")
    try:
        geometry = rod.LinkGeometry(
            _number(doc["length"], f"{where}.length"),
            _parse_cross_section(doc["cross_section"], f"{where}.cross_section"),
            material,
            kind=kind,
            mass=mass,
        )
    except ValueError as exc:
        raise SceneError(f"{where}: {exc}")

    basis = None
    if kind == "deformable":
        orders = doc.get("basis_orders")
        if orders is None:
            raise SceneError(f"{where}: deformable links need basis_orders")
        orders = tuple(int(o) for o in orders)
        if len(orders) != 6 or any(o < 0 for o in orders):
            raise SceneError(f"{where}.basis_orders: expected 6 nonnegative integers")
        basis = rod.StrainBasis(orders)
    elif "basis_orders" in doc:
        raise SceneError(f"{where}: basis_orders is only valid for deformable links")

    n_p = doc.get("n_p")
    if n_p is not None:
        n_p = int(n_p)
    return am.Link(
        name=name,
        parent=parent,
        joint=_parse_joint(doc["joint"], f"{where}.joint"),
        geometry=geometry,
        mount=parse_pose(doc.get("mount"), f"{where}.mount"),
        basis=basis,
        n_p=n_p,
    )


def _resolve_link(name, name_to_index: Dict[str, int], where: str) -> int:
    if name not in name_to_index:
        raise SceneError(f"{where}: unknown link {name!r}")
    return name_to_index[name]


def _parse_mask(value, where: str):
    if isinstance(value, str):
        if value not in _CLOSURE_MASKS:
            raise SceneError(f"{where}: unknown mask {value!r} (use 'fixed', "
                             "'spherical' or a list of 6 booleans)")
        return _CLOSURE_MASKS[value]
    mask = tuple(bool(b) for b in value)
    if len(mask) != 6 or not any(mask):
        raise SceneError(f"{where}: mask must be 6 booleans with at least one set")
    return mask


def _parse_closure(doc, index: int, name_to_index: Dict[str, int]):
    where = f"closures[{index}]"
    _check_keys(
        doc,
        {"link_a", "link_b", "x_a", "x_b", "offset_a", "offset_b", "mask", "bake_at_zero"},
        {"link_a", "link_b"},
        where,
    )
    bake = bool(doc.get("bake_at_zero", False))
    if bake and "offset_b" in doc:
        raise SceneError(f"{where}: offset_b and bake_at_zero are mutually exclusive")
    closure = am.Closure(
        link_a=_resolve_link(doc["link_a"], name_to_index, f"{where}.link_a"),
        link_b=_resolve_link(doc["link_b"], name_to_index, f"{where}.link_b"),
        x_a=None if doc.get("x_a") is None else float(doc["x_a"]),
        x_b=None if doc.get("x_b") is None else float(doc["x_b"]),
        offset_a=parse_pose(doc.get("offset_a"), f"{where}.offset_a"),
        offset_b=parse_pose(doc.get("offset_b"), f"{where}.offset_b"),
        mask=_parse_mask(doc.get("mask", "fixed"), f"{where}.mask"),
    )
    return closure, bake


def _parse_aperture(doc, index: int, name_to_index: Dict[str, int]) -> ec.Aperture:
    where = f"apertures[{index}]"
    _check_keys(doc, {"center", "plane_z", "radius", "link"},
                {"center", "plane_z", "radius", "link"}, where)
    return ec.Aperture(
        center=_vector(doc["center"], 2, f"{where}.center"),
        plane_z=_number(doc["plane_z"], f"{where}.plane_z"),
        radius=_number(doc["radius"], f"{where}.radius"),
        link=_resolve_link(doc["link"], name_to_index, f"{where}.link"),
    )


def _bake_closure(links: List[am.Link], closure: am.Closure, n_p: int) -> am.Closure:
    """Replace offset_b so the closure is satisfied exactly at q = 0."""
    asm0 = am.Assembly(links, [], n_p=n_p)
    cache0 = am.forward_kinematics(asm0, np.zeros(asm0.n_d))
    gA, _, _ = am.frame_kinematics(asm0, cache0, closure.link_a, closure.x_a)
    gB, _, _ = am.frame_kinematics(asm0, cache0, closure.link_b, closure.x_b)
    offset_b = gB.inverse() @ (gA @ closure.offset_a)
    return am.Closure(
        link_a=closure.link_a,
        link_b=closure.link_b,
        x_a=closure.x_a,
        x_b=closure.x_b,
        offset_a=closure.offset_a,
        offset_b=offset_b,
        mask=closure.mask,
    )


@dataclass
class Scene:
    name: str
    assembly: am.Assembly
    apertures: List[ec.Aperture]
    path: Optional[str] = None
    sha256: Optional[str] = None
    link_names: List[str] = field(default_factory=list)


def parse_scene(doc: dict, path: Optional[str] = None, sha256: Optional[str] = None) -> Scene:
    _check_keys(
        doc,
        {"schema", "name", "gravity", "n_p", "materials", "links", "closures",
         "apertures", "end_effector", "_templates"},
        {"schema", "name", "links"},
        "scene",
    )
    if doc["schema"] != SCENE_SCHEMA:
        raise SceneError(f"scene.schema: expected {SCENE_SCHEMA!r}, got {doc['schema']!r}")

    materials: Dict[str, rod.Material] = {}
    for mname, mdoc in (doc.get("materials") or {}).items():
        materials[mname] = _parse_material(mdoc, f"materials.{mname}")

    if not isinstance(doc["links"], list) or not doc["links"]:
        raise SceneError("scene.links: expected a non-empty list")
    links: List[am.Link] = []
    name_to_index: Dict[str, int] = {}
    for i, ldoc in enumerate(doc["links"]):
        link = _parse_link(ldoc, i, name_to_index, materials)
        if link.name in name_to_index:
            raise SceneError(f"links[{i}].name: duplicate name {link.name!r}")
        name_to_index[link.name] = i
        links.append(link)

    n_p = int(doc.get("n_p", 21))
    closures: List[am.Closure] = []
    for i, cdoc in enumerate(doc.get("closures") or []):
        closure, bake = _parse_closure(cdoc, i, name_to_index)
        if bake:
            closure = _bake_closure(links, closure, n_p)
        closures.append(closure)

    ee = None
    if doc.get("end_effector") is not None:
        edoc = doc["end_effector"]
        _check_keys(edoc, {"link", "x", "offset"}, {"link"}, "end_effector")
        ee = am.EndEffector(
            link=_resolve_link(edoc["link"], name_to_index, "end_effector.link"),
            x=None if edoc.get("x") is None else float(edoc["x"]),
            offset=parse_pose(edoc.get("offset"), "end_effector.offset"),
        )

    gravity = _vector(doc.get("gravity", (0.0, 0.0, -9.81)), 3, "scene.gravity")
    asm = am.Assembly(links, closures, end_effector=ee, gravity=gravity, n_p=n_p)
    am.validate(asm)

    apertures = [_parse_aperture(a, i, name_to_index)
                 for i, a in enumerate(doc.get("apertures") or [])]
    ec.validate_apertures(asm, apertures)

    return Scene(
        name=str(doc["name"]),
        assembly=asm,
        apertures=apertures,
        path=path,
        sha256=sha256,
        link_names=[l.name for l in links],
    )


def _load_yaml(path: str, what: str) -> dict:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise SceneError(f"cannot read {what} file {path!r}: {exc}")
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise SceneError(f"{what} file {path!r} is not valid YAML: {exc}")
    if not isinstance(doc, dict):
        raise SceneError(f"{what} file {path!r}: expected a single mapping document")
    return doc


def load_scene(path: str, n_p_override: Optional[int] = None) -> Scene:
    doc = _load_yaml(path, "scene")
    if n_p_override is not None:
        doc = dict(doc)
        doc["n_p"] = int(n_p_override)
    sha = hashlib.sha256(open(path, "rb").read()).hexdigest()
    return parse_scene(doc, path=path, sha256=sha)


# ---------------------------------------------------------------------------
# goals


@dataclass
class GoalSpec:
    kind: str  # "position" | "full_pose"
    frame: str  # "world" | "relative"
    translation: np.ndarray
    rpy: np.ndarray
    q_a_start: Optional[np.ndarray] = None


def load_goal(path: str) -> GoalSpec:
    doc = _load_yaml(path, "goal")
    _check_keys(doc, {"schema", "kind", "frame", "translation", "rpy", "q_a_start"},
                {"schema", "kind", "translation"}, "goal")
    if doc["schema"] != GOAL_SCHEMA:
        raise SceneError(f"goal.schema: expected {GOAL_SCHEMA!r}, got {doc['schema']!r}")
    kind = doc["kind"]
    if kind not in ("position", "full_pose"):
        raise SceneError(f"goal.kind: expected 'position' or 'full_pose', got {kind!r}")
    frame = doc.get("frame", "world")
    if frame not in ("world", "relative"):
        raise SceneError(f"goal.frame: expected 'world' or 'relative', got {frame!r}")
    if kind == "position" and "rpy" in doc:
        raise SceneError("goal.rpy: only valid for full_pose goals")
    q_a_start = doc.get("q_a_start")
    if q_a_start is not None:
        q_a_start = np.asarray(q_a_start, dtype=float)
    return GoalSpec(
        kind=kind,
        frame=frame,
        translation=_vector(doc["translation"], 3, "goal.translation"),
        rpy=_vector(doc.get("rpy", (0.0, 0.0, 0.0)), 3, "goal.rpy"),
        q_a_start=q_a_start,
    )


def resolve_goal(asm: am.Assembly, start_state: st.EquilibriumState, spec: GoalSpec):
    """Turn a goal spec into a planner Goal; relative goals compose the
    offset with the end-effector pose at the start equilibrium."""
    from hdlo import planners as pl

    R = Rotation.from_euler("xyz", spec.rpy).as_matrix()
    if spec.frame == "world":
        if spec.kind == "position":
            return pl.Goal("position", spec.translation)
        return pl.Goal("full_pose", lg.Pose(R, spec.translation))
    base = am.end_effector_pose(asm, am.forward_kinematics(asm, start_state.q))
    if spec.kind == "position":
        return pl.Goal("position", base.translation + spec.translation)
    return pl.Goal("full_pose", lg.Pose(base.rotation @ R, base.translation + spec.translation))


# ---------------------------------------------------------------------------
# result files


def as_plain(obj):
    """Recursively convert numpy containers/scalars to plain Python."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: as_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [as_plain(v) for v in obj]
    return obj


def marker_positions(asm: am.Assembly, cache: am.KinematicsCache) -> np.ndarray:
    """(n_markers, 3) world positions of all deformable computation frames.

    Falls back to the end-effector position for rigid-only scenes so every
    result has at least one marker.
    """
    pts = []
    for i, link in enumerate(asm.links):
        if link.deformable:
            pts.extend(g.translation for g in cache.frames[i].poses)
    if not pts:
        pts = [am.end_effector_pose(asm, cache).translation]
    return np.array(pts)


def state_doc(asm: am.Assembly, state: st.EquilibriumState, x_daggers=None) -> dict:
    cache = am.forward_kinematics(asm, state.q)
    doc = {
        "q": state.q.tolist(),
        "u": state.u.tolist(),
        "lambda_bar": state.lambda_bar.tolist(),
        "residual": float(st.residual_norm(asm, state, cache)),
        "end_effector": pose_doc(am.end_effector_pose(asm, cache)),
        "markers": marker_positions(asm, cache).tolist(),
    }
    if x_daggers is not None:
        doc["x_daggers"] = np.asarray(x_daggers, dtype=float).tolist()
    return doc


def result_doc(command: str, scene: Scene, options: dict, states: list,
               metrics: dict, seed: Optional[int] = None) -> dict:
    return as_plain({
        "schema": RESULT_SCHEMA,
        "command": command,
        "scene": {"name": scene.name, "path": scene.path, "sha256": scene.sha256},
        "options": options,
        "seed": seed,
        "states": states,
        "metrics": metrics,
    })


def write_result(path: str, doc: dict) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, default_flow_style=None, sort_keys=False)


def load_result(path: str) -> dict:
    doc = _load_yaml(path, "result")
    if doc.get("schema") != RESULT_SCHEMA:
        raise SceneError(f"result file {path!r}: schema {doc.get('schema')!r} "
                         f"!= {RESULT_SCHEMA!r}")
    return doc
