"""Scene files: strict-schema JSON in, Scene objects out.

A scene file pins everything a run needs: carrier frequency, endpoints
(single receiver or a planar grid), meshes with optional rigid
transforms, a material table, and the tracing mode.  Validation is
two-stage: JSON Schema (structure, unknown keys rejected) followed by
semantic checks that need the filesystem or cross-references (mesh
paths, material bindings).  All validation failures raise
SceneValidationError carrying the offending field, so the CLI can map
them to its usage exit code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.spatial.transform import Rotation

from .engine import Scene
from .field import GridSpec, SimulationConfig
from .geometry import Mesh, load_obj
from .materials import Material, builtin_materials
from .pathtracer import WeightMode


class SceneValidationError(ValueError):
    """Scene or document fails schema/semantic validation."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


_SCHEMA_CACHE: dict = {}


def load_schema(name: str) -> dict:
    """Schema document shipped with the package (name without .json)."""
    if name not in _SCHEMA_CACHE:
        ref = resources.files("rfray.schemas").joinpath(f"{name}.json")
        _SCHEMA_CACHE[name] = json.loads(ref.read_text(encoding="utf-8"))
    return _SCHEMA_CACHE[name]


def validate_document(doc, schema_name: str, source: str = "<document>"):
    """Validate against a shipped schema; raise with a field diagnostic."""
    schema = load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise SceneValidationError(
            f"{source}: {e.json_path}: {e.message}", field=e.json_path)


@dataclass
class LoadedScene:
    """Scene plus the receiver request the file carried."""

    scene: Scene
    rx: tuple | None                    # single receiver, or None
    grid: GridSpec | None               # receiver grid, or None
    raw: dict                           # validated source document


def merge_meshes(meshes: list) -> Mesh:
    if len(meshes) == 1:
        return meshes[0]
    verts, tris, ids, names = [], [], [], []
    name_index: dict = {}
    v_off = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + v_off)
        remap = []
        for n in m.material_names:
            if n not in name_index:
                name_index[n] = len(names)
                names.append(n)
            remap.append(name_index[n])
        ids.append(np.asarray([remap[i] for i in m.material_ids],
                              dtype=np.int64))
        v_off += len(m.vertices)
    return Mesh(vertices=np.vstack(verts), triangles=np.vstack(tris),
                material_ids=np.concatenate(ids), material_names=names)


def _apply_transform(mesh: Mesh, spec: dict) -> Mesh:
    # fixed order: scale, then rotate (axis-angle, radians), then translate
    v = mesh.vertices * float(spec.get("scale", 1.0))
    rot = spec.get("rotate")
    if rot is not None and any(c != 0.0 for c in rot):
        v = Rotation.from_rotvec(np.asarray(rot, dtype=float)).apply(v)
    tr = spec.get("translate")
    if tr is not None:
        v = v + np.asarray(tr, dtype=float)
    return Mesh(vertices=v, triangles=mesh.triangles,
                material_ids=mesh.material_ids,
                material_names=list(mesh.material_names))


def _load_mesh_entry(entry: dict, base: Path, index: int) -> Mesh:
    where = f"$.meshes[{index}]"
    path = base / entry["obj_path"]
    if not path.is_file():
        raise SceneValidationError(
            f"{where}.obj_path: no such file: {path}",
            field=f"{where}.obj_path")
    mesh = load_obj(path)
    overrides = entry.get("material_overrides")
    if overrides:
        names = list(mesh.material_names)
        for old, new in overrides.items():
            if old not in names:
                raise SceneValidationError(
                    f"{where}.material_overrides: mesh has no material "
                    f"{old!r} (has {names})",
                    field=f"{where}.material_overrides")
            names[names.index(old)] = new
        mesh = Mesh(vertices=mesh.vertices, triangles=mesh.triangles,
                    material_ids=mesh.material_ids, material_names=names)
    tf = entry.get("transform")
    if tf:
        mesh = _apply_transform(mesh, tf)
    return mesh


def _build_materials(table: dict) -> dict:
    out = dict(builtin_materials())
    for name, spec in table.items():
        out[name] = Material(name=name,
                             eps_re=float(spec.get("eps_re", 1.0)),
                             eps_im=float(spec.get("eps_im", 0.0)),
                             mu_r=float(spec.get("mu_r", 1.0)),
                             sigma=float(spec.get("sigma", 0.0)))
    return out


def load_scene(path) -> LoadedScene:
    """Parse, validate, and assemble a scene file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SceneValidationError(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneValidationError(
            f"{path}: line {exc.lineno}: {exc.msg}") from exc
    validate_document(doc, "scene", source=str(path))

    mode_kind = doc["weight_mode"]
    if mode_kind == "soft" and "soft_k" not in doc:
        raise SceneValidationError(
            f"{path}: $.soft_k: required when weight_mode is \"soft\"",
            field="$.soft_k")
    mode = (WeightMode.soft(float(doc["soft_k"])) if mode_kind == "soft"
            else WeightMode(mode_kind))

    cfg_kwargs = {}
    if "capture_band_lambdas" in doc:
        cfg_kwargs["capture_band_lambdas"] = float(doc["capture_band_lambdas"])
    cfg = SimulationConfig(frequency_hz=float(doc["frequency_hz"]),
                           max_depth=int(doc["max_depth"]),
                           weight_mode=mode, **cfg_kwargs)

    meshes = [_load_mesh_entry(e, path.parent, i)
              for i, e in enumerate(doc["meshes"])]
    mesh = merge_meshes(meshes)
    materials = _build_materials(doc["materials"])
    missing = sorted({mesh.material_names[i] for i in mesh.material_ids}
                     - set(materials))
    if missing:
        raise SceneValidationError(
            f"{path}: $.materials: mesh references undefined materials "
            f"{missing}", field="$.materials")

    scene = Scene(mesh=mesh, materials=materials,
                  tx=tuple(float(c) for c in doc["tx"]), cfg=cfg)

    rx_doc = doc["rx"]
    if isinstance(rx_doc, dict):
        grid = GridSpec(origin=tuple(float(c) for c in rx_doc["origin"]),
                        u_axis=tuple(float(c) for c in rx_doc["u_axis"]),
                        v_axis=tuple(float(c) for c in rx_doc["v_axis"]),
                        nx=int(rx_doc["nx"]), ny=int(rx_doc["ny"]))
        return LoadedScene(scene=scene, rx=None, grid=grid, raw=doc)
    return LoadedScene(scene=scene, rx=tuple(float(c) for c in rx_doc),
                       grid=None, raw=doc)


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, inputs: dict, outputs: dict,
                   seed: int, workers: int, timestamp: str):
    """Command manifest: content hashes of inputs/outputs.

    The timestamp lives in its own field so payload comparisons can
    ignore it; everything else is deterministic.
    """
    from . import __version__
    doc = {
        "command": command,
        "version": __version__,
        "seed": int(seed),
        "workers": int(workers),
        "inputs": {str(k): sha256_of(v) for k, v in sorted(inputs.items())},
        "outputs": {str(k): sha256_of(v) for k, v in sorted(outputs.items())},
        "timestamp": timestamp,
    }
    validate_document(doc, "manifest", source="manifest")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
