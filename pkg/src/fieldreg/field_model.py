"""World-frame description of a planar sports field.

A template lists identified keypoints on the z = 0 plane, the field
boundary, the painted lines (used only for drawing) and an optional pairing
of each keypoint with its image under a 180 degree rotation about the field
center. Templates are JSON documents::

    {
      "format": 1,
      "name": "basketball",
      "units": "meters",
      "center": [14.0, 7.5],
      "keypoints": [{"id": 1, "x": 0.0, "y": 0.0}, ...],
      "boundary": [[0, 0], [28, 0], [28, 15], [0, 15]],
      "lines": [[[0, 0], [28, 0]], ...],
      "symmetry": [[1, 38], [2, 37], ...]
    }

``symmetry`` is either empty (asymmetric field, e.g. with logos) or covers
every keypoint; a keypoint lying on the center pairs with itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
import shapely

from .errors import TemplateError

FORMAT_VERSION = 1
SYMMETRY_TOL = 1e-9
BUILTIN_TEMPLATES = ("basketball", "volleyball", "soccer")


@dataclass(frozen=True)
class FieldTemplate:
    name: str
    keypoints: Mapping[int, tuple[float, float]]
    boundary: tuple[tuple[float, float], ...]
    center: tuple[float, float]
    lines: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = ()
    symmetry_map: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        # freeze the mappings so a template can be shared between readers
        object.__setattr__(self, "keypoints", MappingProxyType(dict(self.keypoints)))
        object.__setattr__(self, "symmetry_map", MappingProxyType(dict(self.symmetry_map)))

    @property
    def ids(self) -> np.ndarray:
        return np.array(sorted(self.keypoints), dtype=int)

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)

    def world_points(self, ids=None) -> np.ndarray:
        """(n, 2) world coordinates for ``ids`` (all keypoints, sorted, by default)."""
        if ids is None:
            ids = self.ids
        return np.array([self.keypoints[int(i)] for i in ids], dtype=float).reshape(-1, 2)

    @property
    def boundary_array(self) -> np.ndarray:
        return np.asarray(self.boundary, dtype=float)

    def boundary_polygon(self) -> shapely.Polygon:
        return shapely.Polygon(self.boundary)

    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the boundary."""
        b = self.boundary_array
        return float(b[:, 0].min()), float(b[:, 1].min()), float(b[:, 0].max()), float(b[:, 1].max())

    def rotate_180(self, points) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return 2.0 * c - np.asarray(points, dtype=float)

    @property
    def is_symmetric(self) -> bool:
        return bool(self.symmetry_map)

    def partner(self, kid: int) -> int:
        try:
            return self.symmetry_map[int(kid)]
        except KeyError:
            raise TemplateError(f"keypoint id {kid} has no symmetric partner in template {self.name!r}") from None


def _pair(value, what) -> tuple[float, float]:
    try:
        x, y = value
        return float(x), float(y)
    except (TypeError, ValueError):
        raise TemplateError(f"malformed {what}: {value!r}") from None


def validate_template(tpl: FieldTemplate) -> FieldTemplate:
    """Check every template invariant; returns the template unchanged."""
    if len(tpl.keypoints) < 4:
        raise TemplateError(f"template needs at least 4 keypoints, got {len(tpl.keypoints)}")
    for kid, (x, y) in tpl.keypoints.items():
        if isinstance(kid, bool) or not isinstance(kid, (int, np.integer)) or kid < 1:
            raise TemplateError(f"keypoint ids must be integers >= 1 (0 is reserved), got {kid!r}")
        if not (np.isfinite(x) and np.isfinite(y)):
            raise TemplateError(f"keypoint {kid} has non-finite coordinates")

    pts = tpl.world_points()
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise TemplateError("keypoints are collinear")

    if len(tpl.boundary) < 3:
        raise TemplateError("boundary needs at least 3 vertices")
    ring = shapely.LinearRing(tpl.boundary)
    if not ring.is_simple:
        raise TemplateError("boundary polygon self-intersects")
    if shapely.Polygon(tpl.boundary).area <= 0:
        raise TemplateError("boundary polygon has zero area")

    sym = tpl.symmetry_map
    if sym:
        missing = set(tpl.keypoints) - set(sym)
        if missing:
            raise TemplateError(f"symmetry map does not cover keypoints {sorted(missing)}")
        for a, b in sym.items():
            if b not in tpl.keypoints or a not in tpl.keypoints:
                raise TemplateError(f"symmetry pair ({a}, {b}) references an unknown keypoint")
            if sym.get(b) != a:
                raise TemplateError(f"symmetry map is not an involution at id {a}")
            rotated = tpl.rotate_180(tpl.keypoints[a])
            if np.max(np.abs(rotated - np.asarray(tpl.keypoints[b]))) > SYMMETRY_TOL:
                raise TemplateError(
                    f"keypoints {a} and {b} are not related by a 180 degree rotation about {tpl.center}"
                )
    return tpl


def template_from_dict(doc: Mapping[str, Any]) -> FieldTemplate:
    if not isinstance(doc, Mapping):
        raise TemplateError("template document must be a JSON object")
    fmt = doc.get("format")
    if fmt != FORMAT_VERSION:
        raise TemplateError(f"unsupported template format {fmt!r} (expected {FORMAT_VERSION})")
    units = doc.get("units", "meters")
    if units != "meters":
        raise TemplateError(f"unsupported units {units!r}; templates are in meters")

    keypoints: dict[int, tuple[float, float]] = {}
    for entry in doc.get("keypoints", []):
        try:
            kid = entry["id"]
            xy = (entry["x"], entry["y"])
        except (KeyError, TypeError):
            raise TemplateError(f"malformed keypoint entry {entry!r}") from None
        if entry.get("z", 0.0) != 0.0:
            raise TemplateError(f"keypoint {kid} is off the field plane (z != 0)")
        if not isinstance(kid, int) or isinstance(kid, bool):
            raise TemplateError(f"keypoint id must be an integer, got {kid!r}")
        if kid in keypoints:
            raise TemplateError(f"duplicate keypoint id {kid}")
        keypoints[kid] = _pair(xy, f"keypoint {kid}")

    boundary = tuple(_pair(v, "boundary vertex") for v in doc.get("boundary", []))
    if "center" in doc:
        center = _pair(doc["center"], "center")
    elif boundary:
        c = shapely.Polygon(boundary).centroid
        center = (float(c.x), float(c.y))
    else:
        center = (0.0, 0.0)
    lines = tuple((_pair(a, "line endpoint"), _pair(b, "line endpoint")) for a, b in doc.get("lines", []))

    symmetry: dict[int, int] = {}
    for pair in doc.get("symmetry", []):
        a, b = (int(v) for v in pair)
        for src, dst in ((a, b), (b, a)):
            if symmetry.get(src, dst) != dst:
                raise TemplateError(f"symmetry map is not an involution at id {src}")
            symmetry[src] = dst

    tpl = FieldTemplate(
        name=str(doc.get("name", "field")),
        keypoints=keypoints,
        boundary=boundary,
        center=center,
        lines=lines,
        symmetry_map=symmetry,
    )
    return validate_template(tpl)


def template_to_dict(tpl: FieldTemplate) -> dict[str, Any]:
    pairs = sorted({tuple(sorted((a, b))) for a, b in tpl.symmetry_map.items()})
    return {
        "format": FORMAT_VERSION,
        "name": tpl.name,
        "units": "meters",
        "center": list(tpl.center),
        "keypoints": [{"id": int(k), "x": x, "y": y} for k, (x, y) in sorted(tpl.keypoints.items())],
        "boundary": [list(v) for v in tpl.boundary],
        "lines": [[list(a), list(b)] for a, b in tpl.lines],
        "symmetry": [list(p) for p in pairs],
    }


def load_template(source) -> FieldTemplate:
    """Load a template from a dict, a JSON string, a file path or a built-in name."""
    if isinstance(source, Mapping):
        return template_from_dict(source)
    if isinstance(source, str) and source in BUILTIN_TEMPLATES:
        text = resources.files("fieldreg").joinpath("templates", f"{source}.json").read_text()
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise TemplateError(f"cannot read template {source}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TemplateError(f"template does not parse: {exc}") from None
    return template_from_dict(doc)


def dump_template(tpl: FieldTemplate) -> str:
    return json.dumps(template_to_dict(tpl), indent=1)


def swap_symmetric_identities(template: FieldTemplate, corrs):
    """Relabel every semantic correspondence with its symmetric partner.

    The world point follows the new identity. Player correspondences are
    untouched. Swapping twice returns the input.
    """
    from .geometry.types import Correspondences

    if not template.is_symmetric:
        if np.any(corrs.ids > 0):
            raise TemplateError(f"template {template.name!r} has no symmetry map")
        return corrs
    ids = corrs.ids.copy()
    world = corrs.world.copy()
    for i, kid in enumerate(corrs.ids):
        if kid > 0:
            new = template.partner(int(kid))
            ids[i] = new
            world[i] = template.keypoints[new]
    return Correspondences(world=world, image=corrs.image.copy(), ids=ids)


def validate_player_positions(template: FieldTemplate, positions, margin: float = 5.0) -> np.ndarray:
    """Return ``positions`` as an (n, 2) array after checking they lie on or near the field."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise TemplateError("player positions must be finite")
    if len(pts):
        area = template.boundary_polygon().buffer(margin)
        inside = shapely.contains_xy(area, pts[:, 0], pts[:, 1]) | shapely.intersects_xy(area, pts[:, 0], pts[:, 1])
        if not np.all(inside):
            bad = pts[~inside][0]
            raise TemplateError(f"player position {tuple(bad)} is more than {margin} m outside the field")
    return pts
