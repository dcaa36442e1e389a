"""Manhattan-grid city geometry: construction, serialization, and ray queries.

Coordinate convention: x runs along the streets (azimuth 0), z is up, the
ground is the plane z = 0.  Buildings are axis-aligned boxes on a regular
grid.  Each wall face is tessellated into scattering tiles; every building
contributes 4 horizontal roof edges and 4 vertical corner edges as
diffracting wedges (exterior angle 270 deg, n = 1.5).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

#: Sentinel face id for the infinite ground plane (z = 0).
GROUND_FACE = -1

_EPS = 1e-12


@dataclass(frozen=True)
class MaterialParams:
    """Electromagnetic surface parameters shared by walls and ground.

    Defaults are concrete-like values at 3 GHz; `scattering_coefficient`
    is the amplitude fraction S diverted from specular into diffuse
    scattering.
    """

    rel_permittivity: float = 5.31
    conductivity: float = 0.079
    scattering_coefficient: float = 0.4

    def validate(self) -> None:
        if self.rel_permittivity < 1.0:
            raise ValueError("material.rel_permittivity must be >= 1")
        if self.conductivity < 0.0:
            raise ValueError("material.conductivity must be >= 0")
        if not 0.0 <= self.scattering_coefficient <= 1.0:
            raise ValueError("material.scattering_coefficient must be in [0, 1]")


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the regular block grid."""

    block_size_x: float = 40.0
    block_size_y: float = 30.0
    street_width: float = 20.0
    building_height: float = 20.0
    blocks_x: int = 3
    blocks_y: int = 3
    tile_size: float = 5.0
    material: MaterialParams = field(default_factory=MaterialParams)
    frequency: float = 3e9
    tile_roofs: bool = False

    def validate(self) -> None:
        for name in ("block_size_x", "block_size_y", "street_width",
                     "building_height", "tile_size", "frequency"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        for name in ("blocks_x", "blocks_y"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        min_wall = min(self.block_size_x, self.block_size_y, self.building_height)
        if self.tile_size > min_wall:
            raise ValueError("tile_size must not exceed the smallest wall dimension")
        self.material.validate()

    @property
    def wavelength(self) -> float:
        return 299792458.0 / self.frequency


@dataclass(frozen=True)
class Face:
    """Planar rectangle with an outward unit normal.

    Points on the face are origin + u*u_axis + v*v_axis with
    u in [0, u_len], v in [0, v_len].
    """

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    u_len: float
    v_len: float
    normal: np.ndarray
    building: int
    kind: str  # "wall" | "roof"

    @property
    def area(self) -> float:
        return self.u_len * self.v_len

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * self.u_len * self.u_axis + 0.5 * self.v_len * self.v_axis


@dataclass(frozen=True)
class Wedge:
    """Straight diffracting edge between two faces of a building.

    `n_param` is the exterior wedge angle divided by pi (1.5 for the
    right-angle building edges).  `tangent0` points from the edge into
    face 0; diffraction angles are measured from face 0 through the
    exterior region.
    """

    p0: np.ndarray
    p1: np.ndarray
    face0: int
    face1: int
    n_param: float
    edge_dir: np.ndarray
    tangent0: np.ndarray
    tangent1: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))


@dataclass(frozen=True)
class Tile:
    """Scattering tile on a wall face; edge tiles carry their true area."""

    center: np.ndarray
    normal: np.ndarray
    area: float
    face: int


class UniformGridIndex:
    """2D uniform grid over building footprints, cell size = street width."""

    def __init__(self, buildings: np.ndarray, cell_size: float):
        self.cell_size = float(cell_size)
        if len(buildings) == 0:
            self.origin = np.zeros(2)
            self.shape = (1, 1)
            self.cells: list[list[int]] = [[]]
            return
        lo = buildings[:, 0, :2].min(axis=0) - 1e-9
        hi = buildings[:, 1, :2].max(axis=0) + 1e-9
        self.origin = lo
        nx = max(1, int(math.ceil((hi[0] - lo[0]) / self.cell_size)))
        ny = max(1, int(math.ceil((hi[1] - lo[1]) / self.cell_size)))
        self.shape = (nx, ny)
        self.cells = [[] for _ in range(nx * ny)]
        for b, box in enumerate(buildings):
            i0, j0 = self._cell_of(box[0, :2])
            i1, j1 = self._cell_of(box[1, :2])
            for i in range(max(i0, 0), min(i1, nx - 1) + 1):
                for j in range(max(j0, 0), min(j1, ny - 1) + 1):
                    self.cells[i * ny + j].append(b)

    def _cell_of(self, xy: np.ndarray) -> tuple[int, int]:
        c = (xy - self.origin) / self.cell_size
        return int(math.floor(c[0])), int(math.floor(c[1]))

    def candidates(self, p0: np.ndarray, p1: np.ndarray) -> list[int]:
        """Building indices whose grid cells overlap the segment's xy AABB."""
        nx, ny = self.shape
        lo = np.minimum(p0[:2], p1[:2])
        hi = np.maximum(p0[:2], p1[:2])
        i0, j0 = self._cell_of(lo)
        i1, j1 = self._cell_of(hi)
        i0, i1 = max(i0, 0), min(i1, nx - 1)
        j0, j1 = max(j0, 0), min(j1, ny - 1)
        if i0 > i1 or j0 > j1:
            return []
        out: set[int] = set()
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                out.update(self.cells[i * ny + j])
        return sorted(out)


@dataclass
class Scene:
    """Immutable city geometry plus packed arrays for vectorized queries."""

    config: SceneConfig
    buildings: np.ndarray          # (B, 2, 3) min/max corners
    faces: list[Face]
    wedges: list[Wedge]
    tiles: list[Tile]
    spatial_index: UniformGridIndex

    # packed face arrays (walls + roofs), filled by build_manhattan
    face_origin: np.ndarray = field(default=None, repr=False)
    face_u: np.ndarray = field(default=None, repr=False)
    face_v: np.ndarray = field(default=None, repr=False)
    face_ulen: np.ndarray = field(default=None, repr=False)
    face_vlen: np.ndarray = field(default=None, repr=False)
    face_normal: np.ndarray = field(default=None, repr=False)
    face_is_wall: np.ndarray = field(default=None, repr=False)
    tile_center: np.ndarray = field(default=None, repr=False)
    tile_normal: np.ndarray = field(default=None, repr=False)
    tile_area: np.ndarray = field(default=None, repr=False)
    tile_face: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.face_origin is None:
            self._pack()

    def _pack(self) -> None:
        f = self.faces
        self.face_origin = np.array([x.origin for x in f]).reshape(-1, 3)
        self.face_u = np.array([x.u_axis for x in f]).reshape(-1, 3)
        self.face_v = np.array([x.v_axis for x in f]).reshape(-1, 3)
        self.face_ulen = np.array([x.u_len for x in f], dtype=float)
        self.face_vlen = np.array([x.v_len for x in f], dtype=float)
        self.face_normal = np.array([x.normal for x in f]).reshape(-1, 3)
        self.face_is_wall = np.array([x.kind == "wall" for x in f], dtype=bool)
        t = self.tiles
        self.tile_center = np.array([x.center for x in t]).reshape(-1, 3)
        self.tile_normal = np.array([x.normal for x in t]).reshape(-1, 3)
        self.tile_area = np.array([x.area for x in t], dtype=float)
        self.tile_face = np.array([x.face for x in t], dtype=int)

    @property
    def extent(self) -> tuple[float, float]:
        c = self.config
        return (c.blocks_x * c.block_size_x + (c.blocks_x - 1) * c.street_width,
                c.blocks_y * c.block_size_y + (c.blocks_y - 1) * c.street_width)

    @property
    def center(self) -> np.ndarray:
        ex, ey = self.extent
        return np.array([0.5 * ex, 0.5 * ey, 0.0])

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_plane(self, face_id: int) -> tuple[np.ndarray, np.ndarray]:
        """(point, outward normal) of a face plane; GROUND_FACE is z = 0."""
        if face_id == GROUND_FACE:
            return np.zeros(3), np.array([0.0, 0.0, 1.0])
        f = self.faces[face_id]
        return f.origin, f.normal


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _tile_edges(length: float, tile: float) -> list[tuple[float, float]]:
    """Split [0, length] into tile-sized intervals; the last may be shorter."""
    n = int(math.ceil(length / tile - 1e-12))
    out = []
    for i in range(n):
        a = i * tile
        b = min((i + 1) * tile, length)
        out.append((a, b))
    return out


def build_manhattan(config: SceneConfig) -> Scene:
    """Lay out the regular block grid and enumerate faces, wedges and tiles."""
    config.validate()
    bx, by = config.block_size_x, config.block_size_y
    sw, h = config.street_width, config.building_height

    buildings = []
    for i in range(config.blocks_x):
        for j in range(config.blocks_y):
            x0 = i * (bx + sw)
            y0 = j * (by + sw)
            buildings.append([[x0, y0, 0.0], [x0 + bx, y0 + by, h]])
    buildings = np.array(buildings, dtype=float)

    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])

    faces: list[Face] = []
    wedges: list[Wedge] = []
    for b, box in enumerate(buildings):
        (x0, y0, _), (x1, y1, _) = box
        # wall faces: u runs horizontally along the wall, v runs up
        south = Face(np.array([x0, y0, 0.0]), ex, ez, x1 - x0, h, -ey, b, "wall")
        north = Face(np.array([x1, y1, 0.0]), -ex, ez, x1 - x0, h, ey, b, "wall")
        west = Face(np.array([x0, y1, 0.0]), -ey, ez, y1 - y0, h, -ex, b, "wall")
        east = Face(np.array([x1, y0, 0.0]), ey, ez, y1 - y0, h, ex, b, "wall")
        roof = Face(np.array([x0, y0, h]), ex, ey, x1 - x0, y1 - y0, ez, b, "roof")
        base = len(faces)
        faces.extend([south, north, west, east, roof])
        i_s, i_n, i_w, i_e, i_r = base, base + 1, base + 2, base + 3, base + 4

        def _wedge(p0, p1, fa, fb):
            return _make_wedge(np.asarray(p0, float), np.asarray(p1, float),
                               fa, fb, faces)

        # 4 roof edges (wall, roof)
        wedges.append(_wedge([x0, y0, h], [x1, y0, h], i_s, i_r))
        wedges.append(_wedge([x0, y1, h], [x1, y1, h], i_n, i_r))
        wedges.append(_wedge([x0, y0, h], [x0, y1, h], i_w, i_r))
        wedges.append(_wedge([x1, y0, h], [x1, y1, h], i_e, i_r))
        # 4 vertical corner edges (wall, wall)
        wedges.append(_wedge([x0, y0, 0.0], [x0, y0, h], i_s, i_w))
        wedges.append(_wedge([x1, y0, 0.0], [x1, y0, h], i_s, i_e))
        wedges.append(_wedge([x0, y1, 0.0], [x0, y1, h], i_n, i_w))
        wedges.append(_wedge([x1, y1, 0.0], [x1, y1, h], i_n, i_e))

    tiles: list[Tile] = []
    for fi, f in enumerate(faces):
        if f.kind == "roof" and not config.tile_roofs:
            continue
        for (u0, u1) in _tile_edges(f.u_len, config.tile_size):
            for (v0, v1) in _tile_edges(f.v_len, config.tile_size):
                cu, cv = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
                center = f.origin + cu * f.u_axis + cv * f.v_axis
                tiles.append(Tile(center, f.normal, (u1 - u0) * (v1 - v0), fi))

    index = UniformGridIndex(buildings, sw)
    return Scene(config, buildings, faces, wedges, tiles, index)


def _make_wedge(p0: np.ndarray, p1: np.ndarray, f0: int, f1: int,
                faces: list[Face]) -> Wedge:
    edge_dir = p1 - p0
    edge_dir = edge_dir / np.linalg.norm(edge_dir)
    mid = 0.5 * (p0 + p1)

    def _tangent(fi: int) -> np.ndarray:
        t = faces[fi].center - mid
        t = t - np.dot(t, edge_dir) * edge_dir
        return t / np.linalg.norm(t)

    t0, t1 = _tangent(f0), _tangent(f1)
    n0 = faces[f0].normal
    # exterior angle from face 0 around to face 1, measured through the
    # exterior region (the side n0 points into)
    ang = math.atan2(float(np.dot(t1, n0)), float(np.dot(t1, t0)))
    if ang <= 0.0:
        ang += 2.0 * math.pi
    n_param = ang / math.pi
    return Wedge(p0, p1, f0, f1, n_param, edge_dir, t0, t1)


# ---------------------------------------------------------------------------
# Ray queries
# ---------------------------------------------------------------------------

def _segment_hits_box(p0: np.ndarray, p1: np.ndarray, box: np.ndarray) -> bool:
    """True iff the open segment passes through the open box interior."""
    d = p1 - p0
    tmin, tmax = 0.0, 1.0
    for ax in range(3):
        if abs(d[ax]) < _EPS:
            if not (box[0, ax] < p0[ax] < box[1, ax]):
                return False
        else:
            t0 = (box[0, ax] - p0[ax]) / d[ax]
            t1 = (box[1, ax] - p0[ax]) / d[ax]
            if t0 > t1:
                t0, t1 = t1, t0
            tmin = max(tmin, t0)
            tmax = min(tmax, t1)
            if tmin >= tmax:
                return False
    # require an interval of nonzero measure strictly inside (0, 1)
    return (tmax - tmin) > 1e-12 and tmax > 1e-12 and tmin < 1.0 - 1e-12


def occluded(p0: np.ndarray, p1: np.ndarray, scene: Scene) -> bool:
    """True iff the open segment intersects a building interior or the ground.

    Uses the uniform-grid index to restrict the AABB tests.  Grazing
    contact with a surface does not count as occlusion; callers offset
    interaction points off their surfaces before testing.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if min(p0[2], p1[2]) < -1e-9:
        return True
    for b in scene.spatial_index.candidates(p0, p1):
        if _segment_hits_box(p0, p1, scene.buildings[b]):
            return True
    return False


def occluded_batch(p0: np.ndarray, p1: np.ndarray, scene: Scene) -> np.ndarray:
    """Vectorized `occluded` over stacked segments.

    p0, p1: (..., 3).  Returns a boolean array of the leading shape.
    At desk scale testing all boxes beats per-segment index walks.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    lead = p0.shape[:-1]
    a = p0.reshape(-1, 3)
    b = p1.reshape(-1, 3)
    hit = np.minimum(a[:, 2], b[:, 2]) < -1e-9
    boxes = scene.buildings
    if len(boxes):
        d = b - a                                      # (N, 3)
        lo = boxes[:, 0, :]                            # (B, 3)
        hi = boxes[:, 1, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(d) < _EPS, np.inf, 1.0 / d)  # (N, 3)
            t0 = (lo[None, :, :] - a[:, None, :]) * inv[:, None, :]
            t1 = (hi[None, :, :] - a[:, None, :]) * inv[:, None, :]
        tlo = np.minimum(t0, t1)
        thi = np.maximum(t0, t1)
        # axes with zero direction: inside-slab test replaces the interval
        zero = np.abs(d)[:, None, :] < _EPS
        inside = (a[:, None, :] > lo[None, :, :]) & (a[:, None, :] < hi[None, :, :])
        tlo = np.where(zero, np.where(inside, -np.inf, np.inf), tlo)
        thi = np.where(zero, np.where(inside, np.inf, -np.inf), thi)
        tmin = np.maximum(tlo.max(axis=2), 0.0)        # (N, B)
        tmax = np.minimum(thi.min(axis=2), 1.0)
        box_hit = (tmax - tmin > 1e-12) & (tmax > 1e-12) & (tmin < 1.0 - 1e-12)
        hit |= box_hit.any(axis=1)
    return hit.reshape(lead)


def point_in_building(p: np.ndarray, scene: Scene, pad: float = 0.0) -> bool:
    """True iff p lies strictly inside any building box (padded by `pad`)."""
    p = np.asarray(p, dtype=float)
    for box in scene.buildings:
        if np.all(p > box[0] - pad) and np.all(p < box[1] + pad):
            return True
    return False


def satellite_position(elevation_deg: float, azimuth_deg: float,
                       slant_range: float, anchor: np.ndarray) -> np.ndarray:
    """Transmitter point at the given look angles from `anchor`.

    Azimuth is measured from the street axis (x); elevation from the
    horizontal plane.  Requires 0 < elevation <= 90 and slant_range > 0.
    """
    if not 0.0 < elevation_deg <= 90.0:
        raise ValueError("elevation must be in (0, 90] degrees")
    if slant_range <= 0.0:
        raise ValueError("slant_range must be > 0")
    el = math.radians(elevation_deg)
    az = math.radians(azimuth_deg)
    d = np.array([math.cos(el) * math.cos(az),
                  math.cos(el) * math.sin(az),
                  math.sin(el)])
    return np.asarray(anchor, dtype=float) + slant_range * d


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    """JSON-ready document (schema "scene/1")."""
    c = scene.config
    return {
        "schema": "scene/1",
        "config": {
            "block_size_x": c.block_size_x,
            "block_size_y": c.block_size_y,
            "street_width": c.street_width,
            "building_height": c.building_height,
            "blocks_x": c.blocks_x,
            "blocks_y": c.blocks_y,
            "tile_size": c.tile_size,
            "frequency": c.frequency,
            "tile_roofs": c.tile_roofs,
            "material": {
                "rel_permittivity": c.material.rel_permittivity,
                "conductivity": c.material.conductivity,
                "scattering_coefficient": c.material.scattering_coefficient,
            },
        },
        "buildings": [{"min": list(b[0]), "max": list(b[1])} for b in scene.buildings],
        "faces": [
            {
                "origin": list(f.origin), "u_axis": list(f.u_axis),
                "v_axis": list(f.v_axis), "u_len": f.u_len, "v_len": f.v_len,
                "normal": list(f.normal), "building": f.building, "kind": f.kind,
            }
            for f in scene.faces
        ],
        "wedges": [
            {
                "p0": list(w.p0), "p1": list(w.p1), "face0": w.face0,
                "face1": w.face1, "n_param": w.n_param,
            }
            for w in scene.wedges
        ],
        "tiles": [
            {
                "center": list(t.center), "normal": list(t.normal),
                "area": t.area, "face": t.face,
            }
            for t in scene.tiles
        ],
    }


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, indent=1)
