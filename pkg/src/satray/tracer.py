"""Propagation path enumeration between a transmitter and receivers.

Mechanism classes follow the L/R/D/S/RD/RS/DS taxonomy: line of sight,
specular reflections (image method, ground included), wedge diffractions
(generalized Fermat minimization on edge segments), diffuse scattering
from wall tiles, and their combinations.  Scattering always terminates a
path (tile to receiver is the last hop).

Enumeration pruning is lossless: a candidate interaction sequence is
culled only when plane-side or wedge-exterior tests prove that no valid
path can pass through it.  All functions are pure; the batched variants
over many receivers return exactly the per-receiver results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from satray._descent import run_descent
from satray.scene import GROUND_FACE, Scene, occluded_batch

#: interaction points are lifted this far along the local normal before
#: occlusion tests
OFFSET = 1e-6
MIN_SEG = 1e-6
EDGE_MARGIN = 1e-6          # diffraction points stay this far from edge ends
FERMAT_TOL = 1e-6           # length-change convergence for coordinate descent
FERMAT_MAX_SWEEPS = 200
GOLDEN_ITERS = 44           # interval < 1e-9 of edge length
KELLER_TOL = 1e-4           # rad
_SIDE_EPS = 1e-9
_PHI_EPS = 1e-9

CLASS_ORDER = ("L", "R", "D", "S", "RD", "RS", "DS")
_CLASS_RANK = {c: i for i, c in enumerate(CLASS_ORDER)}


@dataclass(frozen=True)
class Interaction:
    kind: str   # "reflection" | "diffraction" | "scattering"
    index: int  # face id (GROUND_FACE for the ground), wedge id, or tile id


@dataclass(frozen=True)
class TraceLimits:
    """Per-class interaction caps."""

    max_reflections: int = 4
    max_diffractions: int = 3
    max_rd_total: int = 4
    max_rs_total: int = 2
    max_ds_total: int = 2
    enable_scattering: bool = True

    def validate(self) -> None:
        for name in ("max_reflections", "max_diffractions", "max_rd_total",
                     "max_rs_total", "max_ds_total"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class PropPath:
    """One traced path: Tx, ordered interaction points, Rx."""

    vertices: np.ndarray                  # (n_interactions + 2, 3)
    interactions: tuple[Interaction, ...]
    mechanism_class: str
    total_length: float

    def segment_dirs(self) -> np.ndarray:
        d = np.diff(self.vertices, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass
class TraceDiagnostics:
    fermat_nonconverged: int = 0
    candidates: dict = field(default_factory=dict)

    def add_candidates(self, label: str, n: int) -> None:
        self.candidates[label] = self.candidates.get(label, 0) + int(n)


def mechanism_class(interactions: tuple[Interaction, ...]) -> str:
    nr = sum(1 for i in interactions if i.kind == "reflection")
    nd = sum(1 for i in interactions if i.kind == "diffraction")
    ns = sum(1 for i in interactions if i.kind == "scattering")
    if ns:
        if nr and not nd:
            return "RS"
        if nd and not nr:
            return "DS"
        if not nr and not nd:
            return "S"
        raise ValueError("unsupported interaction mix")
    if nr and nd:
        return "RD"
    if nr:
        return "R"
    if nd:
        return "D"
    return "L"


# ---------------------------------------------------------------------------
# Packed plane/wedge tables and cull predicates (cached per scene)
# ---------------------------------------------------------------------------

class _Tables:
    """Reflection planes (faces + ground) and lossless cull matrices."""

    def __init__(self, scene: Scene):
        F = scene.n_faces
        self.n_faces = F
        self.ground = F                     # plane index of the ground
        self.n_planes = F + 1
        self.normal = np.vstack([scene.face_normal.reshape(F, 3),
                                 [[0.0, 0.0, 1.0]]])
        self.point = np.vstack([scene.face_origin.reshape(F, 3),
                                [[0.0, 0.0, 0.0]]])
        self.offset = np.einsum("ij,ij->i", self.normal, self.point)
        self.u = np.vstack([scene.face_u.reshape(F, 3), [[1.0, 0.0, 0.0]]])
        self.v = np.vstack([scene.face_v.reshape(F, 3), [[0.0, 1.0, 0.0]]])
        self.ulen = np.append(scene.face_ulen, np.inf)
        self.vlen = np.append(scene.face_vlen, np.inf)
        self.bounded = np.append(np.ones(F, dtype=bool), False)

        corners = []
        for f in scene.faces:
            o, ue, ve = f.origin, f.u_len * f.u_axis, f.v_len * f.v_axis
            corners.append([o, o + ue, o + ve, o + ue + ve])
        self.face_corners = (np.array(corners).reshape(F, 4, 3)
                             if F else np.zeros((0, 4, 3)))

        W = len(scene.wedges)
        self.n_wedges = W
        self.edge_p0 = np.array([w.p0 for w in scene.wedges]).reshape(W, 3)
        self.edge_p1 = np.array([w.p1 for w in scene.wedges]).reshape(W, 3)
        self.edge_dir = np.array([w.edge_dir for w in scene.wedges]).reshape(W, 3)
        self.edge_len = (np.linalg.norm(self.edge_p1 - self.edge_p0, axis=1)
                         if W else np.zeros(0))
        self.wedge_face0 = np.array([w.face0 for w in scene.wedges], dtype=int)
        self.wedge_face1 = np.array([w.face1 for w in scene.wedges], dtype=int)
        self.wedge_n = np.array([w.n_param for w in scene.wedges])
        self.tangent0 = np.array([w.tangent0 for w in scene.wedges]).reshape(W, 3)
        self.wedge_n0 = (scene.face_normal[self.wedge_face0].reshape(W, 3)
                         if W else np.zeros((0, 3)))
        n1 = (scene.face_normal[self.wedge_face1].reshape(W, 3)
              if W else np.zeros((0, 3)))
        bis = self.wedge_n0 + n1
        self.wedge_bisector = bis / np.maximum(
            np.linalg.norm(bis, axis=1, keepdims=True), 1e-30)

        self.pair_vis = self._build_pair_vis()
        self.edge_front = self._build_edge_front()
        self.face_ext, self.edge_ext = self._build_exterior_tables()

        self.plane_samples = self._build_plane_samples(scene)   # (P, 16, 3)
        self.edge_samples = self._build_edge_samples()          # (W, 7, 3)
        self.vis_pp, self.vis_pw, self.vis_ww = self._build_vis(scene)

    def sdist(self, pts: np.ndarray, plane) -> np.ndarray:
        """Signed distance of points (..., 3) to plane index/indices."""
        n = self.normal[plane]
        c = self.offset[plane]
        return np.einsum("...j,...j->...", pts, n) - c

    def _build_pair_vis(self) -> np.ndarray:
        P = self.n_planes
        vis = np.zeros((P, P), dtype=bool)
        F = self.n_faces
        if F:
            sd = (np.einsum("fkj,pj->fkp", self.face_corners, self.normal[:F])
                  - self.offset[:F][None, None, :])
            front_of = sd.max(axis=1).T > _SIDE_EPS     # [i, f]
            vis[:F, :F] = front_of & front_of.T
            zmax = self.face_corners[:, :, 2].max(axis=1)
            vis[self.ground, :F] = zmax > _SIDE_EPS
            horiz = np.abs(self.normal[:F, 2]) < 1.0 - 1e-12
            below = (~horiz) & (self.offset[:F] < -_SIDE_EPS)
            vis[:F, self.ground] = horiz | below
        np.fill_diagonal(vis, False)
        return vis

    def _build_edge_front(self) -> np.ndarray:
        """edge_front[w, p]: wedge w's edge has an endpoint in front of plane p."""
        if not self.n_wedges:
            return np.zeros((0, self.n_planes), dtype=bool)
        ends = np.stack([self.edge_p0, self.edge_p1], axis=1)
        sd = (np.einsum("wkj,pj->wkp", ends, self.normal)
              - self.offset[None, None, :])
        return sd.max(axis=1) > _SIDE_EPS

    def _exterior_flags(self, points: np.ndarray) -> np.ndarray:
        """Strict-exterior flags of points (..., 3) against every wedge."""
        s0 = (np.einsum("...j,wj->...w", points, self.wedge_n0)
              - self.offset[self.wedge_face0])
        n1 = self.normal[self.wedge_face1]
        s1 = (np.einsum("...j,wj->...w", points, n1)
              - self.offset[self.wedge_face1])
        return np.maximum(s0, s1) > _SIDE_EPS

    def _build_exterior_tables(self) -> tuple[np.ndarray, np.ndarray]:
        W = self.n_wedges
        face_ext = np.ones((self.n_planes, W), dtype=bool)
        edge_ext = np.ones((W, W), dtype=bool)
        if not W:
            return face_ext, edge_ext
        if self.n_faces:
            face_ext[: self.n_faces] = self._exterior_flags(
                self.face_corners).any(axis=1)
        ends = np.stack([self.edge_p0, self.edge_p1], axis=1)
        edge_ext = self._exterior_flags(ends).any(axis=1)
        return face_ext, edge_ext

    # -- sampled visibility (culling aid; exact occlusion still decides) -----
    _FRACS = np.array([0.08, 0.37, 0.63, 0.92])
    _EDGE_FRACS = np.linspace(0.05, 0.95, 7)

    def _build_plane_samples(self, scene: Scene) -> np.ndarray:
        P = self.n_planes
        out = np.zeros((P, 16, 3))
        fu, fv = np.meshgrid(self._FRACS, self._FRACS, indexing="ij")
        fu = fu.ravel()
        fv = fv.ravel()
        for p in range(self.n_faces):
            out[p] = (self.point[p]
                      + np.outer(fu * self.ulen[p], self.u[p])
                      + np.outer(fv * self.vlen[p], self.v[p])
                      + 1e-4 * self.normal[p])
        ex, ey = scene.extent if len(scene.buildings) else (1.0, 1.0)
        pad = 0.5 * scene.config.street_width
        gx = -pad + fu * (ex + 2 * pad)
        gy = -pad + fv * (ey + 2 * pad)
        out[self.ground] = np.column_stack([gx, gy, np.full(16, 1e-4)])
        return out

    def _build_edge_samples(self) -> np.ndarray:
        W = self.n_wedges
        out = np.zeros((W, 7, 3))
        for w in range(W):
            t = self._EDGE_FRACS[:, None]
            out[w] = (self.edge_p0[w] + t * (self.edge_p1[w] - self.edge_p0[w])
                      + 1e-4 * self.wedge_bisector[w])
        return out

    def _build_vis(self, scene: Scene):
        """Any-sample mutual visibility between planes, plane/edge, edges.

        The infinite ground plane is exempt (always visible): its finite
        sample set cannot represent it soundly.
        """
        P, W = self.n_planes, self.n_wedges
        vis_pp = np.ones((P, P), dtype=bool)
        vis_pw = np.ones((P, W), dtype=bool)
        vis_ww = np.ones((W, W), dtype=bool)
        if not len(scene.buildings):
            return vis_pp, vis_pw, vis_ww
        ps = self.plane_samples
        es = self.edge_samples
        for p in range(self.n_faces):
            a = ps[p][:, None, None, :]                       # (16, 1, 1, 3)
            occ = occluded_batch(np.broadcast_to(a, (16, P, 16, 3)),
                                 np.broadcast_to(ps[None, :, :, :], (16, P, 16, 3)),
                                 scene)
            vis_pp[p] = ~occ.all(axis=(0, 2))
            if W:
                occ = occluded_batch(np.broadcast_to(a, (16, W, 7, 3)),
                                     np.broadcast_to(es[None, :, :, :], (16, W, 7, 3)),
                                     scene)
                vis_pw[p] = ~occ.all(axis=(0, 2))
        vis_pp[self.ground, :] = True
        vis_pp[:, self.ground] = True
        for w in range(W):
            a = es[w][:, None, None, :]
            occ = occluded_batch(np.broadcast_to(a, (7, W, 7, 3)),
                                 np.broadcast_to(es[None, :, :, :], (7, W, 7, 3)),
                                 scene)
            vis_ww[w] = ~occ.all(axis=(0, 2))
        return vis_pp, vis_pw, vis_ww

    def point_vis(self, pts: np.ndarray, scene: Scene) -> tuple[np.ndarray, np.ndarray]:
        """Sampled visibility of points (N, 3) to every plane and wedge.

        Returns (plane_vis (P, N), wedge_vis (W, N)); the ground plane is
        always considered visible.
        """
        N = len(pts)
        P, W = self.n_planes, self.n_wedges
        ps = self.plane_samples                               # (P, 16, 3)
        occ = occluded_batch(
            np.broadcast_to(ps[:, :, None, :], (P, 16, N, 3)),
            np.broadcast_to(pts[None, None, :, :], (P, 16, N, 3)), scene)
        plane_vis = ~occ.all(axis=1)
        plane_vis[self.ground] = True
        if W:
            es = self.edge_samples
            occ = occluded_batch(
                np.broadcast_to(es[:, :, None, :], (W, 7, N, 3)),
                np.broadcast_to(pts[None, None, :, :], (W, 7, N, 3)), scene)
            wedge_vis = ~occ.all(axis=1)
        else:
            wedge_vis = np.zeros((0, N), dtype=bool)
        return plane_vis, wedge_vis

    def plane_to_face_id(self, p: int) -> int:
        return GROUND_FACE if p == self.ground else int(p)


def _tables(scene: Scene) -> _Tables:
    tab = getattr(scene, "_tracer_tables", None)
    if tab is None:
        tab = _Tables(scene)
        scene._tracer_tables = tab
    return tab


# ---------------------------------------------------------------------------
# Golden-section line search along an edge
# ---------------------------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_INVPHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def _golden_edge(A: np.ndarray, B: np.ndarray, p0: np.ndarray, d: np.ndarray,
                 n_iter: int = GOLDEN_ITERS) -> np.ndarray:
    """Minimize |E(t)-A| + |E(t)-B| over t in [0, 1], E(t) = p0 + t*d.

    Arrays broadcast over the leading shape; returns t of that shape.
    One function evaluation per iteration.
    """

    def f(t):
        p = p0 + t[..., None] * d
        return (np.linalg.norm(p - A, axis=-1) + np.linalg.norm(p - B, axis=-1))

    shape = np.broadcast_shapes(A.shape[:-1], B.shape[:-1],
                                p0.shape[:-1], d.shape[:-1])
    a = np.zeros(shape)
    b = np.ones(shape)
    c = np.full(shape, _INVPHI2)
    g = np.full(shape, _INVPHI)
    fc = f(c)
    fg = f(g)
    for _ in range(n_iter):
        left = fc < fg
        a = np.where(left, a, c)
        b = np.where(left, g, b)
        carried_t = np.where(left, c, g)
        carried_f = np.where(left, fc, fg)
        probe_t = np.where(left, a + _INVPHI2 * (b - a), a + _INVPHI * (b - a))
        probe_f = f(probe_t)
        c = np.where(left, probe_t, carried_t)
        g = np.where(left, carried_t, probe_t)
        fc = np.where(left, probe_f, carried_f)
        fg = np.where(left, carried_f, probe_f)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# Candidate sequence enumeration (lossless culls)
# ---------------------------------------------------------------------------

def _enumerate_sequences(tx: np.ndarray, rx: np.ndarray, scene: Scene,
                         tab: _Tables, limits: TraceLimits, classes: set[str],
                         ) -> dict[tuple[str, ...], np.ndarray]:
    """Ordered interaction sequences that survive the lossless culls.

    Returns {kind pattern: (C, k) int array of plane/wedge indices} in
    Tx-to-Rx order.  'R' entries hold plane indices (ground =
    tab.ground), 'D' entries wedge indices.

    The walk is rooted at the receiver side (street-level receivers see
    far fewer objects than a high transmitter); the unfolded source set
    (receiver bounding-box corners, mirrored through each reflection) is
    carried along for exact front/exterior culls, and each recorded
    sequence must end on an object that can receive the transmitter.
    """
    want_r = "R" in classes and limits.max_reflections >= 1
    want_d = "D" in classes and limits.max_diffractions >= 1
    want_rd = ("RD" in classes and limits.max_rd_total >= 2
               and limits.max_reflections >= 1 and limits.max_diffractions >= 1)
    if not (want_r or want_d or want_rd):
        return {}

    tx_vis_p, tx_vis_w = tab.point_vis(tx[None, :], scene)
    tx_front = (tab.sdist(tx[None, :], np.arange(tab.n_planes)) > _SIDE_EPS
                ) & tx_vis_p[:, 0]
    tx_ext = ((tab._exterior_flags(tx[None, :])[0] & tx_vis_w[:, 0])
              if tab.n_wedges else np.zeros(0, dtype=bool))

    # receiver-side roots: bounding-box corners of the batch
    lo, hi = rx.min(axis=0), rx.max(axis=0)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    corners = np.unique(corners, axis=0)
    rx_vis_p, rx_vis_w = tab.point_vis(rx, scene)
    rx_any_p = rx_vis_p.any(axis=1)
    rx_any_w = rx_vis_w.any(axis=1) if tab.n_wedges else np.zeros(0, bool)

    out: dict[tuple[str, ...], list[list[int]]] = {}

    def record(kinds: list[str], objs: list[int]) -> None:
        # reverse: DFS order is Rx->Tx
        out.setdefault(tuple(reversed(kinds)), []).append(objs[::-1])

    def recordable(kinds: list[str], objs: list[int], nr: int, nd: int) -> bool:
        if nr and nd:
            if not (want_rd and nr + nd <= limits.max_rd_total):
                return False
        elif nr and not want_r:
            return False
        elif nd and not want_d:
            return False
        # Tx-adjacent object must accept the transmitter
        if kinds[-1] == "R":
            return bool(tx_front[objs[-1]])
        return bool(tx_ext[objs[-1]])

    def may_extend_r(nr: int, nd: int) -> bool:
        if nr + 1 > limits.max_reflections:
            return False
        if nd == 0:
            return want_r or (want_rd and nr + 2 <= limits.max_rd_total)
        return want_rd and nr + nd + 1 <= limits.max_rd_total

    def may_extend_d(nr: int, nd: int) -> bool:
        if nd + 1 > limits.max_diffractions:
            return False
        if nr == 0:
            return want_d or (want_rd and nd + 2 <= limits.max_rd_total)
        return want_rd and nr + nd + 1 <= limits.max_rd_total

    all_planes = np.arange(tab.n_planes)

    def _src_front(src: np.ndarray) -> np.ndarray:
        sd = tab.sdist(src[:, None, :], all_planes)          # (S, P)
        return sd.max(axis=0) > _SIDE_EPS

    def _src_exterior(src: np.ndarray) -> np.ndarray:
        # edge points lie on both face planes, so every arrival direction
        # from the unfolded source sits in the material cone iff the
        # whole source does
        return tab._exterior_flags(src).any(axis=0)

    def dfs(kinds: list[str], objs: list[int], nr: int, nd: int,
            src: np.ndarray) -> None:
        if kinds and recordable(kinds, objs, nr, nd):
            record(kinds, objs)
        last_kind = kinds[-1] if kinds else None
        last_obj = objs[-1] if objs else -1

        if may_extend_r(nr, nd):
            if last_kind is None:
                cand = np.nonzero(_src_front(src) & rx_any_p)[0]
            else:
                mask = _src_front(src)
                if last_kind == "R":
                    mask &= tab.pair_vis[last_obj] & tab.vis_pp[last_obj]
                else:
                    mask &= (tab.edge_front[last_obj] & tab.face_ext[:, last_obj]
                             & tab.vis_pw[:, last_obj])
                cand = np.nonzero(mask)[0]
            for p in cand:
                p = int(p)
                n = tab.normal[p]
                nsrc = src - 2.0 * (src @ n - tab.offset[p])[:, None] * n
                kinds.append("R")
                objs.append(p)
                dfs(kinds, objs, nr + 1, nd, nsrc)
                kinds.pop()
                objs.pop()

        if may_extend_d(nr, nd) and tab.n_wedges:
            if last_kind is None:
                cand = np.nonzero(_src_exterior(src) & rx_any_w)[0]
            else:
                mask = _src_exterior(src)
                if last_kind == "R":
                    mask &= (tab.face_ext[last_obj] & tab.edge_front[:, last_obj]
                             & tab.vis_pw[last_obj])
                else:
                    mask &= (tab.edge_ext[:, last_obj] & tab.edge_ext[last_obj]
                             & tab.vis_ww[last_obj])
                    mask[last_obj] = False
                cand = np.nonzero(mask)[0]
            for w in cand:
                w = int(w)
                edge = np.vstack([tab.edge_p0[w], tab.edge_p1[w]])
                kinds.append("D")
                objs.append(w)
                dfs(kinds, objs, nr, nd + 1, edge)
                kinds.pop()
                objs.pop()

    dfs([], [], 0, 0, corners)
    return {k: np.array(v, dtype=int) for k, v in out.items()}


# ---------------------------------------------------------------------------
# Mirror composition and back-tracing
# ---------------------------------------------------------------------------

def _compose_mirrors(tab: _Tables, planes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Composite transform of successive plane mirrors, first plane applied first.

    planes: (C, k) plane indices.  Returns (R (C,3,3), d (C,3)) with
    T(x) = R x + d.
    """
    C, k = planes.shape
    R = np.broadcast_to(np.eye(3), (C, 3, 3)).copy()
    d = np.zeros((C, 3))
    for j in range(k):
        n = tab.normal[planes[:, j]]                      # (C, 3)
        c = tab.offset[planes[:, j]]                      # (C,)
        M = np.eye(3)[None] - 2.0 * n[:, :, None] * n[:, None, :]
        R = np.einsum("cij,cjk->cik", M, R)
        d = (np.einsum("cij,cj->ci", M, d)
             + 2.0 * c[:, None] * n)
    return R, d


def _apply(Rm: np.ndarray, dm: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply T(x) = R x + d; x is (C, ..., 3), R (C,3,3), d (C,3)."""
    extra = x.ndim - 2
    Rx = np.einsum("cij,c...j->c...i", Rm, x)
    return Rx + dm.reshape((dm.shape[0],) + (1,) * extra + (3,))


def _apply_inv(Rm: np.ndarray, dm: np.ndarray, x: np.ndarray) -> np.ndarray:
    extra = x.ndim - 2
    y = x - dm.reshape((dm.shape[0],) + (1,) * extra + (3,))
    return np.einsum("cji,c...j->c...i", Rm, y)


def _backtrace_run(tab: _Tables, planes: np.ndarray, start: np.ndarray,
                   end: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Specular points of a pure-reflection run from `start` to `end`.

    planes: (C, k); start, end: (C, N, 3).  Returns (points (C, N, k, 3),
    valid (C, N)).  Validity: each plane is crossed strictly front-to-back
    of the running image and points stay inside bounded faces.
    """
    C, k = planes.shape
    N = end.shape[1]
    imgs = []
    img = start
    for j in range(k):
        n = tab.normal[planes[:, j]][:, None, :]
        c = tab.offset[planes[:, j]][:, None]
        img = img - 2.0 * (np.einsum("cnj,cnj->cn", img,
                                     np.broadcast_to(n, img.shape)) - c)[..., None] * n
        imgs.append(img)

    valid = np.ones((C, N), dtype=bool)
    pts = np.zeros((C, N, k, 3))
    target = end
    for j in range(k - 1, -1, -1):
        pl = planes[:, j]
        n = tab.normal[pl][:, None, :]
        c = tab.offset[pl][:, None]
        sd_t = np.einsum("cnj,cnj->cn", target, np.broadcast_to(n, target.shape)) - c
        img_j = imgs[j]
        sd_i = np.einsum("cnj,cnj->cn", img_j, np.broadcast_to(n, img_j.shape)) - c
        ok = (sd_t > _SIDE_EPS) & (sd_i < -_SIDE_EPS)
        denom = np.where(ok, sd_t - sd_i, 1.0)
        t = sd_t / denom
        q = target + t[..., None] * (img_j - target)
        bounded = tab.bounded[pl]
        if bounded.any():
            rel = q - tab.point[pl][:, None, :]
            uu = np.einsum("cnj,cj->cn", rel, tab.u[pl])
            vv = np.einsum("cnj,cj->cn", rel, tab.v[pl])
            in_rect = ((uu >= -_SIDE_EPS) & (uu <= tab.ulen[pl][:, None] + _SIDE_EPS)
                       & (vv >= -_SIDE_EPS) & (vv <= tab.vlen[pl][:, None] + _SIDE_EPS))
            ok &= np.where(bounded[:, None], in_rect, True)
        valid &= ok
        pts[:, :, j, :] = q
        target = q
    return pts, valid


# ---------------------------------------------------------------------------
# Pattern solving (reflection runs + Fermat descent on diffraction params)
# ---------------------------------------------------------------------------

@dataclass
class SeqGroup:
    """Solved candidates sharing one kind pattern, batched over receivers."""

    pattern: tuple[str, ...]
    objects: np.ndarray        # (C, k) plane/wedge indices per pattern slot
    valid: np.ndarray          # (C, N)
    vertices: np.ndarray       # (C, N, k + 2, 3)
    lengths: np.ndarray        # (C, N)

    def interactions(self, tab: _Tables, c: int) -> tuple[Interaction, ...]:
        out = []
        for kind, obj in zip(self.pattern, self.objects[c]):
            if kind == "R":
                out.append(Interaction("reflection", tab.plane_to_face_id(obj)))
            else:
                out.append(Interaction("diffraction", int(obj)))
        return tuple(out)


def _solve_pattern(pattern: tuple[str, ...], objs: np.ndarray, tx: np.ndarray,
                   rx: np.ndarray, scene: Scene, tab: _Tables,
                   leaf_gate: np.ndarray | None,
                   diagnostics: TraceDiagnostics | None,
                   chunk_elems: int = 4_000_000) -> SeqGroup | None:
    """Solve and validate all candidates of one kind pattern.

    Reflection runs are handled with composed mirror images; diffraction
    points minimize the unfolded polyline length by coordinate descent
    with golden-section line searches (midpoint initialization).
    `leaf_gate` (C, N) masks candidate/receiver pairs worth solving
    (sampled visibility of the last interaction object).
    """
    C, k = objs.shape
    N = rx.shape[0]
    V = k + 2
    if "D" in pattern:
        # the descent kernel compacts candidates before reconstruction
        chunk = max(1, int(8 * chunk_elems // max(1, N)))
    else:
        chunk = max(1, int(chunk_elems // max(1, N * V)))
    parts = []
    for s in range(0, C, chunk):
        gate = leaf_gate[s:s + chunk] if leaf_gate is not None else None
        part = _solve_pattern_chunk(pattern, objs[s:s + chunk], tx, rx, scene,
                                    tab, gate, diagnostics)
        if part is not None:
            parts.append(part)
    if not parts:
        return None
    return SeqGroup(
        pattern,
        np.concatenate([p.objects for p in parts], axis=0),
        np.concatenate([p.valid for p in parts], axis=0),
        np.concatenate([p.vertices for p in parts], axis=0),
        np.concatenate([p.lengths for p in parts], axis=0),
    )


def _solve_pattern_chunk(pattern, objs, tx, rx, scene, tab, leaf_gate,
                         diagnostics):
    C, k = objs.shape
    N = rx.shape[0]
    d_pos = [i for i, kind in enumerate(pattern) if kind == "D"]
    m = len(d_pos)

    # reflection-run plane lists between diffraction anchors
    runs: list[np.ndarray] = []
    cuts = [-1] + d_pos + [k]
    for g in range(m + 1):
        lo, hi = cuts[g] + 1, cuts[g + 1]
        runs.append(objs[:, lo:hi])
    run_T = [(_compose_mirrors(tab, r) if r.shape[1] else
              (np.broadcast_to(np.eye(3), (C, 3, 3)), np.zeros((C, 3))))
             for r in runs]

    tx_b = np.broadcast_to(tx, (C, N, 3))
    rx_b = np.broadcast_to(rx[None, :, :], (C, N, 3))

    if m == 0:
        pts, valid = _backtrace_run(tab, runs[0], tx_b, rx_b)
        vertices = np.concatenate([tx_b[:, :, None, :], pts,
                                   rx_b[:, :, None, :]], axis=2)
    else:
        wedges = objs[:, d_pos]                              # (C, m)
        e0c = tab.edge_p0[wedges]                            # (C, m, 3)
        edc = tab.edge_p1[wedges] - tab.edge_p0[wedges]
        elen = tab.edge_len[wedges]
        Rt = np.zeros((C, m + 1, 3, 3))
        dt_ = np.zeros((C, m + 1, 3))
        has_run = np.zeros(m + 1, dtype=bool)
        for g in range(m + 1):
            if runs[g].shape[1]:
                has_run[g] = True
                Rt[:, g], dt_[:, g] = run_T[g]
            else:
                Rt[:, g] = np.eye(3)
        gate = (leaf_gate if leaf_gate is not None
                else np.ones((C, N), dtype=bool))
        ci, ni = np.nonzero(gate)
        t_el, status = run_descent(
            e0c, edc, elen, Rt, dt_, has_run,
            tab.tangent0[wedges], tab.wedge_n0[wedges],
            tab.edge_dir[wedges], tab.wedge_n[wedges] * math.pi,
            tx, rx, ci.astype(np.int64), ni.astype(np.int64))
        if diagnostics is not None:
            diagnostics.fermat_nonconverged += int((status == 2).sum())

        valid = np.zeros((C, N), dtype=bool)
        valid[ci, ni] = status == 1
        keep0 = valid.any(axis=1)
        if not keep0.any():
            return None
        t = np.full((C, N, m), 0.5)
        t[ci, ni] = t_el
        objs = objs[keep0]
        valid = valid[keep0]
        t = t[keep0]
        e0c, edc = e0c[keep0], edc[keep0]
        runs = [r[keep0] for r in runs]
        run_T = [(Rm[keep0], dm[keep0]) for (Rm, dm) in run_T]
        C = objs.shape[0]
        tx_b = np.broadcast_to(tx, (C, N, 3))
        rx_b = np.broadcast_to(rx[None, :, :], (C, N, 3))

        P_full = e0c[:, None, :, :] + t[..., None] * edc[:, None, :, :]

        # reconstruct reflection runs between anchors
        anchors_full = ([tx_b] + [P_full[:, :, i, :] for i in range(m)] + [rx_b])
        vert_list = [tx_b[:, :, None, :]]
        for g in range(m + 1):
            if runs[g].shape[1]:
                pts, ok = _backtrace_run(tab, runs[g], anchors_full[g],
                                         anchors_full[g + 1])
                valid &= ok
                vert_list.append(pts)
            if g < m:
                vert_list.append(P_full[:, :, g:g + 1, :])
        vert_list.append(rx_b[:, :, None, :])
        vertices = np.concatenate(vert_list, axis=2)

        # independent re-validation of the wedge geometry on survivors
        valid &= _diffraction_checks(pattern, objs, vertices, tab)

    # common validity, element-sparse: segment lengths and occlusion with
    # offset endpoints only for elements that are still alive
    ci, ni = np.nonzero(valid)
    if not len(ci):
        return None
    v_el = vertices[ci, ni]                               # (E, V, 3)
    seg = np.diff(v_el, axis=1)
    slen = np.linalg.norm(seg, axis=2)
    ok = np.all(slen > MIN_SEG, axis=1)

    lift = np.zeros((C, vertices.shape[2], 3))
    for slot, kind in enumerate(pattern):
        if kind == "R":
            lift[:, slot + 1, :] = OFFSET * tab.normal[objs[:, slot]]
        else:
            lift[:, slot + 1, :] = OFFSET * tab.wedge_bisector[objs[:, slot]]
    le = v_el + lift[ci]
    occ = occluded_batch(le[:, :-1, :], le[:, 1:, :], scene)
    ok &= ~np.any(occ, axis=1)

    valid[ci, ni] = ok
    keep = valid.any(axis=1)
    if not keep.any():
        return None
    lengths = np.zeros((C, rx.shape[0]))
    lengths[ci, ni] = slen.sum(axis=1)
    return SeqGroup(pattern, objs[keep], valid[keep], vertices[keep],
                    lengths[keep])


def _diffraction_checks(pattern, objs, vertices, tab) -> np.ndarray:
    """Keller cone, exterior angular range, and skew validity per diffraction."""
    C, N = vertices.shape[:2]
    valid = np.ones((C, N), dtype=bool)
    for slot, kind in enumerate(pattern):
        if kind != "D":
            continue
        w = objs[:, slot]
        P = vertices[:, :, slot + 1, :]
        prev = vertices[:, :, slot, :]
        nxt = vertices[:, :, slot + 2, :]
        s_in = P - prev
        s_out = nxt - P
        li = np.linalg.norm(s_in, axis=2)
        lo = np.linalg.norm(s_out, axis=2)
        ok = (li > MIN_SEG) & (lo > MIN_SEG)
        s_in = s_in / np.maximum(li, 1e-30)[..., None]
        s_out = s_out / np.maximum(lo, 1e-30)[..., None]
        e = tab.edge_dir[w][:, None, :]
        cos_in = np.clip(np.einsum("cnj,cnj->cn", s_in,
                                   np.broadcast_to(e, s_in.shape)), -1, 1)
        cos_out = np.clip(np.einsum("cnj,cnj->cn", s_out,
                                    np.broadcast_to(e, s_out.shape)), -1, 1)
        beta_in = np.arccos(cos_in)
        beta_out = np.arccos(cos_out)
        ok &= np.abs(beta_in - beta_out) < KELLER_TOL
        ok &= np.sin(beta_in) > 1e-6

        t0 = tab.tangent0[w][:, None, :]
        n0 = tab.wedge_n0[w][:, None, :]
        n_pi = (tab.wedge_n[w] * math.pi)[:, None]

        def _phi(u):
            up = u - np.einsum("cnj,cnj->cn", u, np.broadcast_to(e, u.shape))[..., None] * e
            nrm = np.linalg.norm(up, axis=2)
            good = nrm > 1e-12
            up = up / np.maximum(nrm, 1e-30)[..., None]
            ang = np.arctan2(
                np.einsum("cnj,cnj->cn", up, np.broadcast_to(n0, up.shape)),
                np.einsum("cnj,cnj->cn", up, np.broadcast_to(t0, up.shape)))
            ang = np.where(ang < 0.0, ang + 2.0 * math.pi, ang)
            return ang, good

        phi0, g0 = _phi(-s_in)
        phi1, g1 = _phi(s_out)
        ok &= g0 & g1
        ok &= (phi0 > _PHI_EPS) & (phi0 < n_pi - _PHI_EPS)
        ok &= (phi1 > _PHI_EPS) & (phi1 < n_pi - _PHI_EPS)
        valid &= ok
    return valid


# ---------------------------------------------------------------------------
# Scattering candidates (tile is always the last interaction)
# ---------------------------------------------------------------------------

@dataclass
class ScatterSet:
    """Tx-side (receiver-independent) scattering candidates.

    kind: 0 = S, 1 = RS, 2 = DS.  `pre_obj` is the plane index for RS,
    wedge index for DS, -1 for S.  `pre_point` is the reflection or
    diffraction point (tx for S); `pre_len` the Tx-to-tile unfolded length.
    """

    tile: np.ndarray
    kind: np.ndarray
    pre_obj: np.ndarray
    pre_point: np.ndarray
    pre_len: np.ndarray

    @property
    def size(self) -> int:
        return len(self.tile)


def _scatter_candidates(tx: np.ndarray, scene: Scene, tab: _Tables,
                        limits: TraceLimits, classes: set[str],
                        diagnostics: TraceDiagnostics | None) -> ScatterSet:
    T = len(scene.tiles)
    want_s = "S" in classes
    want_rs = "RS" in classes and limits.max_rs_total >= 2
    want_ds = "DS" in classes and limits.max_ds_total >= 2 and tab.n_wedges
    parts: list[tuple] = []
    if T == 0 or not limits.enable_scattering or not (want_s or want_rs or want_ds):
        return ScatterSet(np.zeros(0, int), np.zeros(0, np.int8),
                          np.zeros(0, int), np.zeros((0, 3)), np.zeros(0))

    centers = scene.tile_center
    normals = scene.tile_normal
    tile_off = np.einsum("tj,tj->t", normals, centers)

    if want_s:
        sd_tx = normals @ tx - tile_off
        ok = sd_tx > _SIDE_EPS
        if ok.any():
            idx = np.nonzero(ok)[0]
            lift = centers[idx] + OFFSET * normals[idx]
            occ = occluded_batch(np.broadcast_to(tx, (len(idx), 3)), lift, scene)
            idx = idx[~occ]
            parts.append((idx, np.zeros(len(idx), np.int8),
                          np.full(len(idx), -1), np.broadcast_to(tx, (len(idx), 3)),
                          np.linalg.norm(centers[idx] - tx, axis=1)))

    if want_rs:
        P = tab.n_planes
        tx_front = (tab.normal @ tx - tab.offset) > _SIDE_EPS
        planes = np.nonzero(tx_front)[0]
        if len(planes):
            n_p = tab.normal[planes]                        # (P', 3)
            c_p = tab.offset[planes]
            img = tx[None, :] - 2.0 * ((n_p @ tx) - c_p)[:, None] * n_p
            sd_c = centers @ n_p.T - c_p[None, :]           # (T, P')
            sd_i = np.einsum("pj,pj->p", img, n_p) - c_p
            pair_ok = sd_c > _SIDE_EPS                      # img behind by construction
            ti, pi = np.nonzero(pair_ok)
            if len(ti):
                c_t = centers[ti]
                img_t = img[pi]
                sdc = sd_c[ti, pi]
                sdi = sd_i[pi]
                tpar = sdc / (sdc - sdi)
                q = c_t + tpar[:, None] * (img_t - c_t)
                pl = planes[pi]
                rel = q - tab.point[pl]
                uu = np.einsum("kj,kj->k", rel, tab.u[pl])
                vv = np.einsum("kj,kj->k", rel, tab.v[pl])
                ok = np.where(tab.bounded[pl],
                              (uu >= -_SIDE_EPS) & (uu <= tab.ulen[pl] + _SIDE_EPS)
                              & (vv >= -_SIDE_EPS) & (vv <= tab.vlen[pl] + _SIDE_EPS),
                              True)
                # tile must see the reflection point from its outward side
                sd_q = np.einsum("kj,kj->k", normals[ti], q) - tile_off[ti]
                ok &= sd_q > _SIDE_EPS
                seg1 = np.linalg.norm(q - tx, axis=1)
                seg2 = np.linalg.norm(c_t - q, axis=1)
                ok &= (seg1 > MIN_SEG) & (seg2 > MIN_SEG)
                if ok.any():
                    ti, pl, q = ti[ok], pl[ok], q[ok]
                    seg1, seg2 = seg1[ok], seg2[ok]
                    q_lift = q + OFFSET * tab.normal[pl]
                    c_lift = centers[ti] + OFFSET * normals[ti]
                    occ = (occluded_batch(np.broadcast_to(tx, q.shape), q_lift, scene)
                           | occluded_batch(q_lift, c_lift, scene))
                    keep = ~occ
                    parts.append((ti[keep], np.ones(keep.sum(), np.int8),
                                  pl[keep], q[keep],
                                  (seg1 + seg2)[keep]))

    if want_ds:
        tx_ext = tab._exterior_flags(tx[None, :])[0]
        wedges = np.nonzero(tx_ext)[0]
        if len(wedges):
            wi, tj = np.meshgrid(wedges, np.arange(T), indexing="ij")
            wi = wi.ravel()
            tj = tj.ravel()
            e0 = tab.edge_p0[wi]
            ed = tab.edge_p1[wi] - tab.edge_p0[wi]
            c_t = centers[tj]
            t = _golden_edge(np.broadcast_to(tx, c_t.shape), c_t, e0, ed)
            P = e0 + t[:, None] * ed
            margin = EDGE_MARGIN / np.maximum(tab.edge_len[wi], 1e-30)
            ok = (t > margin) & (t < 1.0 - margin)
            sd_p = np.einsum("kj,kj->k", normals[tj], P) - tile_off[tj]
            ok &= sd_p > _SIDE_EPS
            s_in = P - tx
            s_out = c_t - P
            li = np.linalg.norm(s_in, axis=1)
            lo = np.linalg.norm(s_out, axis=1)
            ok &= (li > MIN_SEG) & (lo > MIN_SEG)
            s_in /= np.maximum(li, 1e-30)[:, None]
            s_out /= np.maximum(lo, 1e-30)[:, None]
            e = tab.edge_dir[wi]
            beta_in = np.arccos(np.clip(np.einsum("kj,kj->k", s_in, e), -1, 1))
            beta_out = np.arccos(np.clip(np.einsum("kj,kj->k", s_out, e), -1, 1))
            ok &= np.abs(beta_in - beta_out) < KELLER_TOL
            ok &= np.sin(beta_in) > 1e-6
            t0 = tab.tangent0[wi]
            n0 = tab.wedge_n0[wi]
            n_pi = tab.wedge_n[wi] * math.pi

            def _phi(u):
                up = u - np.einsum("kj,kj->k", u, e)[:, None] * e
                nrm = np.linalg.norm(up, axis=1)
                good = nrm > 1e-12
                up = up / np.maximum(nrm, 1e-30)[:, None]
                ang = np.arctan2(np.einsum("kj,kj->k", up, n0),
                                 np.einsum("kj,kj->k", up, t0))
                return np.where(ang < 0, ang + 2 * math.pi, ang), good

            phi0, g0 = _phi(-s_in)
            phi1, g1 = _phi(s_out)
            ok &= g0 & g1 & (phi0 > _PHI_EPS) & (phi0 < n_pi - _PHI_EPS)
            ok &= (phi1 > _PHI_EPS) & (phi1 < n_pi - _PHI_EPS)
            if ok.any():
                wi, tj, P = wi[ok], tj[ok], P[ok]
                li, lo = li[ok], lo[ok]
                p_lift = P + OFFSET * tab.wedge_bisector[wi]
                c_lift = centers[tj] + OFFSET * normals[tj]
                occ = (occluded_batch(np.broadcast_to(tx, P.shape), p_lift, scene)
                       | occluded_batch(p_lift, c_lift, scene))
                keep = ~occ
                parts.append((tj[keep], np.full(keep.sum(), 2, np.int8),
                              wi[keep], P[keep], (li + lo)[keep]))

    if not parts:
        return ScatterSet(np.zeros(0, int), np.zeros(0, np.int8),
                          np.zeros(0, int), np.zeros((0, 3)), np.zeros(0))
    tile = np.concatenate([p[0] for p in parts])
    kind = np.concatenate([p[1] for p in parts])
    pre_obj = np.concatenate([p[2] for p in parts])
    pre_point = np.concatenate([np.asarray(p[3], float).reshape(-1, 3) for p in parts])
    pre_len = np.concatenate([p[4] for p in parts])
    if diagnostics is not None:
        diagnostics.add_candidates("scatter", len(tile))
    return ScatterSet(tile, kind, pre_obj, pre_point, pre_len)


def _tile_visibility(rx: np.ndarray, scene: Scene) -> np.ndarray:
    """(T, N) mask: rx on the outward side of the tile and tile center visible."""
    T = len(scene.tiles)
    N = rx.shape[0]
    if T == 0:
        return np.zeros((0, N), dtype=bool)
    centers = scene.tile_center
    normals = scene.tile_normal
    tile_off = np.einsum("tj,tj->t", normals, centers)
    sd = rx @ normals.T - tile_off[None, :]                 # (N, T)
    vis = (sd > _SIDE_EPS).T
    lift = centers + OFFSET * normals
    p0 = np.broadcast_to(lift[:, None, :], (T, N, 3))
    p1 = np.broadcast_to(rx[None, :, :], (T, N, 3))
    vis &= ~occluded_batch(p0, p1, scene)
    return vis


# ---------------------------------------------------------------------------
# Batched driver and public single-receiver operations
# ---------------------------------------------------------------------------

@dataclass
class TraceBatch:
    """All traced path data for one Tx against a batch of receivers."""

    tx: np.ndarray
    rx: np.ndarray             # (N, 3)
    scene: Scene
    limits: TraceLimits
    los_valid: np.ndarray      # (N,)
    groups: list[SeqGroup]
    scatter: ScatterSet
    tile_vis: np.ndarray       # (T, N)


ALL_CLASSES = frozenset(CLASS_ORDER)


def trace_batch(tx: np.ndarray, rx_points: np.ndarray, scene: Scene,
                limits: TraceLimits, classes=ALL_CLASSES,
                diagnostics: TraceDiagnostics | None = None) -> TraceBatch:
    """Trace every requested mechanism class for a batch of receivers."""
    limits.validate()
    tx = np.asarray(tx, dtype=float).reshape(3)
    rx = np.asarray(rx_points, dtype=float).reshape(-1, 3)
    tab = _tables(scene)
    classes = set(classes)

    if "L" in classes:
        los_valid = ~occluded_batch(np.broadcast_to(tx, rx.shape), rx, scene)
    else:
        los_valid = np.zeros(len(rx), dtype=bool)

    groups: list[SeqGroup] = []
    seqs = _enumerate_sequences(tx, rx, scene, tab, limits, classes)
    leaf_p = leaf_w = None
    if any("D" in p for p in seqs):
        leaf_p, leaf_w = tab.point_vis(rx, scene)
    for pattern in sorted(seqs, key=lambda p: (len(p), p)):
        objs = seqs[pattern]
        if diagnostics is not None:
            diagnostics.add_candidates("".join(pattern), len(objs))
        gate = None
        if "D" in pattern:
            last = objs[:, -1]
            if pattern[-1] == "R":
                # exact side test: rx strictly in front of the last plane
                sd = (rx @ tab.normal[last].T - tab.offset[last]).T
                gate = leaf_p[last] & (sd > _SIDE_EPS)
            else:
                s0 = (rx @ tab.wedge_n0[last].T
                      - tab.offset[tab.wedge_face0[last]]).T
                n1 = tab.normal[tab.wedge_face1[last]]
                s1 = (rx @ n1.T - tab.offset[tab.wedge_face1[last]]).T
                gate = leaf_w[last] & (np.maximum(s0, s1) > _SIDE_EPS)
        solved = _solve_pattern(pattern, objs, tx, rx, scene, tab, gate,
                                diagnostics)
        if solved is not None:
            groups.append(solved)

    scatter = _scatter_candidates(tx, scene, tab, limits, classes, diagnostics)
    need_vis = scatter.size > 0
    tile_vis = (_tile_visibility(rx, scene) if need_vis
                else np.zeros((len(scene.tiles), len(rx)), dtype=bool))
    return TraceBatch(tx, rx, scene, limits, los_valid, groups, scatter, tile_vis)


def paths_from_batch(batch: TraceBatch, n: int = 0) -> list[PropPath]:
    """Materialize PropPath objects for receiver index `n`, canonically sorted."""
    tab = _tables(batch.scene)
    rx = batch.rx[n]
    out: list[PropPath] = []
    if batch.los_valid[n]:
        verts = np.vstack([batch.tx, rx])
        out.append(PropPath(verts, (), "L", float(np.linalg.norm(rx - batch.tx))))
    for g in batch.groups:
        for c in np.nonzero(g.valid[:, n])[0]:
            inter = g.interactions(tab, int(c))
            out.append(PropPath(g.vertices[c, n].copy(), inter,
                                mechanism_class(inter), float(g.lengths[c, n])))
    sc = batch.scatter
    if sc.size:
        visible = batch.tile_vis[sc.tile, n]
        centers = batch.scene.tile_center
        for c in np.nonzero(visible)[0]:
            tile = int(sc.tile[c])
            hop = float(np.linalg.norm(rx - centers[tile]))
            kind = int(sc.kind[c])
            if kind == 0:
                verts = np.vstack([batch.tx, centers[tile], rx])
                inter = (Interaction("scattering", tile),)
            elif kind == 1:
                verts = np.vstack([batch.tx, sc.pre_point[c], centers[tile], rx])
                inter = (Interaction("reflection",
                                     tab.plane_to_face_id(int(sc.pre_obj[c]))),
                         Interaction("scattering", tile))
            else:
                verts = np.vstack([batch.tx, sc.pre_point[c], centers[tile], rx])
                inter = (Interaction("diffraction", int(sc.pre_obj[c])),
                         Interaction("scattering", tile))
            out.append(PropPath(verts, inter, mechanism_class(inter),
                                float(sc.pre_len[c] + hop)))
    out.sort(key=lambda p: (_CLASS_RANK[p.mechanism_class], p.total_length,
                            tuple((i.kind, i.index) for i in p.interactions)))
    return out


def _single(tx, rx, scene, limits, classes, diagnostics=None) -> list[PropPath]:
    batch = trace_batch(tx, np.asarray(rx, float).reshape(1, 3), scene, limits,
                        classes, diagnostics)
    return paths_from_batch(batch, 0)


def trace_los(tx, rx, scene: Scene) -> PropPath | None:
    """Direct path, present iff the Tx-Rx segment is unoccluded."""
    paths = _single(tx, rx, scene, TraceLimits(), {"L"})
    return paths[0] if paths else None


def trace_reflections(tx, rx, scene: Scene, limits: TraceLimits,
                      diagnostics: TraceDiagnostics | None = None) -> list[PropPath]:
    """Pure specular-reflection paths up to limits.max_reflections bounces."""
    if limits.max_reflections < 1:
        return []
    return _single(tx, rx, scene, limits, {"R"}, diagnostics)


def trace_diffractions(tx, rx, scene: Scene, limits: TraceLimits,
                       diagnostics: TraceDiagnostics | None = None) -> list[PropPath]:
    """Pure diffraction paths up to limits.max_diffractions wedges."""
    if limits.max_diffractions < 1:
        return []
    return _single(tx, rx, scene, limits, {"D"}, diagnostics)


def trace_mixed_rd(tx, rx, scene: Scene, limits: TraceLimits,
                   diagnostics: TraceDiagnostics | None = None) -> list[PropPath]:
    """Mixed reflection+diffraction paths, at most limits.max_rd_total hops."""
    return _single(tx, rx, scene, limits, {"RD"}, diagnostics)


def trace_scattering(tx, rx, scene: Scene, limits: TraceLimits,
                     diagnostics: TraceDiagnostics | None = None) -> list[PropPath]:
    """S, RS and DS paths; the scattering tile is always the final hop."""
    return _single(tx, rx, scene, limits, {"S", "RS", "DS"}, diagnostics)


def trace_all(tx, rx, scene: Scene, limits: TraceLimits,
              diagnostics: TraceDiagnostics | None = None) -> list[PropPath]:
    """Every mechanism class in one call."""
    return _single(tx, rx, scene, limits, ALL_CLASSES, diagnostics)
