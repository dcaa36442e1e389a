"""Complex polarimetric field carried by each traced path.

Free-space spreading from a unit-power isotropic source, Fresnel
reflection on lossy dielectric faces, Kouyoumjian-Pathak wedge
diffraction with the Luebbers reflection weighting for dielectric
wedges, and Lambertian effective-roughness diffuse scattering from wall
tiles.  The transmitter radiates pure vertical polarization; the
receiver records the vertical and horizontal components of the arriving
field.

Conventions: time factor exp(+jwt), propagation phase exp(-jkr).  The
TM reflection coefficient is returned in the convention where normal
incidence on a dense dielectric gives the same negative value as TE
(perfect conductor: -1 for both); the parallel frames in `path_field`
are oriented to match, and the wedge-diffraction hard terms flip the
sign internally where the classical +1 convention applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as C0
from scipy.constants import epsilon_0, mu_0
from scipy.special import modfresnelm

from satray.scene import Scene
from satray.tracer import (
    CLASS_ORDER,
    PropPath,
    TraceBatch,
    TraceLimits,
    trace_all,
    trace_batch,
    _tables,
)

ETA0 = math.sqrt(mu_0 / epsilon_0)
#: source amplitude at 1 m for a 1 W EIRP isotropic radiator [V m / m]
E0_SOURCE = math.sqrt(ETA0 / (2.0 * math.pi))

_VERTICAL_FALLBACK = np.array([1.0, 0.0, 0.0])


@dataclass
class ComplexField:
    """Two complex components in an orthonormal transverse frame.

    `wavenumber` tags the carrier so downstream scattering can advance
    the phase.
    """

    e1: complex
    e2: complex
    frame1: np.ndarray
    frame2: np.ndarray
    wavenumber: float = 0.0

    @property
    def magnitude(self) -> float:
        return math.sqrt(abs(self.e1) ** 2 + abs(self.e2) ** 2)


@dataclass
class RayContribution:
    """Field, power and delay delivered by one propagation path."""

    path: PropPath
    mechanism_class: str
    e_v: complex
    e_h: complex
    power: float
    delay: float


def received_power(e_v: complex, e_h: complex, wavelength: float) -> float:
    """Power via the unit-gain effective aperture lambda^2 / (4 pi)."""
    a_eff = wavelength ** 2 / (4.0 * math.pi)
    return (abs(e_v) ** 2 + abs(e_h) ** 2) * a_eff / (2.0 * ETA0)


# ---------------------------------------------------------------------------
# Polarization frames
# ---------------------------------------------------------------------------

def vertical_pol(direction: np.ndarray) -> np.ndarray:
    """Vertical-polarization unit vector transverse to a ray direction.

    Projection of global z onto the transverse plane; near-vertical rays
    fall back to the x axis.
    """
    d = np.asarray(direction, dtype=float)
    v = np.array([0.0, 0.0, 1.0]) - d[2] * d
    n = np.linalg.norm(v)
    if n < 1e-9:
        v = _VERTICAL_FALLBACK - d[0] * d
        n = np.linalg.norm(v)
    return v / n


def horizontal_pol(direction: np.ndarray) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    h = np.cross(d, vertical_pol(d))
    return h / np.linalg.norm(h)


def _vpol_batch(d: np.ndarray) -> np.ndarray:
    v = -d[..., 2:3] * d
    v[..., 2] += 1.0
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    bad = n[..., 0] < 1e-9
    if np.any(bad):
        db = d[bad]
        v[bad] = _VERTICAL_FALLBACK - db[..., 0:1] * db
        n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def _hpol_batch(d: np.ndarray) -> np.ndarray:
    h = np.cross(d, _vpol_batch(d))
    return h / np.linalg.norm(h, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Scalar kernels
# ---------------------------------------------------------------------------

def free_space_field(length, wavelength: float):
    """Reference spherical wave: 1 V/m at 1 m, phase -k length."""
    length = np.asarray(length, dtype=float)
    if np.any(length <= 0.0):
        raise ValueError("length must be > 0")
    k = 2.0 * math.pi / wavelength
    out = np.exp(-1j * k * length) / length
    return complex(out) if out.ndim == 0 else out


def complex_permittivity(material, frequency: float) -> complex:
    return (material.rel_permittivity
            - 1j * material.conductivity / (2.0 * math.pi * frequency * epsilon_0))


def fresnel_coefficients(theta_i, material, frequency: float):
    """(Gamma_TE, Gamma_TM) for incidence angle theta_i from the normal.

    Principal branch with non-negative real part of the root.  Both
    coefficients equal (1 - sqrt(eps)) / (1 + sqrt(eps)) at normal
    incidence; magnitudes tend to 1 at grazing.
    """
    theta = np.asarray(theta_i, dtype=float)
    if np.any((theta < 0.0) | (theta >= 0.5 * math.pi)):
        raise ValueError("theta_i must be in [0, pi/2)")
    eps = complex_permittivity(material, frequency)
    ct = np.cos(theta)
    g = np.sqrt(eps - np.sin(theta) ** 2 + 0j)
    g = np.where(g.real < 0.0, -g, g)
    gamma_te = (ct - g) / (ct + g)
    gamma_tm = (g - eps * ct) / (g + eps * ct)
    if theta.ndim == 0:
        return complex(gamma_te), complex(gamma_tm)
    return gamma_te, gamma_tm


def transition_function(x):
    """Kouyoumjian-Pathak transition function.

    F(x) = 2j sqrt(x) e^{jx} int_{sqrt(x)}^{inf} e^{-j tau^2} dtau,
    evaluated through the modified negative Fresnel integral.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("x must be > 0")
    sx = np.sqrt(x)
    out = 2j * sx * np.exp(1j * x) * modfresnelm(sx)[0]
    return complex(out) if out.ndim == 0 else out


def _utd_term(sign: int, beta, n, kL):
    """cot((pi + s beta) / (2n)) F(kL a(beta)) with the boundary limit.

    Within 1e-5 rad of the term's shadow/reflection boundary the finite
    Kouyoumjian-Pathak limit replaces the singular cotangent product.
    """
    beta = np.asarray(beta, dtype=float)
    kL = np.asarray(kL, dtype=float)
    N = np.round((sign * beta + math.pi) / (2.0 * math.pi * n))
    eps = sign * beta - (2.0 * math.pi * n * N - math.pi)
    singular = np.abs(eps) < 1e-5
    a = 2.0 * np.cos((2.0 * math.pi * n * N - sign * beta) / 2.0) ** 2
    arg = np.where(singular, 1.0, np.maximum(kL * a, 1e-300))
    cot_arg = (math.pi + sign * beta) / (2.0 * n)
    cot = np.where(singular, 1.0, np.cos(cot_arg)) / np.where(
        singular, 1.0, np.sin(cot_arg))
    term = cot * transition_function(arg)
    limit = (n * np.exp(1j * math.pi / 4.0)
             * (np.sqrt(2.0 * math.pi * kL) * np.sign(eps)
                - 2.0 * kL * eps * np.exp(1j * math.pi / 4.0)))
    return np.where(singular, limit, term)


def _grazing_theta(phi_from_face):
    """Fresnel angle from the normal for a ray at `phi` from a face plane."""
    phi = np.asarray(phi_from_face, dtype=float)
    graze = np.clip(np.minimum(phi, math.pi - phi), 0.0, 0.5 * math.pi)
    return np.clip(0.5 * math.pi - graze, 0.0, 0.5 * math.pi - 1e-9)


def _utd_coeff_arrays(n, s_i, s_d, phi, phi0, beta0, k, material, frequency):
    """(D_soft, D_hard), four-term form with Luebbers face weighting."""
    L = s_i * s_d / (s_i + s_d) * np.sin(beta0) ** 2
    kL = k * L
    t1 = _utd_term(+1, phi - phi0, n, kL)
    t2 = _utd_term(-1, phi - phi0, n, kL)
    t3 = _utd_term(-1, phi + phi0, n, kL)
    t4 = _utd_term(+1, phi + phi0, n, kL)
    te0, tm0 = fresnel_coefficients(_grazing_theta(phi0), material, frequency)
    ten, tmn = fresnel_coefficients(_grazing_theta(n * math.pi - phi),
                                    material, frequency)
    # hard terms use the TM convention where a perfect conductor gives +1
    pref = -np.exp(-1j * math.pi / 4.0) / (
        2.0 * n * math.sqrt(2.0 * math.pi * k) * np.sin(beta0))
    d_soft = pref * (t1 + t2 + te0 * t3 + ten * t4)
    d_hard = pref * (t1 + t2 + (-tm0) * t3 + (-tmn) * t4)
    return d_soft, d_hard


def utd_coefficient(wedge, s_i: float, s_d: float, angles, k: float, material):
    """Diagonal (D_soft, D_hard) diffraction coefficients for one wedge.

    angles = (phi, phi0, beta0): diffracted and incident azimuths
    measured from face 0 through the exterior, and the skew angle from
    the edge.  The caller applies the spreading factor
    sqrt(s_i / (s_d (s_i + s_d))) and the propagation phase.
    """
    phi, phi0, beta0 = angles
    if not (s_i > 0.0 and s_d > 0.0):
        raise ValueError("s_i and s_d must be > 0")
    if not 0.0 < beta0 < math.pi:
        raise ValueError("beta0 must be in (0, pi)")
    frequency = k * C0 / (2.0 * math.pi)
    d_s, d_h = _utd_coeff_arrays(wedge.n_param, s_i, s_d, phi, phi0, beta0, k,
                                 material, frequency)
    return complex(d_s), complex(d_h)


def er_scattered_field(tile, tx_point, rx_point, incident_field_at_tile,
                       material) -> ComplexField:
    """Lambertian effective-roughness scattering from one wall tile.

    |E_s|^2 = |E_i|^2 S^2 dS cos(th_i) cos(th_s) / (pi r_s^2); the phase
    advances by -k r_s from the incident field's phase; power is split
    equally between the two receive polarizations.
    """
    center = tile.center
    n_hat = tile.normal
    d_in = np.asarray(tx_point, float) - center
    d_out = np.asarray(rx_point, float) - center
    r_i = float(np.linalg.norm(d_in))
    r_s = float(np.linalg.norm(d_out))
    if r_i <= 0.0 or r_s <= 0.0:
        raise ValueError("tile must not coincide with a path endpoint")
    cos_i = float(np.dot(d_in, n_hat)) / r_i
    cos_s = float(np.dot(d_out, n_hat)) / r_s
    if cos_i < 0.0 or cos_s < 0.0:
        raise ValueError("endpoints must lie on the tile's outward side")
    inc = incident_field_at_tile
    amp_i = inc.magnitude
    phase_i = np.angle(inc.e1 if abs(inc.e1) >= abs(inc.e2) else inc.e2)
    k = inc.wavenumber
    s_coeff = material.scattering_coefficient
    amp = amp_i * s_coeff * math.sqrt(tile.area * cos_i * cos_s / math.pi) / r_s
    e_s = amp * np.exp(1j * (phase_i - k * r_s)) / math.sqrt(2.0)
    d_hat = d_out / r_s
    v_hat = vertical_pol(d_hat)
    h_hat = np.cross(d_hat, v_hat)
    return ComplexField(complex(e_s), complex(e_s), v_hat, h_hat, k)


# ---------------------------------------------------------------------------
# Per-path composition
# ---------------------------------------------------------------------------

def _reflect_field(E, d_in, d_out, n_hat, gte, gtm):
    """Apply Fresnel coefficients in the local incidence frame (3-vectors)."""
    e_perp = np.cross(d_in, n_hat)
    nrm = np.linalg.norm(e_perp)
    if nrm < 1e-9:
        # normal incidence: frames coincide and gte == gtm
        return gte * E
    e_perp = e_perp / nrm
    e_par_i = np.cross(e_perp, d_in)
    e_par_r = np.cross(d_out, e_perp)
    return (gte * np.dot(E, e_perp) * e_perp
            + gtm * np.dot(E, e_par_i) * e_par_r)


def _wedge_frame_angles(tab, w: int, d_in: np.ndarray, d_out: np.ndarray):
    e = tab.edge_dir[w]
    t0 = tab.tangent0[w]
    n0 = tab.wedge_n0[w]

    def _phi(u):
        up = u - np.dot(u, e) * e
        up = up / np.linalg.norm(up)
        ang = math.atan2(float(np.dot(up, n0)), float(np.dot(up, t0)))
        return ang + 2.0 * math.pi if ang < 0.0 else ang

    phi0 = _phi(-d_in)
    phi = _phi(d_out)
    beta0 = math.acos(max(-1.0, min(1.0, float(np.dot(d_in, e)))))
    return phi, phi0, beta0


def _diffract_field(E, d_in, d_out, edge_dir, d_soft, d_hard):
    phi_i = np.cross(d_in, edge_dir)
    phi_i = phi_i / np.linalg.norm(phi_i)
    beta_i = np.cross(phi_i, d_in)
    phi_d = np.cross(edge_dir, d_out)
    phi_d = phi_d / np.linalg.norm(phi_d)
    beta_d = np.cross(phi_d, d_out)
    return -(d_soft * np.dot(E, beta_i) * beta_d
             + d_hard * np.dot(E, phi_i) * phi_d)


def path_field(path: PropPath, scene: Scene, frequency: float) -> RayContribution:
    """Field at the receiver for one traced path (unit-power Tx, vertical pol).

    A line-of-sight path of length d delivers the Friis power
    (lambda / (4 pi d))^2.
    """
    lam = C0 / frequency
    k = 2.0 * math.pi / lam
    mat = scene.config.material
    tab = _tables(scene)
    verts = path.vertices
    segs = np.diff(verts, axis=0)
    lens = np.linalg.norm(segs, axis=1)
    dirs = segs / lens[:, None]
    total = float(lens.sum())

    # unfolded distances between consecutive diffractions (caustic
    # milestones); a terminal scattering tile bounds the runs, since the
    # ER kernel handles its own hop to the receiver
    has_scatter = bool(path.interactions) and (
        path.interactions[-1].kind == "scattering")
    n_pre = len(lens) - 1 if has_scatter else len(lens)
    d_slots = [i for i, it in enumerate(path.interactions)
               if it.kind == "diffraction"]
    cuts = [0] + [s + 1 for s in d_slots] + [n_pre]
    run_lens = [float(lens[cuts[i]:cuts[i + 1]].sum())
                for i in range(len(cuts) - 1)]

    E = _vpol_batch(dirs[0][None, :])[0].astype(complex)
    spread = 1.0 / run_lens[0]
    for i in range(len(d_slots)):
        s_i, s_d = run_lens[i], run_lens[i + 1]
        spread *= math.sqrt(s_i / (s_d * (s_i + s_d)))

    scatter_done = False
    d_idx = 0
    for slot, inter in enumerate(path.interactions):
        d_in = dirs[slot]
        d_out = dirs[slot + 1]
        if inter.kind == "reflection":
            _, n_hat = scene.face_plane(inter.index)
            cos_t = max(-1.0, min(1.0, float(-np.dot(d_in, n_hat))))
            theta = math.acos(cos_t)
            gte, gtm = fresnel_coefficients(min(theta, 0.5 * math.pi - 1e-12),
                                            mat, frequency)
            E = _reflect_field(E, d_in, d_out, n_hat, gte, gtm)
        elif inter.kind == "diffraction":
            w = inter.index
            phi, phi0, beta0 = _wedge_frame_angles(tab, w, d_in, d_out)
            s_i, s_d = run_lens[d_idx], run_lens[d_idx + 1]
            d_s, d_h = _utd_coeff_arrays(tab.wedge_n[w], s_i, s_d, phi, phi0,
                                         beta0, k, mat, frequency)
            E = _diffract_field(E, d_in, d_out, tab.edge_dir[w],
                                complex(d_s), complex(d_h))
            d_idx += 1
        else:  # scattering: terminal hop through the ER kernel
            tile = scene.tiles[inter.index]
            pre_len = float(lens[:slot + 1].sum())
            amp = E0_SOURCE * spread * np.exp(-1j * k * pre_len)
            v_in = vertical_pol(d_in)
            h_in = np.cross(d_in, v_in)
            inc = ComplexField(complex(amp * np.dot(E, v_in)),
                               complex(amp * np.dot(E, h_in)),
                               v_in, h_in, k)
            out = er_scattered_field(tile, verts[slot], verts[slot + 2],
                                     inc, mat)
            e_v = out.e1
            e_h = out.e2
            power = received_power(e_v, e_h, lam)
            return RayContribution(path, path.mechanism_class, complex(e_v),
                                   complex(e_h), power, total / C0)

    assert not scatter_done
    amp = E0_SOURCE * spread * np.exp(-1j * k * total)
    d_last = dirs[-1]
    e_v = amp * np.dot(E, vertical_pol(d_last))
    e_h = amp * np.dot(E, horizontal_pol(d_last))
    power = received_power(e_v, e_h, lam)
    return RayContribution(path, path.mechanism_class, complex(e_v),
                           complex(e_h), power, total / C0)


def path_contributions(tx, rx, scene: Scene, limits: TraceLimits,
                       frequency: float | None = None,
                       diagnostics=None) -> list[RayContribution]:
    """Trace all mechanisms for one receiver and evaluate their fields."""
    if frequency is None:
        frequency = scene.config.frequency
    paths = trace_all(tx, rx, scene, limits, diagnostics)
    return [path_field(p, scene, frequency) for p in paths]


# ---------------------------------------------------------------------------
# Batched field assembly over a receiver grid
# ---------------------------------------------------------------------------

@dataclass
class FieldSums:
    """Coherent vertical-field sum and per-class incoherent powers."""

    e_v_total: np.ndarray                  # (N,) complex
    class_power: dict                      # class -> (N,) power [W]
    n_paths: np.ndarray                    # (N,) int

    @property
    def envelope(self) -> np.ndarray:
        return np.abs(self.e_v_total)


def _batch_dirs(verts):
    segs = np.diff(verts, axis=2)
    lens = np.linalg.norm(segs, axis=3)
    dirs = segs / np.maximum(lens, 1e-300)[..., None]
    return dirs, lens


def _dot(a, b):
    return np.einsum("...j,...j->...", a, b)


def _group_fields(group, scene, tab, frequency, k, mat):
    """Vertical/horizontal field components (C, N) for one solved group."""
    pattern = group.pattern
    objs = group.objects
    verts = group.vertices
    dirs, lens = _batch_dirs(verts)
    C, N = lens.shape[:2]

    d_slots = [i for i, kind in enumerate(pattern) if kind == "D"]
    cuts = [0] + [s + 1 for s in d_slots] + [lens.shape[2]]
    run_lens = [lens[:, :, cuts[i]:cuts[i + 1]].sum(axis=2)
                for i in range(len(cuts) - 1)]

    E = _vpol_batch(dirs[:, :, 0, :]).astype(complex)
    spread = 1.0 / run_lens[0]
    for i in range(len(d_slots)):
        s_i, s_d = run_lens[i], run_lens[i + 1]
        spread = spread * np.sqrt(s_i / (s_d * (s_i + s_d)))

    d_idx = 0
    for slot, kind in enumerate(pattern):
        d_in = dirs[:, :, slot, :]
        d_out = dirs[:, :, slot + 1, :]
        if kind == "R":
            n_hat = tab.normal[objs[:, slot]][:, None, :]
            cos_t = np.clip(-_dot(d_in, n_hat), -1.0, 1.0)
            theta = np.minimum(np.arccos(cos_t), 0.5 * math.pi - 1e-12)
            gte, gtm = fresnel_coefficients(theta, mat, frequency)
            e_perp = np.cross(d_in, np.broadcast_to(n_hat, d_in.shape))
            nrm = np.linalg.norm(e_perp, axis=2, keepdims=True)
            degen = nrm[..., 0] < 1e-9
            e_perp = np.where(degen[..., None], _vpol_batch(d_in), e_perp / np.maximum(nrm, 1e-300))
            e_par_i = np.cross(e_perp, d_in)
            e_par_r = np.cross(d_out, e_perp)
            # at normal incidence gte == gtm, so the frame choice is moot
            E = (gte[..., None] * _dot(E, e_perp)[..., None] * e_perp
                 + gtm[..., None] * _dot(E, e_par_i)[..., None] * e_par_r)
        else:
            w = objs[:, slot]
            e = tab.edge_dir[w][:, None, :]
            t0 = tab.tangent0[w][:, None, :]
            n0 = tab.wedge_n0[w][:, None, :]
            n_par = tab.wedge_n[w][:, None]

            def _phi_of(u):
                up = u - _dot(u, e)[..., None] * e
                up = up / np.maximum(np.linalg.norm(up, axis=2, keepdims=True),
                                     1e-300)
                ang = np.arctan2(_dot(up, n0), _dot(up, t0))
                return np.where(ang < 0.0, ang + 2.0 * math.pi, ang)

            phi0 = _phi_of(-d_in)
            phi = _phi_of(d_out)
            beta0 = np.arccos(np.clip(_dot(d_in, np.broadcast_to(e, d_in.shape)),
                                      -1.0, 1.0))
            s_i, s_d = run_lens[d_idx], run_lens[d_idx + 1]
            d_s, d_h = _utd_coeff_arrays(n_par, s_i, s_d, phi, phi0, beta0, k,
                                         mat, frequency)
            phi_i = np.cross(d_in, np.broadcast_to(e, d_in.shape))
            phi_i = phi_i / np.maximum(np.linalg.norm(phi_i, axis=2,
                                                      keepdims=True), 1e-300)
            beta_i = np.cross(phi_i, d_in)
            phi_d = np.cross(np.broadcast_to(e, d_out.shape), d_out)
            phi_d = phi_d / np.maximum(np.linalg.norm(phi_d, axis=2,
                                                      keepdims=True), 1e-300)
            beta_d = np.cross(phi_d, d_out)
            E = -(d_s[..., None] * _dot(E, beta_i)[..., None] * beta_d
                  + d_h[..., None] * _dot(E, phi_i)[..., None] * phi_d)
            d_idx += 1

    total = lens.sum(axis=2)
    amp = E0_SOURCE * spread * np.exp(-1j * k * total)
    d_last = dirs[:, :, -1, :]
    e_v = amp * _dot(E, _vpol_batch(d_last).astype(complex))
    e_h = amp * _dot(E, _hpol_batch(d_last).astype(complex))
    return e_v, e_h


def _scatter_fields(batch: TraceBatch, tab, frequency, k, mat):
    """Per-candidate scattering fields: returns (kind, e_v, e_h, valid)."""
    sc = batch.scatter
    scene = batch.scene
    rx = batch.rx
    C = sc.size
    N = len(rx)
    if C == 0:
        z = np.zeros((0, N), dtype=complex)
        return np.zeros(0, np.int8), z, z, np.zeros((0, N), dtype=bool)

    centers = scene.tile_center[sc.tile]                     # (C, 3)
    normals = scene.tile_normal[sc.tile]
    areas = scene.tile_area[sc.tile]
    tx = batch.tx

    # incident complex amplitude (per candidate) at the tile
    amp_i = np.zeros(C, dtype=complex)
    cos_i = np.zeros(C)

    for kind in (0, 1, 2):
        idx = np.nonzero(sc.kind == kind)[0]
        if not len(idx):
            continue
        c_pts = centers[idx]
        n_hat = normals[idx]
        if kind == 0:
            d_in = c_pts - tx
            r = np.linalg.norm(d_in, axis=1)
            d_in /= r[:, None]
            # vertical launch pol is unit magnitude; phase from spreading
            amp_i[idx] = E0_SOURCE / r * np.exp(-1j * k * r)
            cos_i[idx] = -_dot(d_in, n_hat)
        elif kind == 1:
            q = sc.pre_point[idx]
            pl = sc.pre_obj[idx]
            d1 = q - tx
            r1 = np.linalg.norm(d1, axis=1)
            d1 /= r1[:, None]
            d2 = c_pts - q
            r2 = np.linalg.norm(d2, axis=1)
            d2 /= r2[:, None]
            n_f = tab.normal[pl]
            cos_t = np.clip(-_dot(d1, n_f), -1.0, 1.0)
            theta = np.minimum(np.arccos(cos_t), 0.5 * math.pi - 1e-12)
            gte, gtm = fresnel_coefficients(theta, mat, frequency)
            E = _vpol_batch(d1).astype(complex)
            e_perp = np.cross(d1, n_f)
            nrm = np.linalg.norm(e_perp, axis=1, keepdims=True)
            degen = nrm[:, 0] < 1e-9
            e_perp = np.where(degen[:, None], _vpol_batch(d1),
                              e_perp / np.maximum(nrm, 1e-300))
            e_par_i = np.cross(e_perp, d1)
            e_par_r = np.cross(d2, e_perp)
            Ev = (gte[:, None] * _dot(E, e_perp)[:, None] * e_perp
                  + gtm[:, None] * _dot(E, e_par_i)[:, None] * e_par_r)
            mag, ph = _dominant_vh(Ev, d2)
            amp_i[idx] = (E0_SOURCE / (r1 + r2) * mag
                          * np.exp(1j * (ph - k * (r1 + r2))))
            cos_i[idx] = -_dot(d2, n_hat)
        else:
            P = sc.pre_point[idx]
            w = sc.pre_obj[idx]
            d1 = P - tx
            r1 = np.linalg.norm(d1, axis=1)
            d1 /= r1[:, None]
            d2 = c_pts - P
            r2 = np.linalg.norm(d2, axis=1)
            d2 /= r2[:, None]
            e = tab.edge_dir[w]
            t0 = tab.tangent0[w]
            n0 = tab.wedge_n0[w]

            def _phi_of(u):
                up = u - _dot(u, e)[:, None] * e
                up /= np.maximum(np.linalg.norm(up, axis=1, keepdims=True),
                                 1e-300)
                ang = np.arctan2(_dot(up, n0), _dot(up, t0))
                return np.where(ang < 0.0, ang + 2.0 * math.pi, ang)

            phi0 = _phi_of(-d1)
            phi = _phi_of(d2)
            beta0 = np.arccos(np.clip(_dot(d1, e), -1.0, 1.0))
            d_s, d_h = _utd_coeff_arrays(tab.wedge_n[w], r1, r2, phi, phi0,
                                         beta0, k, mat, frequency)
            E = _vpol_batch(d1).astype(complex)
            phi_i = np.cross(d1, e)
            phi_i /= np.maximum(np.linalg.norm(phi_i, axis=1, keepdims=True),
                                1e-300)
            beta_i = np.cross(phi_i, d1)
            phi_d = np.cross(e, d2)
            phi_d /= np.maximum(np.linalg.norm(phi_d, axis=1, keepdims=True),
                                1e-300)
            beta_d = np.cross(phi_d, d2)
            Ev = -(d_s[:, None] * _dot(E, beta_i)[:, None] * beta_d
                   + d_h[:, None] * _dot(E, phi_i)[:, None] * phi_d)
            spread = np.sqrt(1.0 / (r1 * r2 * (r1 + r2)))
            mag, ph = _dominant_vh(Ev, d2)
            amp_i[idx] = (E0_SOURCE * spread * mag
                          * np.exp(1j * (ph - k * (r1 + r2))))
            cos_i[idx] = -_dot(d2, n_hat)

    # final hop to each receiver
    d_out = rx[None, :, :] - centers[:, None, :]             # (C, N, 3)
    r_s = np.linalg.norm(d_out, axis=2)
    d_out = d_out / np.maximum(r_s, 1e-300)[..., None]
    cos_s = _dot(d_out, normals[:, None, :])
    valid = batch.tile_vis[sc.tile] & (cos_s > 0.0) & (cos_i[:, None] > 0.0)
    s_coeff = mat.scattering_coefficient
    amp = (np.abs(amp_i)[:, None] * s_coeff
           * np.sqrt(areas[:, None] * cos_i[:, None] * np.maximum(cos_s, 0.0)
                     / math.pi) / np.maximum(r_s, 1e-300))
    phase = np.angle(amp_i)[:, None] - k * r_s
    e_s = amp * np.exp(1j * phase) / math.sqrt(2.0)
    e_s = np.where(valid, e_s, 0.0)
    return sc.kind, e_s, e_s.copy(), valid


def _dominant_vh(Ev: np.ndarray, d_in: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and dominant-component phase in the (v, h) frame of d_in.

    Matches the convention of `er_scattered_field` applied to a
    ComplexField built from the same frame.
    """
    v = _vpol_batch(d_in)
    h = np.cross(d_in, v)
    c1 = _dot(Ev, v.astype(complex))
    c2 = _dot(Ev, h.astype(complex))
    mag = np.sqrt(np.abs(c1) ** 2 + np.abs(c2) ** 2)
    dom_first = np.abs(c1) >= np.abs(c2)
    ph = np.where(dom_first, np.angle(c1), np.angle(c2))
    return mag, ph


_SCATTER_CLASS = {0: "S", 1: "RS", 2: "DS"}


def field_sums_batch(batch: TraceBatch, frequency: float | None = None) -> FieldSums:
    """Coherent vertical sum and per-class incoherent power per receiver."""
    scene = batch.scene
    if frequency is None:
        frequency = scene.config.frequency
    lam = C0 / frequency
    k = 2.0 * math.pi / lam
    mat = scene.config.material
    tab = _tables(scene)
    N = len(batch.rx)

    e_v_total = np.zeros(N, dtype=complex)
    class_power = {c: np.zeros(N) for c in CLASS_ORDER}
    n_paths = np.zeros(N, dtype=int)
    a_eff = lam ** 2 / (4.0 * math.pi) / (2.0 * ETA0)

    if batch.los_valid.any():
        d = batch.rx - batch.tx
        r = np.linalg.norm(d, axis=1)
        amp = E0_SOURCE / r * np.exp(-1j * k * r)
        e_v = np.where(batch.los_valid, amp, 0.0)
        e_v_total += e_v
        class_power["L"] += np.abs(e_v) ** 2 * a_eff
        n_paths += batch.los_valid.astype(int)

    from satray.tracer import mechanism_class as _mc

    for g in batch.groups:
        e_v, e_h = _group_fields(g, scene, tab, frequency, k, mat)
        e_v = np.where(g.valid, e_v, 0.0)
        e_h = np.where(g.valid, e_h, 0.0)
        cls = _mc(g.interactions(tab, 0))
        e_v_total += e_v.sum(axis=0)
        class_power[cls] += ((np.abs(e_v) ** 2 + np.abs(e_h) ** 2)
                             * a_eff).sum(axis=0)
        n_paths += g.valid.sum(axis=0)

    kinds, e_v, e_h, valid = _scatter_fields(batch, tab, frequency, k, mat)
    for kind in (0, 1, 2):
        rows = kinds == kind
        if rows.any():
            cls = _SCATTER_CLASS[kind]
            e_v_total += e_v[rows].sum(axis=0)
            class_power[cls] += ((np.abs(e_v[rows]) ** 2
                                  + np.abs(e_h[rows]) ** 2) * a_eff).sum(axis=0)
            n_paths += valid[rows].sum(axis=0)

    return FieldSums(e_v_total, class_power, n_paths)
