"""Electrostatic field solver over heterogeneous permittivity grids.

Solves div(eps grad phi) = 0 on a structured voxel grid with Dirichlet
electrodes (excitation / ground / shield) inside a grounded vacuum box,
by conjugate gradients on the energy functional with an algebraic
multigrid preconditioner.  Face permittivities are harmonic means of the
adjacent voxels; conductors enter as a very-high-permittivity sentinel.

Capacitance comes out two independent ways: from the stored field energy
(C = 2W/V^2) and from the flux of eps*E through a Gauss box around the
driven electrode (C = Q/V).  Their agreement is a convergence check used
throughout the tests.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pyamg
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from .electrodes import ElectrodeAssembly, Footprint, footprint, standard_assemblies
from .errors import ConvergenceError, OutOfDomainError
from .scene import PermittivityGrid

EPS0 = 8.8541878128e-12  # F/m


@dataclass(frozen=True)
class SolverConfig:
    rel_residual_tol: float = 1e-8
    max_iterations: int = 2000
    boundary: str = "grounded_box"
    conductor_eps: float = 1e5
    # vacuum-box padding around the sample grid, mm
    pad_xy_mm: float = 20.0
    pad_top_mm: float = 12.0
    pad_bottom_mm: float = 16.0
    # grow pad_xy until the domain spans at least this multiple of the
    # electrode footprint in x and y
    min_domain_factor: float = 3.0

    def __post_init__(self):
        if not 0 < self.rel_residual_tol < 1:
            raise ValueError("rel_residual_tol must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.boundary != "grounded_box":
            raise ValueError(f"unsupported boundary {self.boundary!r}")


@dataclass
class PotentialField:
    """Converged potential on the padded solver domain plus its geometry.

    phi/eps are (nx, ny, nz) over the padded domain; the sample occupies
    z planes [k_surface, k_surface + nz_sample) and x-y indices offset by
    pad_ij from the source grid.  center_ij is the head voxel.
    """

    phi: np.ndarray
    eps: np.ndarray
    fixed: np.ndarray
    pos_mask: np.ndarray
    voxel_mm: float
    excitation_v: float
    k_surface: int
    nz_sample: int
    pad_ij: tuple[int, int]
    center_ij: tuple[int, int]
    iterations_used: int
    achieved_residual: float
    grid: Optional[PermittivityGrid] = None
    assembly: Optional[ElectrodeAssembly] = None
    head_position_mm: tuple[float, float] = (0.0, 0.0)


# ---------------------------------------------------------------------------
# Core Dirichlet solve
# ---------------------------------------------------------------------------


def _face_weights(eps, axis):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    e1, e2 = eps[tuple(lo)], eps[tuple(hi)]
    return 2.0 * e1 * e2 / (e1 + e2), tuple(lo), tuple(hi)


def _solve_dirichlet(eps, fixed, vals, config: SolverConfig, x0_full=None):
    """Minimize the discrete field energy subject to fixed potentials.

    Returns (phi_full, iterations, relative_residual).
    """
    free = ~fixed
    nfree = int(free.sum())
    idx = np.full(eps.shape, -1, dtype=np.int64)
    idx[free] = np.arange(nfree)

    diag = np.zeros(nfree)
    b = np.zeros(nfree)
    rows, cols, data = [], [], []
    for axis in range(3):
        w, lo, hi = _face_weights(eps, axis)
        f1, f2 = fixed[lo], fixed[hi]
        i1, i2 = idx[lo], idx[hi]
        v1, v2 = vals[lo], vals[hi]

        m1, m2 = ~f1, ~f2
        diag += np.bincount(i1[m1], weights=w[m1], minlength=nfree)
        diag += np.bincount(i2[m2], weights=w[m2], minlength=nfree)

        both = m1 & m2
        rows.append(i1[both].ravel())
        cols.append(i2[both].ravel())
        data.append(-w[both].ravel())

        lo_free = m1 & f2
        b += np.bincount(i1[lo_free], weights=(w * v2)[lo_free], minlength=nfree)
        hi_free = m2 & f1
        b += np.bincount(i2[hi_free], weights=(w * v1)[hi_free], minlength=nfree)

    off = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nfree, nfree),
    )
    a = (off + off.T + sparse.diags(diag)).tocsr()

    ml = pyamg.smoothed_aggregation_solver(a, max_coarse=300)
    precond = ml.aspreconditioner(cycle="V")

    x0 = None
    if x0_full is not None:
        x0 = np.ascontiguousarray(x0_full[free])

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = cg(
        a,
        b,
        x0=x0,
        rtol=config.rel_residual_tol,
        atol=0.0,
        maxiter=config.max_iterations,
        M=precond,
        callback=count,
    )
    bnorm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(b - a @ x)) / bnorm if bnorm > 0 else 0.0
    if info != 0 or residual > config.rel_residual_tol:
        raise ConvergenceError("field solve did not converge", residual, iters)

    phi = np.array(vals, dtype=float)
    phi[free] = x
    # strip sub-residual iteration noise; the converged system obeys the
    # discrete maximum principle exactly
    np.clip(phi, float(vals.min()), float(vals.max()), out=phi)
    return phi, iters, residual


# ---------------------------------------------------------------------------
# Assembly-over-grid solve
# ---------------------------------------------------------------------------


def _layer_offset_vox(z_plane_mm, h):
    """Voxel layers above the surface for a plane at negative z (mm).

    The plane's layer is the one whose lower face is nearest the plane
    (ties round away from the surface), so lift_off=0 touches the top
    sample layer.
    """
    return int(math.floor(-z_plane_mm / h + 0.5)) + 1


def solve(
    grid: PermittivityGrid,
    assembly: ElectrodeAssembly,
    head_position_mm: tuple[float, float],
    config: SolverConfig = SolverConfig(),
    initial_field: Optional[PotentialField] = None,
) -> PotentialField:
    """Solve the potential for one assembly placement over a sample grid.

    The sample grid is embedded in a grounded vacuum box: pad_xy around,
    pad_top above the electrode plane, pad_bottom below the sample.
    """
    fp = footprint(assembly, grid, head_position_mm)
    h = grid.voxel_size_mm
    nx, ny, nz = grid.dims

    fx, fy = assembly.footprint_extent_mm()
    pad = config.pad_xy_mm
    need_x = (config.min_domain_factor * fx - nx * h) / 2.0
    need_y = (config.min_domain_factor * fy - ny * h) / 2.0
    pad = max(pad, need_x, need_y)
    pad_n = max(int(math.ceil(pad / h)), 1)

    n_above = _layer_offset_vox(fp.z_plane_mm, h)  # electrode layer included
    if assembly.shield:
        n_above = max(n_above, _layer_offset_vox(fp.shield_z_plane_mm, h))
    pad_top_n = max(int(round(config.pad_top_mm / h)), 2)
    pad_bot_n = max(int(round(config.pad_bottom_mm / h)), 2)

    nxp, nyp = nx + 2 * pad_n, ny + 2 * pad_n
    nzp = pad_top_n + n_above + nz + pad_bot_n
    k_surface = pad_top_n + n_above

    eps = np.full((nxp, nyp, nzp), grid.ambient_eps)
    sample_eps = np.where(grid.conductor_mask, config.conductor_eps, grid.eps_r)
    eps[pad_n : pad_n + nx, pad_n : pad_n + ny, k_surface : k_surface + nz] = sample_eps

    fixed = np.zeros(eps.shape, dtype=bool)
    vals = np.zeros(eps.shape)
    # grounded box: the outer voxel shell
    for axis in range(3):
        shell = [slice(None)] * 3
        shell[axis] = 0
        fixed[tuple(shell)] = True
        shell[axis] = -1
        fixed[tuple(shell)] = True

    def place(cells, k, value, as_positive=False):
        i = cells[:, 0] + pad_n
        j = cells[:, 1] + pad_n
        fixed[i, j, k] = True
        vals[i, j, k] = value
        if as_positive:
            pos_mask[i, j, k] = True

    pos_mask = np.zeros(eps.shape, dtype=bool)
    k_e = k_surface - _layer_offset_vox(fp.z_plane_mm, h)
    place(fp.positive, k_e, assembly.excitation_v, as_positive=True)
    place(fp.negative, k_e, 0.0)
    if assembly.shield and len(fp.shield):
        # strictly behind (above) the electrode layer, even at coarse voxels
        k_s = min(k_surface - _layer_offset_vox(fp.shield_z_plane_mm, h), k_e - 1)
        if k_s < 1:
            raise OutOfDomainError("shield plane falls outside the padded domain")
        place(fp.shield, k_s, 0.0)

    x0 = initial_field.phi if initial_field is not None else None
    if x0 is not None and x0.shape != eps.shape:
        x0 = None
    phi, iters, residual = _solve_dirichlet(eps, fixed, vals, config, x0)

    hx = int(round(head_position_mm[0] / h))
    hy = int(round(head_position_mm[1] / h))
    return PotentialField(
        phi=phi,
        eps=eps,
        fixed=fixed,
        pos_mask=pos_mask,
        voxel_mm=h,
        excitation_v=assembly.excitation_v,
        k_surface=k_surface,
        nz_sample=nz,
        pad_ij=(pad_n, pad_n),
        center_ij=(hx + pad_n, hy + pad_n),
        iterations_used=iters,
        achieved_residual=residual,
        grid=grid,
        assembly=assembly,
        head_position_mm=tuple(head_position_mm),
    )


# ---------------------------------------------------------------------------
# Capacitance extraction
# ---------------------------------------------------------------------------


def capacitance_energy(field: PotentialField) -> float:
    """C = 2W/V^2 from the stored field energy, in pF."""
    h_m = field.voxel_mm * 1e-3
    v = field.excitation_v
    total = 0.0
    for axis in range(3):
        w, lo, hi = _face_weights(field.eps, axis)
        dphi = field.phi[hi] - field.phi[lo]
        total += float(np.sum(w * dphi * dphi))
    return EPS0 * h_m * total / (v * v) * 1e12


def _gauss_region(field: PotentialField) -> np.ndarray:
    """Cells enclosed by the Gauss surface around the driven electrode.

    The electrode set dilated by up to two voxels, shrunk if that would
    swallow cells held at other potentials (close separations).
    """
    other_fixed = field.fixed & ~field.pos_mask
    structure = np.ones((3, 3, 3), dtype=bool)
    for d in (2, 1):
        region = ndimage.binary_dilation(field.pos_mask, structure, iterations=d)
        if not (region & other_fixed).any():
            return region
    return field.pos_mask.copy()


def capacitance_charge(field: PotentialField) -> float:
    """C = Q/V from the eps*E flux through a Gauss box, in pF."""
    region = _gauss_region(field)
    h_m = field.voxel_mm * 1e-3
    q = 0.0
    for axis in range(3):
        w, lo, hi = _face_weights(field.eps, axis)
        dphi_out_hi = field.phi[lo] - field.phi[hi]  # flux lo -> hi
        cross_hi = region[lo] & ~region[hi]
        q += float(np.sum(w[cross_hi] * dphi_out_hi[cross_hi]))
        cross_lo = ~region[lo] & region[hi]
        q -= float(np.sum(w[cross_lo] * dphi_out_hi[cross_lo]))
    return EPS0 * h_m * q / field.excitation_v * 1e12


# ---------------------------------------------------------------------------
# Field profiles and sensitivity
# ---------------------------------------------------------------------------


class Profile(NamedTuple):
    depth_mm: np.ndarray
    e_v_per_mm: np.ndarray


def _field_magnitude(field: PotentialField) -> np.ndarray:
    gx, gy, gz = np.gradient(field.phi, field.voxel_mm)
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def centerline_profile(field: PotentialField) -> Profile:
    """|E| down the vertical line through the inter-electrode midpoint,
    one entry per voxel plane from the surface to the bottom of the sample."""
    emag = _field_magnitude(field)
    i, j = field.center_ij
    ks = slice(field.k_surface, field.k_surface + field.nz_sample)
    depths = (np.arange(field.nz_sample) + 0.5) * field.voxel_mm
    return Profile(depth_mm=depths, e_v_per_mm=emag[i, j, ks])


@dataclass
class SensitivityKernel:
    """First-order capacitance perturbation kernel on the solver domain.

    s = |grad phi0|^2 / V^2 (1/m^2), so a permittivity change de_r in a
    voxel moves the capacitance by ~ eps0 * de_r * s * voxel_volume.
    Restricted to the sample z planes; x-y covers the padded domain with
    center_ij at the head.
    """

    s: np.ndarray
    center_ij: tuple[int, int]
    k_surface: int
    voxel_mm: float
    background_c_pf: float

    def predict_delta_c(self, delta_eps, head_voxel_ij) -> float:
        """Shifted inner product of the kernel with a scene contrast field.

        delta_eps is (nx, ny, nz) over the scene grid; indexing outside
        the scene is clamped (materials continue laterally).  Returns the
        predicted capacitance change in pF.
        """
        nxs, nys, nzs = delta_eps.shape
        nxk, nyk, nzk = self.s.shape
        si, sj = head_voxel_ij
        ci, cj = self.center_ij
        ix = np.clip(si + np.arange(nxk) - ci, 0, nxs - 1)
        iy = np.clip(sj + np.arange(nyk) - cj, 0, nys - 1)
        nz = min(nzk, nzs)
        window = delta_eps[np.ix_(ix, iy, np.arange(nz))]
        vol = (self.voxel_mm * 1e-3) ** 3
        return float(EPS0 * vol * np.sum(self.s[:, :, :nz] * window) * 1e12)


def sensitivity_map(field: PotentialField) -> SensitivityKernel:
    """Perturbation kernel from a solve over the object-free background.

    The kernel is the exact derivative of the discrete stored energy with
    respect to each cell's permittivity (differentiating the harmonic-mean
    face weights), which on a uniform background reduces to the squared
    gradient magnitude of phi0 over V^2.  Taking the derivative of the
    discrete system rather than a finite-difference gradient keeps the
    prediction faithful for inclusions only a few voxels across.
    """
    phi = field.phi
    eps = field.eps
    h_m = field.voxel_mm * 1e-3
    s = np.zeros_like(phi)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        dphi2 = (phi[hi] - phi[lo]) ** 2
        e1, e2 = eps[lo], eps[hi]
        denom = (e1 + e2) ** 2
        s[lo] += 2.0 * e2 * e2 / denom * dphi2
        s[hi] += 2.0 * e1 * e1 / denom * dphi2
    s /= field.excitation_v**2 * h_m**2
    # restrict to the source-grid region: the padding is vacuum by
    # construction, so no permittivity perturbation can ever live there
    pi, pj = field.pad_ij
    nx, ny, _ = s.shape
    ks = slice(field.k_surface, field.k_surface + field.nz_sample)
    return SensitivityKernel(
        s=np.ascontiguousarray(s[pi : nx - pi, pj : ny - pj, ks]),
        center_ij=(field.center_ij[0] - pi, field.center_ij[1] - pj),
        k_surface=field.k_surface,
        voxel_mm=field.voxel_mm,
        background_c_pf=capacitance_energy(field),
    )


# ---------------------------------------------------------------------------
# Parameter sweeps
# ---------------------------------------------------------------------------


class SweepRow(NamedTuple):
    value: object
    capacitance_pf: float
    profile: Profile


SWEEP_PARAMETERS = ("separation", "lift_off", "shape")


def sweep_assembly(base: ElectrodeAssembly, parameter: str, value) -> ElectrodeAssembly:
    if parameter == "separation":
        return dataclasses.replace(base, separation_mm=float(value))
    if parameter == "lift_off":
        return dataclasses.replace(base, lift_off_mm=float(value))
    if parameter == "shape":
        name = str(value)
        presets = standard_assemblies()
        key = name if name in presets else f"{name}_default"
        if key not in presets:
            raise KeyError(f"unknown shape preset {value!r}")
        return presets[key]
    raise ValueError(f"unknown sweep parameter {parameter!r}; use {SWEEP_PARAMETERS}")


def sweep(
    grid: PermittivityGrid,
    base: ElectrodeAssembly,
    parameter: str,
    values: Sequence,
    head_position_mm: tuple[float, float],
    config: SolverConfig = SolverConfig(),
) -> list[SweepRow]:
    """One solve per value, rows in input order."""
    rows = []
    for value in values:
        assembly = sweep_assembly(base, parameter, value)
        try:
            field = solve(grid, assembly, head_position_mm, config)
        except ConvergenceError as e:
            raise ConvergenceError(
                f"sweep {parameter}={value!r} failed: {e}",
                e.achieved_residual,
                e.iterations,
            ) from e
        rows.append(SweepRow(value, capacitance_energy(field), centerline_profile(field)))
    return rows


# ---------------------------------------------------------------------------
# Parallel-plate oracle configuration
# ---------------------------------------------------------------------------


def solve_plate_capacitor(
    width_mm: float = 20.0,
    height_mm: float = 20.0,
    gap_mm: float = 2.0,
    voxel_mm: float = 1.0,
    domain_factor: float = 3.0,
    excitation_v: float = 1.0,
    config: SolverConfig = SolverConfig(),
) -> PotentialField:
    """Face-to-face plate pair in vacuum inside a grounded box.

    This is the geometry with a textbook answer (C >= eps0*A/d); the
    excess over the slab formula is fringing.  The pair is driven
    antisymmetrically (+V/2, -V/2) so the grounded box sits on the
    pair's own zero equipotential and stands in for a far boundary.
    """
    h = voxel_mm
    nx = int(round(domain_factor * width_mm / h))
    ny = int(round(domain_factor * height_mm / h))
    nz = int(round(domain_factor * max(width_mm, height_mm) / h))
    gap_n = max(int(round(gap_mm / h)), 1)

    eps = np.ones((nx, ny, nz))
    fixed = np.zeros(eps.shape, dtype=bool)
    vals = np.zeros(eps.shape)
    for axis in range(3):
        shell = [slice(None)] * 3
        shell[axis] = 0
        fixed[tuple(shell)] = True
        shell[axis] = -1
        fixed[tuple(shell)] = True

    wi = int(round(width_mm / h))
    hj = int(round(height_mm / h))
    i0 = (nx - wi) // 2
    j0 = (ny - hj) // 2
    k1 = (nz - gap_n) // 2
    k2 = k1 + gap_n

    pos_mask = np.zeros(eps.shape, dtype=bool)
    fixed[i0 : i0 + wi, j0 : j0 + hj, k1] = True
    vals[i0 : i0 + wi, j0 : j0 + hj, k1] = 0.5 * excitation_v
    pos_mask[i0 : i0 + wi, j0 : j0 + hj, k1] = True
    fixed[i0 : i0 + wi, j0 : j0 + hj, k2] = True
    vals[i0 : i0 + wi, j0 : j0 + hj, k2] = -0.5 * excitation_v

    phi, iters, residual = _solve_dirichlet(eps, fixed, vals, config)
    return PotentialField(
        phi=phi,
        eps=eps,
        fixed=fixed,
        pos_mask=pos_mask,
        voxel_mm=h,
        excitation_v=excitation_v,
        k_surface=k2,
        nz_sample=nz - k2 - 1,
        pad_ij=(0, 0),
        center_ij=(nx // 2, ny // 2),
        iterations_used=iters,
        achieved_residual=residual,
    )


def parallel_plate_analytic_pf(width_mm=20.0, height_mm=20.0, gap_mm=2.0) -> float:
    """eps0 * A / d for the ideal slab, in pF."""
    area_m2 = width_mm * height_mm * 1e-6
    return EPS0 * area_m2 / (gap_mm * 1e-3) * 1e12
