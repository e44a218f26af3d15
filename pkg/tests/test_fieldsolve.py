import numpy as np
import pytest
from scipy.constants import epsilon_0

from cpwloss import RegionId, build_mesh, build_stack, solve_potential
from cpwloss.errors import MeshError
from cpwloss.fieldsolve import (
    CELL_AIR, CELL_METAL, Mesh, boundary_fields, cpw_capacitance_conformal,
    dump_fields_csv,
)


def _parallel_plate_mesh(d=1e-6, width=1e-6, n=41, eps_r=1.0):
    """Two flat electrodes at y=0 (1 V) and y=d (0 V), uniform dielectric."""
    x = np.linspace(0.0, width, n)
    y = np.linspace(0.0, d, n)
    eps = np.full((n - 1, n - 1), eps_r)
    region = np.full((n - 1, n - 1), CELL_AIR, dtype=np.int8)
    dirichlet = np.zeros((n, n), dtype=bool)
    value = np.zeros((n, n))
    dirichlet[:, 0] = True
    value[:, 0] = 1.0
    dirichlet[:, -1] = True
    return Mesh(x=x, y=y, eps=eps, region=region, dirichlet=dirichlet,
                dirichlet_value=value)


def test_parallel_plate_linear_potential():
    d = 1e-6
    mesh = _parallel_plate_mesh(d=d)
    sol = solve_potential(mesh)
    # potential linear in y, field magnitude V/d, both to 0.1%
    expected = 1.0 - mesh.y / d
    assert np.allclose(sol.phi, expected[None, :], atol=1e-3)
    assert np.allclose(np.abs(sol.ey), 1.0 / d, rtol=1e-3)
    assert np.max(np.abs(sol.ex)) < 1e-3 / d


def test_parallel_plate_capacitance():
    d, width = 1e-6, 1e-6
    mesh = _parallel_plate_mesh(d=d, width=width, eps_r=4.0)
    sol = solve_potential(mesh)
    assert sol.capacitance_per_length == pytest.approx(
        4.0 * epsilon_0 * width / d, rel=1e-6)


def test_mesh_cell_count_level1():
    mesh = build_mesh(build_stack({}), 1)
    assert mesh.n_cells >= 1e4


def test_refinement_doubles_cells_near_corners():
    stack = build_stack({})
    w2 = stack.trace_width / 2
    tm = stack.metal_thickness

    def near_corner_cells(mesh):
        xm = 0.5 * (mesh.x[:-1] + mesh.x[1:])
        ym = 0.5 * (mesh.y[:-1] + mesh.y[1:])
        nx = np.count_nonzero(np.abs(xm - w2) < 200e-9)
        ny = np.count_nonzero((ym > tm - 200e-9) & (ym < tm + 200e-9))
        return nx * ny

    m1 = build_mesh(stack, 1)
    m2 = build_mesh(stack, 2)
    assert near_corner_cells(m2) >= 2 * near_corner_cells(m1)


def test_finest_cells_sit_at_conductor_corners():
    stack = build_stack({})
    mesh = build_mesh(stack, 1)
    hx = np.diff(mesh.x)
    i_corner = np.searchsorted(mesh.x, stack.trace_width / 2)
    assert hx[i_corner - 1] == pytest.approx(hx.min(), rel=0.5)
    # grading rule: finest cells no larger than trace_width / 50
    assert hx.min() <= stack.trace_width / 50


def test_degenerate_geometry_fails_mesh():
    stack = build_stack({})
    object.__setattr__(stack, "gap", 0.0)  # bypass constructor validation
    with pytest.raises(MeshError):
        build_mesh(stack, 1)
    with pytest.raises(MeshError):
        build_mesh(build_stack({}), 0)


def test_cpw_capacitance_vs_conformal_mapping():
    # conformal formula assumes zero metal thickness; use a thin metal
    stack = build_stack({"metal_thickness": "10 nm"})
    sol = solve_potential(build_mesh(stack, 2))
    c_ref = cpw_capacitance_conformal(stack.trace_width, stack.gap, 11.9)
    assert sol.capacitance_per_length == pytest.approx(c_ref, rel=0.02)


def test_energy_positivity(ref_solution_l2):
    for energy in ref_solution_l2.region_energy.values():
        assert energy >= 0
    assert ref_solution_l2.total_energy > 0
    assert ref_solution_l2.total_energy == pytest.approx(
        sum(ref_solution_l2.region_energy.values()))


def test_residual_below_tolerance(ref_solution_l2):
    assert ref_solution_l2.residual < 1e-8


def test_half_vs_full_domain_symmetry(ref_stack):
    half = solve_potential(build_mesh(ref_stack, 1))
    full = solve_potential(build_mesh(ref_stack, 1, full_domain=True))
    assert full.total_energy == pytest.approx(half.total_energy, rel=1e-6)
    for region in (RegionId.Substrate, RegionId.Air):
        assert full.region_energy[region] == pytest.approx(
            half.region_energy[region], rel=1e-6)


def test_voltage_scaling_squares_energy(ref_stack):
    mesh = build_mesh(ref_stack, 1)
    s1 = solve_potential(mesh)
    s3 = solve_potential(mesh, voltage=3.0)
    assert s3.total_energy == pytest.approx(9.0 * s1.total_energy, rel=1e-12)
    assert s3.capacitance_per_length == pytest.approx(
        s1.capacitance_per_length, rel=1e-12)


def test_energy_mesh_convergence(ref_stack, ref_solution_l2):
    coarse = solve_potential(build_mesh(ref_stack, 1))
    assert ref_solution_l2.total_energy == pytest.approx(
        coarse.total_energy, rel=0.01)


def test_domain_size_insensitivity(ref_stack):
    small = solve_potential(build_mesh(ref_stack, 1))
    big_stack = build_stack(ref_stack.to_config(),
                            domain_halfwidth=2 * ref_stack.domain_halfwidth,
                            domain_height_air=2 * ref_stack.domain_height_air)
    big = solve_potential(build_mesh(big_stack, 1))
    assert big.total_energy == pytest.approx(small.total_energy, rel=0.005)


def test_metal_interior_is_equipotential(ref_solution_l2):
    mesh = ref_solution_l2.mesh
    stack = mesh.stack
    xn = mesh.x[:, None]
    yn = mesh.y[None, :]
    on_trace = (np.abs(xn) <= stack.trace_width / 2) & (yn >= 0) & \
        (yn <= stack.metal_thickness)
    assert np.allclose(ref_solution_l2.phi[on_trace], 1.0)
    assert np.count_nonzero(mesh.region == CELL_METAL) > 0


def test_boundary_fields_metal_top_tangential(ref_solution_l2):
    bs = boundary_fields(ref_solution_l2, RegionId.MetalAirTop)
    # conductor boundary condition: E_par vanishes on the metal surface
    mid = len(bs.x) // 4
    assert abs(bs.e_par[mid]) < 0.01 * abs(bs.e_norm[mid])
    assert np.all(np.isfinite(bs.e_norm))
    assert bs.host == "air"


def test_boundary_fields_substrate_air_positive(ref_solution_l2):
    bs = boundary_fields(ref_solution_l2, RegionId.SubstrateAir)
    integral = np.sum((bs.e_par**2 + bs.e_norm**2) * bs.dl)
    assert np.isfinite(integral) and integral > 0


def test_corner_field_enhancement(ref_solution_l2):
    bs = boundary_fields(ref_solution_l2, RegionId.SubstrateAir)
    stack = ref_solution_l2.mesh.stack
    gap_center = stack.trace_width / 2 + stack.gap / 2
    e2 = bs.e_par**2 + bs.e_norm**2
    near_corner = e2[np.argmin(np.abs(bs.x - stack.trace_width / 2))]
    mid_gap = e2[np.argmin(np.abs(bs.x - gap_center))]
    assert near_corner > mid_gap


def test_boundary_fields_rejects_bulk_region(ref_solution_l2):
    with pytest.raises(MeshError):
        boundary_fields(ref_solution_l2, RegionId.Substrate)


def test_dump_fields_csv(tmp_path, ref_stack):
    sol = solve_potential(build_mesh(ref_stack, 1))
    path = tmp_path / "fields.csv"
    dump_fields_csv(sol, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(sol.mesh.x) * len(sol.mesh.y), 3)
    assert data[:, 2].max() == pytest.approx(1.0)
