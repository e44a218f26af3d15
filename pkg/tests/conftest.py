import pytest

from cpwloss import build_mesh, reference_presets, solve_potential

ACCEPTANCE_REFINEMENT = 3


@pytest.fixture(scope="session")
def ref_stack():
    return reference_presets("400C", "reference")


@pytest.fixture(scope="session")
def ref_solution_l2(ref_stack):
    return solve_potential(build_mesh(ref_stack, 2))


@pytest.fixture(scope="session")
def ref_solution_l3(ref_stack):
    return solve_potential(build_mesh(ref_stack, ACCEPTANCE_REFINEMENT))
