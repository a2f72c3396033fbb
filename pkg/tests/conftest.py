import pytest

from surfpart.field_solver import MaterialStack, solve
from surfpart.geometry import DesignParams, build_layout, parallel_plate_layout
from surfpart.mesh import MeshControls, generate_mesh

COARSE = MeshControls(h_max=100.0, corner_h_min=20.0, grading_ratio=2.0)
DRIVE = {"P": 0.5, "N": -0.5}
SWEEP_DEPTHS = (300.0, 400.0, 600.0, 1000.0)


def small_idc(**overrides):
    kw = dict(style="interdigitated", conductor_width=2.0, gap=2.0, n_repeats=4, finger_length=100.0,
              include_ground=False)
    kw.update(overrides)
    return DesignParams(**kw)


@pytest.fixture(scope="session")
def plate_solution():
    """Substrate-filled parallel plate, 100 um wide, 10 um gap, +-0.5 V."""
    layout = parallel_plate_layout(100.0, [("substrate", 10.0)])
    mesh = generate_mesh(layout, MeshControls(h_max=2.0, corner_h_min=100.0))
    return solve(mesh, MaterialStack(), DRIVE)


@pytest.fixture(scope="session")
def idc_solution():
    layout = build_layout(small_idc(), 300.0)
    mesh = generate_mesh(layout, COARSE)
    return solve(mesh, MaterialStack(), DRIVE)


@pytest.fixture(scope="session")
def preset_sweeps():
    """Lazily computed default-control sweeps over 300-1000 nm, shared across modules."""
    from surfpart.analysis import trench_sweep

    cache = {}

    def get(design):
        if design not in cache:
            cache[design] = trench_sweep(design, SWEEP_DEPTHS)
        return cache[design]

    return get


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.stash.setdefault(_LINES, [])
    return lines


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
