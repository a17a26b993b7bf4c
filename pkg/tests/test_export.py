from pathlib import Path

import numpy as np
import pytest

from amtopo import config as cfgmod
from amtopo import optimizer as opt
from amtopo.export import read_vtk_counts, write_history, write_vtk
from amtopo.mesh import build_grid

DATA = Path(__file__).parent / "data"


def test_one_element_golden_file(tmp_path):
    m = build_grid(1, 1, 1, 1)
    out = tmp_path / "phi.vtk"
    write_vtk(m, {"phi": np.array([1.0, -0.5, 0.25, -1.0])}, out)
    assert out.read_bytes() == (DATA / "one_element_phi.vtk").read_bytes()


def test_node_and_cell_counts_round_trip(tmp_path):
    m = build_grid(7, 3, 7, 3)
    out = tmp_path / "f.vtk"
    write_vtk(
        m,
        {
            "phi": np.zeros(m.n_nodes),
            "u": np.ones((m.n_nodes, 2)),
            "chi": np.ones(m.n_elements),
        },
        out,
    )
    assert read_vtk_counts(out) == (m.n_nodes, m.n_elements)
    text = out.read_text()
    assert f"POINT_DATA {m.n_nodes}" in text and f"CELL_DATA {m.n_elements}" in text
    assert "VECTORS u double" in text


def test_field_size_and_name_checks(tmp_path):
    m = build_grid(2, 2, 2, 2)
    with pytest.raises(ValueError):
        write_vtk(m, {"bad": np.zeros(5)}, tmp_path / "x.vtk")
    with pytest.raises(ValueError):
        write_vtk(m, {"two words": np.zeros(m.n_nodes)}, tmp_path / "x.vtk")


def test_io_failure_surfaces(tmp_path):
    m = build_grid(1, 1, 1, 1)
    with pytest.raises(OSError):
        write_vtk(m, {}, tmp_path / "missing" / "x.vtk")


def _record(i):
    return opt.IterationRecord(i, 1.0 / (i + 1), 2.0, 0.0, 0.1, 0.2, 0.5, 0.5, 0.0, 0.3, 0.01)


def test_three_records_give_four_lines(tmp_path):
    out = tmp_path / "h.csv"
    write_history([_record(i) for i in range(3)], out)
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].split(",")[0] == "iteration" and "wall_time" not in lines[0]
    write_history([_record(0)], out, timing=True)
    assert out.read_text().splitlines()[0].endswith("wall_time")


@pytest.mark.filterwarnings("ignore:no convergence")
def test_identical_runs_write_identical_csv(tmp_path):
    def once(name):
        cfg, p = cfgmod.benchmark("mbb", width=30.0, height=10.0, nx=30, ny=10, L=10.0, m=5, max_iters=6)
        res = opt.run(p, cfgmod.build_settings(cfg, p))
        write_history(res.history, tmp_path / name)
        return (tmp_path / name).read_bytes()

    assert once("a.csv") == once("b.csv")
