import json

import magfem as mf
from magfem.cli import EXIT_IO, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, main

BASE_CONFIG = """
[problem]
k = 1
dirichlet_tags = 1

[mesh]
unit_square_n = 4

[material.1]
law = brauer

[source]
form = none
"""

PM_CONFIG = """
[problem]
k = 1
dirichlet_tags = 1

[material.1]
law = permanent_magnet
nu0 = 795774.7154594767
mx = 0.0
my = 795774.0

[newton]
tol_increment = 1e-10
tol_residual = 1e-10
"""

ANNULUS_CONFIG = """
[problem]
k = 1
dirichlet_tags = 1

[mesh]
unit_square_n = 4

[material.1]
law = anisotropic
n11 = 3.0
n12 = 1.0
n22 = 2.0

[map]
name = quarter_annulus
r_inner = 0.5
r_outer = 1.0

[source]
form = hs
hs_x = 0.0
hs_y = 1.0
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_solve_writes_telemetry(tmp_path):
    cfg = _write(tmp_path, "run.ini", BASE_CONFIG)
    out = tmp_path / "tele.json"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["converged"] is True
    assert doc["certified"]["gamma"] == 400.0
    assert doc["config"]["rho"] == 0.5


def test_solve_with_mesh_file_and_fields(tmp_path):
    mesh_path = tmp_path / "m.txt"
    mesh_path.write_text(mf.serialize_mesh(mf.generate_unit_square(3)))
    cfg = _write(tmp_path, "run.ini", PM_CONFIG)
    out = tmp_path / "t.json"
    fields = tmp_path / "f.csv"
    code = main(
        ["solve", "--config", cfg, "--mesh", str(mesh_path), "--out", str(out), "--fields", str(fields)]
    )
    assert code == EXIT_OK
    lines = fields.read_text().strip().splitlines()
    assert lines[0] == "element,qpoint,x,y,bx,by,hx,hy"
    assert len(lines) == 1 + 18 * 3  # ne * nq rows for the k=1 rule


def test_solve_annulus_mapped_config(tmp_path):
    cfg = _write(tmp_path, "ann.ini", ANNULUS_CONFIG)
    out = tmp_path / "t.json"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["n_iterations"] == 1  # quadratic energy: one Newton step


def test_solve_missing_config_is_io_error(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini"), "--out", "x"]) == EXIT_IO


JS_CONFIG = """
[problem]
k = 1
dirichlet_tags = 1

[mesh]
unit_square_n = 4

[material.1]
law = brauer

[source]
form = js
region.1 = 2000.0
"""


def test_solve_solver_failure_exit_code(tmp_path):
    cfg = _write(tmp_path, "run.ini", JS_CONFIG + "\n[newton]\nmax_iter = 1\n")
    out = tmp_path / "t.json"
    code = main(["solve", "--config", cfg, "--out", str(out)])
    assert code == EXIT_SOLVER
    assert json.loads(out.read_text())["converged"] is False


def test_solve_js_source_converges(tmp_path):
    cfg = _write(tmp_path, "run.ini", JS_CONFIG)
    out = tmp_path / "t.json"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["converged"] is True
    assert doc["n_iterations"] >= 1


def test_solve_rejects_bad_law(tmp_path):
    cfg = _write(tmp_path, "bad.ini", BASE_CONFIG.replace("law = brauer", "law = wrong"))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "t.json")]) == EXIT_USAGE


def test_corrupt_mesh_file_is_io_error(tmp_path):
    cfg = _write(tmp_path, "run.ini", PM_CONFIG)
    mesh_path = tmp_path / "m.txt"
    mesh_path.write_text("$Nodes 2\n1 0 0\n")
    assert (
        main(["solve", "--config", cfg, "--mesh", str(mesh_path), "--out", str(tmp_path / "t.json")])
        == EXIT_IO
    )


def test_study_csv(tmp_path):
    out = tmp_path / "study.csv"
    code = main(
        ["study", "--benchmark", "manufactured", "--degree", "1", "--levels", "2", "--csv", str(out)]
    )
    assert code == EXIT_OK
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "level,ne,dof,iter,err_b,eoc_b,err_h,eoc_h"
    assert len(lines) == 3


def test_study_unknown_benchmark(tmp_path):
    assert (
        main(["study", "--benchmark", "zzz", "--csv", str(tmp_path / "x.csv")]) == EXIT_USAGE
    )


def test_study_telemetry_dir(tmp_path):
    out = tmp_path / "study.csv"
    tdir = tmp_path / "tele"
    code = main(
        [
            "study", "--benchmark", "manufactured", "--degree", "1",
            "--levels", "2", "--csv", str(out), "--telemetry", str(tdir),
        ]
    )
    assert code == EXIT_OK
    assert sorted(p.name for p in tdir.iterdir()) == [
        "manufactured_level0.json",
        "manufactured_level1.json",
    ]


def test_material_check_brauer(capsys):
    assert main(["material-check", "--material", "brauer"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "s_star" in out
    assert "gamma = 400" in out


def test_material_check_with_params(capsys):
    code = main(
        ["material-check", "--material", "anisotropic", "--params", "n11=2", "n22=8"]
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "gamma = 2" in out
    assert "L     = 8" in out


def test_material_check_unknown(capsys):
    assert main(["material-check", "--material", "unobtainium"]) == EXIT_USAGE


def test_mesh_gen_and_refine_round_trip(tmp_path):
    m1 = tmp_path / "m.txt"
    m2 = tmp_path / "m2.txt"
    assert main(["mesh", "gen", "--n", "3", "--out", str(m1)]) == EXIT_OK
    assert main(["mesh", "refine", "--in", str(m1), "--out", str(m2)]) == EXIT_OK
    mesh = mf.parse_mesh(m2.read_text())
    assert mesh.num_triangles == 4 * 18


def test_usage_error_exit_code():
    assert main(["solve"]) == EXIT_USAGE  # missing required arguments
    assert main([]) == EXIT_USAGE


def test_study_abort_writes_partial_csv_and_exits_2(tmp_path):
    cfg = _write(tmp_path, "hard.ini", "[newton]\nmax_iter = 1\n")
    out = tmp_path / "study.csv"
    code = main(
        [
            "study", "--benchmark", "manufactured", "--degree", "1",
            "--levels", "2", "--csv", str(out), "--config", cfg,
        ]
    )
    assert code == EXIT_SOLVER
    assert out.read_text().strip().splitlines()[-1].startswith("# aborted:")


def test_study_honors_newton_config(tmp_path):
    cfg = _write(
        tmp_path,
        "loose.ini",
        "[newton]\ntol_increment = 1e-3\ntol_residual = 1e-3\n",
    )
    out = tmp_path / "study.csv"
    code = main(
        [
            "study", "--benchmark", "manufactured", "--degree", "1",
            "--levels", "2", "--csv", str(out), "--config", cfg,
        ]
    )
    assert code == EXIT_OK
    rows = out.read_text().strip().splitlines()[1:]
    iters = [int(r.split(",")[3]) for r in rows]
    assert all(i < 7 for i in iters)  # looser tolerance stops earlier


def test_material_check_rejects_malformed_params():
    assert (
        main(["material-check", "--material", "brauer", "--params", "k1:3.8"])
        == EXIT_USAGE
    )


def test_mesh_refine_missing_file_is_io_error(tmp_path):
    assert (
        main(["mesh", "refine", "--in", str(tmp_path / "none.msh"), "--out", "x"])
        == EXIT_IO
    )


def test_js_with_map_rejected(tmp_path):
    cfg_text = ANNULUS_CONFIG.replace(
        "form = hs\nhs_x = 0.0\nhs_y = 1.0", "form = js\nregion.1 = 10.0"
    )
    cfg = _write(tmp_path, "bad.ini", cfg_text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "t.json")]) == EXIT_USAGE
