import json
import shutil
import subprocess
from importlib import resources

import pytest

from harnack_lab.cli import main
from harnack_lab.errors import MissingCoordinates
from harnack_lab.gallery import build_path
from harnack_lab.plotting import plot
from harnack_lab.runner import load_config, run_config, sig

EXAMPLE = resources.files("harnack_lab") / "examples" / "slit_bhp.json"


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def grid_config(**task):
    return {"schema": "harnack-lab/1", "seed": 0, "builder": {"builder": "grid", "params": {"nx": 25, "ny": 25}},
            "tasks": [{"task": "ehi-scan", "radii": [4, 8], "centers": [[12, 12]], **task}]}


@pytest.fixture(scope="module")
def example_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("example")
    code = main(["run", str(EXAMPLE), "--out", str(out)])
    return code, out


def test_bundled_example_passes(example_run):
    code, out = example_run
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert [t["status"] for t in report["tasks"]] == ["passed"] * 5
    assert all((out / t["csv"]).exists() for t in report["tasks"])
    assert report["inner_uniformity"]["source"] == "provided"


def test_rerun_is_byte_identical(example_run, tmp_path):
    _, out = example_run
    assert main(["run", str(EXAMPLE), "--out", str(tmp_path), "--jobs", "3"]) == 0
    for csv in sorted(out.glob("*.csv")):
        assert (tmp_path / csv.name).read_bytes() == csv.read_bytes()


def test_plots_render(example_run, tmp_path):
    _, out = example_run
    report = out / "report.json"
    for what in ("green-heatmap", "kernel-heatmap", "constants-vs-scale"):
        path = plot(report, what, tmp_path / f"{what}.svg")
        assert path.read_text().lstrip().startswith("<?xml")


def test_radius_below_mesh_is_rejected(tmp_path):
    cfg = grid_config(radii=[0.5, 4])
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["tasks"][0]["status"] == "rejected"


def test_failing_check_exits_one(tmp_path):
    cfg = grid_config(stability_factor=1.0)
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1


def test_bad_configs_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    assert main(["run", write(tmp_path, {"schema": "other"})]) == 2
    assert main(["run", write(tmp_path, {**grid_config(), "tasks": [{"task": "nope"}]})]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_graph_builder_without_coordinates(tmp_path):
    g = build_path(6).graph
    data = g.to_json()
    data.pop("coords", None)
    cfg = {"schema": "harnack-lab/1",
           "builder": {"builder": "graph", "graph": data, "interior": [1, 2, 3, 4, 5], "boundary": [0, 6]},
           "tasks": [{"task": "bhp", "scales": [4], "A0": 1.0, "A3": 1.0, "A4": 1.0}],
           "xi": 0, "inner_uniformity": {"c_U": 1.0, "C_U": 1.0}}
    code, report = run_config(cfg, tmp_path)
    assert code == 0
    with pytest.raises(MissingCoordinates):
        plot(tmp_path / "report.json", "kernel-heatmap")


def test_gallery_emit(tmp_path, capsys):
    target = tmp_path / "slit.json"
    assert main(["gallery", "slit_grid", "N=8", "h=0.5", "--emit", str(target)]) == 0
    data = json.loads(target.read_text())
    assert data["metadata"]["params"]["h"] == 0.5
    assert main(["gallery", "path", "n=4"]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["metadata"]["builder"] == "path"
    assert main(["gallery", "path", "n"]) == 2


def test_sig_rounds_and_stringifies():
    assert sig(0.1 + 0.2) == 0.3
    assert sig([float("inf"), float("nan")]) == ["inf", "nan"]
    assert sig({"a": (1, 2.0)}) == {"a": [1, 2.0]}


def test_load_config_reads_bundled_example():
    assert load_config(EXAMPLE)["builder"]["builder"] == "slit_grid"


@pytest.mark.skipif(shutil.which("harnack-lab") is None, reason="console script not installed")
def test_console_script_help():
    res = subprocess.run(["harnack-lab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "run" in res.stdout
