import json
import subprocess
import sys

import pytest

from crowdloc import cli, config
from crowdloc.errors import ValidationError


@pytest.fixture(scope="module")
def scene_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert cli.main(["synth", "--fov", "90", "--people", "100", "--seed", "7", "-o", str(d / "scene.json"),
                     "--gt", str(d / "gt.json")]) == 0
    return d


@pytest.fixture(scope="module")
def pipeline_out(scene_files):
    out = scene_files / "out"
    assert cli.main(["pipeline", "--scene", str(scene_files / "scene.json"), "--detector", "sim:sigma=0",
                     "--threads", "1", "-o", str(out)]) == 0
    return out


def _load(p):
    return json.loads(p.read_text())


def test_synth_writes_versioned_scene(scene_files):
    doc = _load(scene_files / "scene.json")
    assert doc["schema_version"] == 1 and len(doc["persons"]) == 100
    assert doc["camera"]["f"] == pytest.approx(4800.0)
    assert _load(scene_files / "gt.json")["schema_version"] == 1


def test_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["synth", "--people", "20", "--seed", "5", "-o", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_evaluate_identical_files(scene_files, tmp_path):
    gt = str(scene_files / "gt.json")
    assert cli.main(["evaluate", "--pred", gt, "--gt", gt, "-o", str(tmp_path / "r.json"),
                     "--csv", str(tmp_path / "r.csv")]) == 0
    rep = _load(tmp_path / "r.json")
    assert rep["f1"] == 1.0
    assert rep["metrics"]["ppds"]["match"] == pytest.approx(100.0)
    assert rep["metrics"]["pa_ppds"]["match"] == pytest.approx(100.0)
    assert rep["metrics"]["pcod"]["match"] == 100.0
    assert rep["metrics"]["oks"]["match"] == pytest.approx(1.0)
    assert rep["metrics"]["t_mpjpe"]["match"] == pytest.approx(0.0, abs=1e-12)
    assert (tmp_path / "r.csv").read_text().startswith("image,precision")


def test_pipeline_manifest(pipeline_out):
    m = _load(pipeline_out / "manifest.json")
    assert m["converged"] is True and m["iterations"] <= 3
    assert m["schema_version"] == 1
    assert m["config"]["pipeline"]["max_iterations"] == 3
    for name in ("predictions.json", "detections.json", "calibration.json", "crops.json"):
        assert _load(pipeline_out / name)["schema_version"] == 1


def test_stage_commands_chain(scene_files, pipeline_out, tmp_path):
    dets = str(pipeline_out / "detections.json")
    calib = tmp_path / "calib.json"
    assert cli.main(["estimate-ground", "--detections", dets, "-o", str(calib)]) == 0
    assert {"f", "normal", "offset", "residual"} <= set(_load(calib))
    assert cli.main(["plan-crops", "--calibration", str(calib), "-o", str(tmp_path / "crops.json")]) == 0
    assert _load(tmp_path / "crops.json")["boxes"]
    assert cli.main(["plan-crops", "--uniform", "--image-size", "2000", "1000",
                     "-o", str(tmp_path / "u.json")]) == 0
    assert cli.main(["dedup", "--detections", dets, "-o", str(tmp_path / "d.json")]) == 0
    assert len(_load(tmp_path / "d.json")["persons"]) == len(_load(pipeline_out / "detections.json")["persons"])
    assert cli.main(["localize", "--detections", dets, "--calibration", str(pipeline_out / "calibration.json"),
                     "--scene", str(scene_files / "scene.json"), "--hvip", "oracle", "--body", "oracle",
                     "-o", str(tmp_path / "p.json")]) == 0
    assert len(_load(tmp_path / "p.json")["persons"]) > 0


def test_exit_codes(scene_files, tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["synth", "--bogus"]) == 1
    assert cli.main(["pipeline", "--scene", str(scene_files / "scene.json"), "--detector", "cam:0",
                     "-o", str(tmp_path)]) == 1
    assert cli.main(["evaluate", "--pred", str(tmp_path / "none.json"), "--gt", "x"]) == 2
    assert cli.main(["synth", "--fov", "5", "-o", str(tmp_path / "s.json")]) == 2
    assert cli.main(["synth", "--set", "nope.x=1", "-o", str(tmp_path / "s.json")]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["exit_code"] == 2
    # no people at all is a data error
    (tmp_path / "empty.json").write_text(json.dumps({"image_w": 100, "image_h": 100, "persons": []}))
    assert cli.main(["estimate-ground", "--detections", str(tmp_path / "empty.json")]) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "InsufficientAxes"
    # a ground plane behind the camera has no visible rows: numerical failure
    calib = {"f": 1000.0, "cx": 500.0, "cy": 500.0, "image_w": 1000, "image_h": 1000,
             "normal": [0.0, 0.0, 1.0], "offset": 5.0}
    (tmp_path / "c.json").write_text(json.dumps(calib))
    assert cli.main(["plan-crops", "--calibration", str(tmp_path / "c.json")]) == 3
    assert json.loads(capsys.readouterr().err.strip())["error"] == "NoValidRows"


def test_selftest_quick(tmp_path):
    assert cli.main(["selftest", "--quick", "-o", str(tmp_path / "st.json")]) == 0
    doc = _load(tmp_path / "st.json")
    assert doc["failed"] == 0 and doc["passed"] > 0


def test_help_per_subcommand():
    for sub in ("synth", "plan-crops", "estimate-ground", "dedup", "localize", "evaluate", "pipeline",
                "selftest"):
        r = subprocess.run([sys.executable, "-m", "crowdloc.cli", sub, "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "usage" in r.stdout


def test_config_precedence(tmp_path, monkeypatch):
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps({"scene": {"n_people": 3, "fov_deg": 40.0}}))
    env = {"CROWDLOC_SCENE__FOV_DEG": "50", "CROWDLOC_SCENE__SEED": "4", "CROWDLOC_TILING__S_MINPIXEL": "70"}
    cfg = config.layered(json.loads(f.read_text()), env, ["scene.seed=9"])
    assert cfg["scene"]["n_people"] == 3 and cfg["scene"]["fov_deg"] == 50 and cfg["scene"]["seed"] == 9
    assert cfg["tiling"]["s_minPixel"] == 70
    with pytest.raises(ValidationError):
        config.layered(None, {"CROWDLOC_SCENE__NOPE": "1"})
    for k, v in env.items():
        monkeypatch.setenv(k, v)
    out = tmp_path / "s.json"
    assert cli.main(["synth", "--config", str(f), "--set", "scene.seed=9", "-o", str(out)]) == 0
    spec = _load(out)["spec"]
    assert (spec["n_people"], spec["fov_deg"], spec["seed"]) == (3, 50, 9)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValidationError):
        config.layered({"tiling": {"s_ratoi": 0.4}})
    with pytest.raises(ValidationError):
        config.layered(None, None, ["tiling"])
    with pytest.raises(ValidationError):
        config.merge_file(config.defaults(), [1, 2])
    d = config.defaults()
    assert "fixed_K" not in d["calib"] and set(d) >= {"tiling", "calib", "capability", "pipeline", "scene"}
    assert config.build(config.layered(None, None, ["tiling.s_ratio=0.4"]), "tiling").s_ratio == 0.4
