import json

import numpy as np
import pytest

from conftest import TINY_MODEL
from pestalk import signal
from pestalk.blendshapes import read_blendshape_csv
from pestalk.cli import main
from pestalk.mesh import cube_mesh, load_basis, save_basis, synthetic_face_basis, write_obj


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps({"speakers": 2, "emotions": 2, "clips_per_key": 1,
                                               "heldout_per_key": 1, "frame_range": [20, 30]}))
    (root / "train.json").write_text(json.dumps({"max_steps": 4, "voiceprint_steps": 3, "model": TINY_MODEL}))
    assert main(["synth-data", str(root / "spec.json"), "--out", str(root / "corpus"), "--seed", "5"]) == 0
    assert main(["train", str(root / "corpus" / "manifest.jsonl"), "--config", str(root / "train.json"),
                 "--out", str(root / "ckpt"), "--seed", "5"]) == 0
    return root


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["infer", "a", "b", "c", "d", "--nope"]) == 1
    assert main(["train", "m", "--out", "o", "--dis-orientation", "sideways"]) == 1


def test_missing_file_exit_2(tmp_path, capsys):
    missing = tmp_path / "nothing.jsonl"
    assert main(["train", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_train_outputs(trained):
    ckpt = trained / "ckpt"
    for name in ("model.npz", "model.json", "library.json", "train_log.jsonl", "train_config.json"):
        assert (ckpt / name).exists()
    assert json.loads((ckpt / "train_config.json").read_text())["seed"] == 5


def test_infer_one_second_clip(trained, tmp_path):
    rng = np.random.default_rng(0)
    signal.write_wav(tmp_path / "one.wav", signal.AudioClip(0.1 * rng.normal(size=16000)))
    ckpt = trained / "ckpt"
    assert main(["infer", str(ckpt), str(ckpt / "library.json"), str(tmp_path / "one.wav"),
                 str(tmp_path / "one.csv"), "--smooth"]) == 0
    lines = (tmp_path / "one.csv").read_text().splitlines()
    assert len(lines) == 31 and len(lines[0].split(",")) == 52
    meta = json.loads((tmp_path / "one.json").read_text())
    assert meta["fps"] == 30 and meta["smoothed"] is True


def test_build_library_matches_training_library(trained, tmp_path):
    ckpt = trained / "ckpt"
    assert main(["build-library", str(trained / "corpus"), str(ckpt), "--split", "train",
                 "--out", str(tmp_path / "lib.json")]) == 0
    assert json.loads((tmp_path / "lib.json").read_text()) == json.loads((ckpt / "library.json").read_text())


def test_eval_self_is_zero(trained, tmp_path):
    gt = trained / "corpus" / "blendshapes"
    assert main(["eval", str(gt), str(gt), "--out", str(tmp_path / "rep")]) == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())["summary"]
    for key in ("lbe", "pbe", "mbe", "lve", "eve", "fdd"):
        assert rep[key] == 0.0
    assert rep["ba"] is not None
    assert (tmp_path / "rep" / "report.csv").read_text().startswith("name,lbe,")


def test_convert_and_transfer(tmp_path):
    basis = synthetic_face_basis(5, 5)
    save_basis(tmp_path / "src", basis)
    coeffs = np.zeros((3, 52))
    coeffs[1, 0] = 1.0
    from pestalk.blendshapes import write_blendshape_csv
    write_blendshape_csv(tmp_path / "c.csv", coeffs)
    assert main(["convert-mesh", str(tmp_path / "src"), str(tmp_path / "c.csv"), str(tmp_path / "frames")]) == 0
    assert len(list((tmp_path / "frames").glob("frame_*.obj"))) == 3

    write_obj(tmp_path / "tgt.obj", basis.neutral.with_vertices(basis.neutral.vertices * 1.3))
    assert main(["transfer", str(tmp_path / "src"), str(tmp_path / "tgt.obj"), str(tmp_path / "out")]) == 0
    out = load_basis(tmp_path / "out")
    np.testing.assert_allclose(out.neutral.vertices, basis.neutral.vertices * 1.3, atol=1e-7)
    (tmp_path / "corr.json").write_text(json.dumps(list(range(len(basis.neutral.triangles)))))
    assert main(["transfer", str(tmp_path / "src"), str(tmp_path / "tgt.obj"), str(tmp_path / "corr.json"),
                 str(tmp_path / "out2")]) == 0
    assert (tmp_path / "out2" / "bs_051.obj").read_text() == (tmp_path / "out" / "bs_051.obj").read_text()


def test_transfer_with_too_few_source_triangles_exit_2(tmp_path, capsys):
    save_basis(tmp_path / "src", synthetic_face_basis(3, 3))  # 8 triangles
    write_obj(tmp_path / "cube.obj", cube_mesh())  # 12 triangles
    assert main(["transfer", str(tmp_path / "src"), str(tmp_path / "cube.obj"), str(tmp_path / "o")]) == 2
    assert "missing source triangle" in capsys.readouterr().err
