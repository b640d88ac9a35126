import csv
import json

import numpy as np
import pytest

from trisplat.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from trisplat.extract import collect_triangles
from trisplat.io import import_ply, load_dataset, load_scene, read_image, write_image
from trisplat.raster import render_aa

PRESET = "colored-triangle-cloud"


@pytest.fixture(scope="session")
def cloud(tmp_path_factory):
    root = tmp_path_factory.mktemp("cloud")
    assert main(["make-synthetic", "--preset", PRESET, "--out", str(root / "data")]) == EXIT_OK
    return root


@pytest.fixture(scope="session")
def trained(cloud):
    out = cloud / "run"
    # shorter runs leave too little time for opacities to clear the hard prune
    code = main(["train", "--data", str(cloud / "data"), "--out", str(out), "--iters", "300",
                 "--deterministic", "--log-level", "WARNING", "--set", "log_interval=50"])
    assert code == EXIT_OK
    return out


def test_make_synthetic_is_byte_identical(cloud, tmp_path):
    assert main(["make-synthetic", "--preset", PRESET, "--out", str(tmp_path)]) == EXIT_OK
    for name in ("manifest.json", "gt.ply", "images/view_000.png", "images/view_007.png"):
        assert (tmp_path / name).read_bytes() == (cloud / "data" / name).read_bytes()


def test_train_writes_outputs(trained, capsys):
    for name in ("checkpoint.tsp", "scene.tsp", "final.ply", "metrics.csv", "config.txt"):
        assert (trained / name).is_file()
    rows = list(csv.DictReader(open(trained / "metrics.csv")))
    assert [int(r["iter"]) for r in rows] == list(range(50, 301, 50))
    s = load_scene(trained / "scene.tsp")
    assert s.floor == 1.0 and s.sigma == pytest.approx(1e-4)
    _, _, faces, _ = import_ply(trained / "final.ply")
    assert len(faces) == s.n_triangles


def test_eval_and_render_agree(trained, cloud, tmp_path, capsys):
    data = str(cloud / "data")
    ck = str(trained / "scene.tsp")
    assert main(["eval", "--checkpoint", ck, "--data", data, "--split", "all", "--out",
                 str(tmp_path / "e.csv")]) == EXIT_OK
    assert "mean psnr" in capsys.readouterr().out
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert len(rows) == len(load_dataset(data, load_images=False))
    png = tmp_path / "v0.png"
    assert main(["render", "--checkpoint", ck, "--data", data, "--camera-index", "0", "--out", str(png)]) == EXIT_OK
    ds = load_dataset(data, load_images=False)
    ref = render_aa(load_scene(ck), ds.cameras[0], 2, background=ds.background).color
    assert np.abs(read_image(png) - np.clip(ref, 0, 1)).max() <= 0.5 / 255 + 1e-12
    # a different supersampling factor changes the image
    assert main(["render", "--checkpoint", ck, "--data", data, "--camera-index", "0", "--aa-scale", "1",
                 "--out", str(tmp_path / "v1.png")]) == EXIT_OK
    assert not np.array_equal(read_image(tmp_path / "v1.png"), read_image(png))


def test_render_from_pose_file(trained, cloud, tmp_path):
    ds = load_dataset(str(cloud / "data"), load_images=False)
    pose = tmp_path / "pose.json"
    pose.write_text(json.dumps(ds.cameras[3].to_dict()))
    assert main(["render", "--checkpoint", str(trained / "final.ply"), "--pose", str(pose),
                 "--out", str(tmp_path / "p.png")]) == EXIT_OK
    assert read_image(tmp_path / "p.png").shape == (ds.cameras[3].height, ds.cameras[3].width, 3)


def test_export_ply_modes(trained, tmp_path):
    for mode in ("vertex-color", "sh-dc"):
        p = tmp_path / f"{mode}.ply"
        assert main(["export-ply", "--checkpoint", str(trained / "scene.tsp"), "--out", str(p),
                     "--mode", mode]) == EXIT_OK
        assert len(import_ply(p)[2]) == load_scene(trained / "scene.tsp").n_triangles


def test_extract_and_remove_partition(trained, cloud, tmp_path):
    data = str(cloud / "data")
    ds = load_dataset(data, load_images=False)
    h, w = ds.cameras[0].height, ds.cameras[0].width
    m = np.zeros((h, w, 1))
    m[:, : w // 2] = 1.0
    write_image(m, tmp_path / "masks" / f"{ds.names[0]}.png")
    ck = str(trained / "scene.tsp")
    base = ["--checkpoint", ck, "--data", data, "--masks", str(tmp_path / "masks")]
    assert main(["extract", *base, "--out", str(tmp_path / "in.tsp")]) == EXIT_OK
    assert main(["extract", *base, "--mode", "remove", "--out", str(tmp_path / "out.ply")]) == EXIT_OK
    s = load_scene(ck)
    ids = collect_triangles(s, [ds.cameras[0]], [m[..., 0] > 0.5])
    part = load_scene(tmp_path / "in.tsp")
    assert part.n_triangles == len(ids) > 0
    assert part.n_triangles + len(import_ply(tmp_path / "out.ply")[2]) == s.n_triangles


def test_zero_iterations(cloud, tmp_path):
    assert main(["train", "--data", str(cloud / "data"), "--out", str(tmp_path), "--iters", "0",
                 "--log-level", "ERROR"]) == EXIT_OK
    assert load_scene(tmp_path / "scene.tsp").n_triangles > 0


def test_exit_codes(cloud, tmp_path, capsys):
    data = str(cloud / "data")
    # usage errors
    assert main(["train", "--data", data, "--out", str(tmp_path), "--set", "bogus=1"]) == EXIT_USAGE
    assert main(["train", "--data", data, "--out", str(tmp_path), "--set", "novalue"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["make-synthetic", "--preset", "nope", "--out", str(tmp_path)])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["render", "--checkpoint", "x.tsp", "--out", "x.png"])
    assert e.value.code == EXIT_USAGE
    # data errors
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(tmp_path / "none.tsp"), "--data", data]) == EXIT_DATA
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"not a ply")
    assert main(["export-ply", "--checkpoint", str(bad), "--out", str(tmp_path / "o.ply")]) == EXIT_DATA
    # numerical failure: every triangle falls below the hard prune threshold
    assert main(["train", "--data", data, "--out", str(tmp_path / "n"), "--iters", "40", "--log-level", "ERROR",
                 "--set", "init_opacity=0.05", "--set", "lr_opacity=1e-9"]) == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "data error" in err and "numerical failure" in err


def test_resume_continues_saved_run(trained, cloud, tmp_path):
    assert main(["train", "--data", str(cloud / "data"), "--out", str(tmp_path), "--resume",
                 str(trained / "checkpoint.tsp"), "--log-level", "ERROR"]) == EXIT_OK
    a, b = load_scene(trained / "scene.tsp"), load_scene(tmp_path / "scene.tsp")
    np.testing.assert_array_equal(a.vertices.positions, b.vertices.positions)
