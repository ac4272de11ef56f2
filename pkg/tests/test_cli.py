import csv
import filecmp
import json

import numpy as np
import pytest

from uwsplat import io
from uwsplat.cli import main

SMALL = ["--width", "32", "--height", "16", "--cameras", "4"]


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["--seed", "5", "synth", str(root), *SMALL]) == 0
    return root


@pytest.fixture(scope="module")
def trained(small_ds, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["--threads", "1", "train", str(small_ds), str(out), "--iterations", "40",
                 "--eval-interval", "20"]) == 0
    return out


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["--seed", "7", "synth", str(tmp_path / name), *SMALL]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_synth_clear_water_raw_equals_clean(tmp_path):
    out = tmp_path / "clear"
    assert main(["synth", str(out), *SMALL, "--beta-d", "0,0,0", "--beta-b", "0,0,0"]) == 0
    ds = io.load_dataset(out)
    for v in ds.views:
        assert np.array_equal(v.image, v.gt_J)


def test_synth_defaults_twelve_frames(tmp_path):
    # only the bookkeeping is checked, so shrink the images
    out = tmp_path / "dflt"
    assert main(["synth", str(out), "--width", "16", "--height", "8"]) == 0
    manifest = json.loads((out / "transforms.json").read_text())
    assert len(manifest["frames"]) == 12
    ds = io.load_dataset(out)
    assert len(ds.train) == 6 and len(ds.test) == 6
    assert all(v.gt_J is not None and v.gt_D is not None for v in ds.views)
    assert (out / "config.json").exists()


def test_bad_triple_and_missing_dataset_fail(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", str(tmp_path / "x"), "--beta-d", "1,2"])
    assert exc.value.code != 0
    assert main(["train", str(tmp_path / "nowhere"), str(tmp_path / "out")]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("uwsplat train: error:")


def test_train_outputs(trained):
    for name in ("checkpoint.uwgs", "metrics.csv", "densify.csv", "train.log", "config.json"):
        assert (trained / name).exists()
    rows = read_csv(trained / "metrics.csv")
    assert rows[0][0] == "iter"
    assert [int(r[0]) for r in rows[1:]] == [20, 40]
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["train"]["iterations"] == 40 and cfg["threads"] == 1
    assert io.load_checkpoint(trained / "checkpoint.uwgs").iteration == 40


def test_resume_continues_counter(small_ds, trained, tmp_path):
    out = tmp_path / "resumed"
    assert main(["train", str(small_ds), str(out), "--iterations", "60", "--eval-interval", "20",
                 "--resume", str(trained / "checkpoint.uwgs")]) == 0
    assert io.load_checkpoint(out / "checkpoint.uwgs").iteration == 60
    assert [int(r[0]) for r in read_csv(out / "metrics.csv")[1:]] == [60]


def test_no_medium_fixes_identity_medium(small_ds, trained, tmp_path):
    out = tmp_path / "nomed"
    assert main(["train", str(small_ds), str(out), "--iterations", "20", "--eval-interval", "20",
                 "--no-medium"]) == 0
    assert json.loads((out / "config.json").read_text())["train"]["use_medium"] is False
    dec = tmp_path / "dec"
    assert main(["decompose", str(out / "checkpoint.uwgs"), str(small_ds), str(dec)]) == 0
    assert np.all(io.read_image(next(dec.glob("A_*.png"))) == 1.0)
    assert np.all(io.read_image(next(dec.glob("B_*.png"))) == 0.0)


def test_decompose_recomposes_render(small_ds, trained, tmp_path):
    ckpt = str(trained / "checkpoint.uwgs")
    assert main(["render", ckpt, str(small_ds), str(tmp_path / "r")]) == 0
    assert main(["decompose", ckpt, str(small_ds), str(tmp_path / "d")]) == 0
    renders = sorted((tmp_path / "r").glob("*.png"))
    assert len(renders) == 4
    for p in renders:
        j, a, b = (io.read_image(tmp_path / "d" / f"{k}_{p.name}") for k in "JAB")
        assert (tmp_path / "d" / f"D_{p.name}").exists()
        assert np.abs(j * a + b - io.read_image(p)).max() <= 1.0 / 255 + 1e-12


def test_render_does_not_touch_input(small_ds, trained, tmp_path):
    before = sorted(p.name for p in small_ds.rglob("*"))
    assert main(["render", str(trained / "checkpoint.uwgs"), str(small_ds), str(tmp_path / "r")]) == 0
    assert sorted(p.name for p in small_ds.rglob("*")) == before


def test_eval_summary_line(small_ds, trained, tmp_path, capsys):
    out = tmp_path / "eval.txt"
    assert main(["eval", str(trained / "checkpoint.uwgs"), str(small_ds), "--out", str(out)]) == 0
    line = out.read_text().strip()
    assert line == capsys.readouterr().out.strip()
    fields = dict(kv.split("=") for kv in line.split())
    assert set(fields) == {"PSNR", "SSIM"}
    assert 0 < float(fields["PSNR"]) <= 100 and -1 <= float(fields["SSIM"]) <= 1


def test_eval_restored_j(small_ds, trained, tmp_path):
    out = tmp_path / "j.txt"
    assert main(["eval", str(trained / "checkpoint.uwgs"), str(small_ds), "--which", "restored-J",
                 "--out", str(out)]) == 0
    assert out.read_text().startswith("PSNR=")


def test_gradcheck_exit_code(tmp_path, capsys):
    cfg = tmp_path / "gc.json"
    cfg.write_text(json.dumps({"gradcheck": {"max_per_group": 4}}))
    assert main(["--config", str(cfg), "gradcheck", "--out-dir", str(tmp_path / "g")]) == 0
    assert capsys.readouterr().out.strip().endswith("GRADCHECK=PASS")
    assert (tmp_path / "g" / "gradcheck.txt").exists()
    # an impossible tolerance has to fail
    cfg.write_text(json.dumps({"gradcheck": {"max_per_group": 4, "rel_tol": 0.0, "abs_tol": 0.0, "eps": 0.5}}))
    assert main(["--config", str(cfg), "gradcheck"]) == 1


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"no_such_key": 1}}))
    assert main(["--config", str(cfg), "synth", str(tmp_path / "x")]) != 0


def test_train_is_deterministic(small_ds, trained, tmp_path):
    out = tmp_path / "again"
    assert main(["--threads", "1", "train", str(small_ds), str(out), "--iterations", "40",
                 "--eval-interval", "20"]) == 0
    for name in ("checkpoint.uwgs", "metrics.csv", "densify.csv", "config.json"):
        assert filecmp.cmp(trained / name, out / name, shallow=False), name
