import json
from pathlib import Path

import pytest

from windowed_conv.cli import main
from windowed_conv.conv_net import load_checkpoint
from windowed_conv.reporting import read_csv

REPO = Path(__file__).resolve().parents[1]

TINY_BOUND = {
    "arch": {"channels": [1, 2, 1], "filter_width": 3},
    "train": {"input_window_A": 32, "output_window_B": 16, "batch_size": 2, "steps": 2},
    "eval_width": 128,
    "trials": 4,
    "num_seeds": 2,
    "heldout_windows": 8,
    "holds_threshold": 0.0,
}
TINY_TRAIN = {
    "mid_train": {"base_width": 40.0, "base_count": 2, "samples": 4, "steps": 3, "batch_size": 2},
    "arch": {"channels": [1, 2, 1], "filter_width": 3, "dims": 2, "hidden": "leaky_relu"},
    "loss_threshold": 10.0,
}
TINY_EVAL = {
    "raster": {"window_width_A": 40.0},
    "widths": [40.0, 80.0],
    "trials": 2,
    "base_count": 2,
    "predictor": "oracle",
}


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


def outdir(tmp_path, name="out"):
    d = tmp_path / name
    d.mkdir()
    return str(d)


def test_bound_command(tmp_path):
    out = outdir(tmp_path)
    assert main(["bound", "--config", write(tmp_path, "c.json", TINY_BOUND), "--out", out]) == 0
    header, rows = read_csv(Path(out) / "bound.csv")
    assert header[:3] == ["seed", "loss_window", "H"] and len(rows) == 2
    echo = json.loads((Path(out) / "effective_config.json").read_text())
    assert echo["train"]["input_window_A"] == 32 and echo["num_seeds"] == 2


def test_bound_threshold_miss_exits_1(tmp_path):
    cfg = dict(TINY_BOUND, holds_threshold=1.5)
    assert main(["bound", "--config", write(tmp_path, "c.json", cfg), "--out", outdir(tmp_path)]) == 1


def test_a_below_b_is_config_error(tmp_path):
    cfg = dict(TINY_BOUND, train={"input_window_A": 8, "output_window_B": 16})
    assert main(["bound", "--config", write(tmp_path, "c.json", cfg), "--out", outdir(tmp_path)]) == 2


def test_missing_output_dir(tmp_path):
    cfg = write(tmp_path, "c.json", TINY_BOUND)
    assert main(["bound", "--config", cfg, "--out", str(tmp_path / "nope")]) == 3


def test_missing_config_file(tmp_path):
    assert main(["bound", "--config", str(tmp_path / "none.json"), "--out", outdir(tmp_path)]) == 3


def test_malformed_json_reports_position(tmp_path, caplog):
    cfg = write(tmp_path, "c.json", '{\n  "seed": 1,\n  "trials": oops\n}')
    assert main(["bound", "--config", cfg, "--out", outdir(tmp_path)]) == 2
    assert "line 3" in caplog.text


def test_unknown_key_rejected(tmp_path):
    cfg = write(tmp_path, "c.json", dict(TINY_BOUND, bogus=1))
    assert main(["bound", "--config", cfg, "--out", outdir(tmp_path)]) == 2


def test_bad_threads(tmp_path):
    cfg = write(tmp_path, "c.json", TINY_BOUND)
    assert main(["bound", "--config", cfg, "--out", outdir(tmp_path), "--threads", "0"]) == 2


def test_mid_train_and_resume(tmp_path):
    cfg = write(tmp_path, "c.json", TINY_TRAIN)
    first = outdir(tmp_path, "a")
    assert main(["mid-train", "--config", cfg, "--out", first]) == 0
    _, rows = read_csv(Path(first) / "loss_curve.csv")
    assert [int(r[0]) for r in rows] == [0, 1, 2]
    second = outdir(tmp_path, "b")
    assert main(["mid-train", "--config", cfg, "--out", second, "--resume", f"{first}/model.ckpt"]) == 0
    _, rows = read_csv(Path(second) / "loss_curve.csv")
    assert [int(r[0]) for r in rows] == [0, 1, 2, 3, 4, 5]
    assert load_checkpoint(Path(second) / "model.ckpt").dims == 2


def test_mid_train_loss_threshold(tmp_path):
    cfg = write(tmp_path, "c.json", dict(TINY_TRAIN, loss_threshold=0.0))
    assert main(["mid-train", "--config", cfg, "--out", outdir(tmp_path)]) == 1


def test_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"WCNN 1\ndims 2\nlayers two\n")
    cfg = write(tmp_path, "c.json", dict(TINY_EVAL, predictor="cnn"))
    assert main(["mid-eval", "--config", cfg, "--out", outdir(tmp_path), "--checkpoint", str(bad)]) == 2


def test_cnn_eval_needs_checkpoint(tmp_path):
    cfg = write(tmp_path, "c.json", dict(TINY_EVAL, predictor="cnn"))
    assert main(["mid-eval", "--config", cfg, "--out", outdir(tmp_path)]) == 2


def test_mid_eval_render_and_determinism(tmp_path):
    cfg = write(tmp_path, "c.json", dict(TINY_EVAL, detail=True))
    a, b = outdir(tmp_path, "a"), outdir(tmp_path, "b")
    assert main(["mid-eval", "--config", cfg, "--out", a, "--render"]) == 0
    assert main(["mid-eval", "--config", cfg, "--out", b]) == 0
    renders = sorted(p.name for p in (Path(a) / "renders").iterdir())
    assert len([r for r in renders if r.endswith(".pgm")]) == 2 * 2 * 2
    assert "w80_t001_output.pgm" in renders and "w80_t001_output.pgm.txt" in renders
    assert not (Path(b) / "renders").exists()
    for name in ("power_report.csv", "power_box.csv", "power_detail.csv"):
        assert (Path(a) / name).read_bytes() == (Path(b) / name).read_bytes()


def test_mid_eval_with_trained_checkpoint(tmp_path):
    train = outdir(tmp_path, "t")
    assert main(["mid-train", "--config", write(tmp_path, "t.json", TINY_TRAIN), "--out", train]) == 0
    cfg = write(tmp_path, "e.json", dict(TINY_EVAL, predictor="cnn"))
    out = outdir(tmp_path, "e")
    assert main(["mid-eval", "--config", cfg, "--out", out, "--checkpoint", f"{train}/model.ckpt"]) == 0
    _, rows = read_csv(Path(out) / "power_report.csv")
    assert [float(r[0]) for r in rows] == [40.0, 80.0]


def test_rasterize_then_extract(tmp_path):
    pos = tmp_path / "p.csv"
    pos.write_text("x_m,y_m\n-50.0,20.0\n60.0,-30.0\n")
    cfg = str(REPO / "configs" / "image.json")
    a = outdir(tmp_path, "a")
    assert main(["rasterize", "--config", cfg, "--out", a, "--positions", str(pos)]) == 0
    b = outdir(tmp_path, "b")
    assert main(["extract", "--config", cfg, "--out", b, "--image", f"{a}/image.pgm"]) == 0
    _, rows = read_csv(Path(b) / "positions.csv")
    pts = sorted((float(x), float(y)) for x, y in rows)
    assert len(pts) == 2
    assert abs(pts[0][0] + 50) < 1.25 and abs(pts[1][1] + 30) < 1.25


@pytest.mark.parametrize("name", ["bound.json", "bound_valid.json", "image.json", "mid_train.json", "mid_eval.json"])
def test_bundled_configs_parse(name):
    from windowed_conv import config as C

    data = C.parse_json((REPO / "configs" / name).read_text())
    parser = {"bound": C.bound_run, "image": C.image_run, "mid_train": C.mid_train_run,
              "mid_eval": C.mid_eval_run}[name.split(".")[0].replace("_valid", "")]
    parser(data)
