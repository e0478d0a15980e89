import json
import subprocess
import sys

import numpy as np
import pytest

from vocreid import fileio
from vocreid.cli import PIPELINE_DEFAULTS, main
from vocreid.evaluation import build_masks, evaluate
from vocreid.retrieval import FusionWeights, similarity_matrix, voc_fuse

SMALL = ["--fixture", "default", "--n-ids", "10", "--images-per-id", "5", "--n-cameras", "4", "--n-orient-bins", "6"]


@pytest.fixture
def ds_dir(tmp_path):
    out = tmp_path / "ds"
    assert main(["synth", str(out), *SMALL, "--seed", "2"]) == 0
    return out


@pytest.fixture
def vehicle_only(tmp_path, ds_dir):
    ds = fileio.read_dataset(ds_dir)
    out = tmp_path / "vonly"
    out.mkdir()
    fileio.write_embeddings(out / "vehicle.voce", ds.branches["vehicle"])
    fileio.write_metadata(out / "meta.csv", ds.meta)
    return out


def test_synth_writes_dataset(ds_dir):
    assert sorted(p.name for p in ds_dir.iterdir()) == ["camera.voce", "meta.csv", "orientation.voce", "vehicle.voce"]
    assert len(fileio.read_metadata(ds_dir / "meta.csv")) == 50


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", str(tmp_path / name), *SMALL]) == 0
    for f in ("meta.csv", "vehicle.voce", "camera.voce"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_dist_matches_library(tmp_path, ds_dir):
    assert main(["dist", str(ds_dir), "-o", str(tmp_path / "s.vocs"), "--branch", "camera"]) == 0
    ds = fileio.read_dataset(ds_dir)
    expected = similarity_matrix(ds.queries("camera"), ds.gallery("camera"))
    assert fileio.read_scores(tmp_path / "s.vocs").data.tobytes() == expected.data.tobytes()


def test_dist_pairs_shapes(tmp_path, ds_dir):
    shapes = {}
    for pair in ("qg", "qq", "gg"):
        main(["dist", str(ds_dir), "-o", str(tmp_path / f"{pair}.vocs"), "--pair", pair])
        shapes[pair] = fileio.read_scores(tmp_path / f"{pair}.vocs").shape
    assert shapes == {"qg": (10, 40), "qq": (10, 10), "gg": (40, 40)}


def test_fuse_default_lambdas(tmp_path, ds_dir):
    paths = {}
    for b in ("vehicle", "orientation", "camera"):
        paths[b] = tmp_path / f"{b}.vocs"
        main(["dist", str(ds_dir), "-o", str(paths[b]), "--branch", b])
    out = tmp_path / "f.vocs"
    assert main(["fuse", "--vehicle", str(paths["vehicle"]), "--orientation", str(paths["orientation"]),
                 "--camera", str(paths["camera"]), "-o", str(out)]) == 0
    s = {b: fileio.read_scores(p).data for b, p in paths.items()}
    np.testing.assert_array_equal(
        fileio.read_scores(out).data, s["vehicle"] - 0.1 * s["orientation"] - 0.1 * s["camera"]
    )
    assert (PIPELINE_DEFAULTS["lambda_o"], PIPELINE_DEFAULTS["lambda_c"]) == (0.1, 0.1)


def test_rerank_and_eval(tmp_path, ds_dir, capsys):
    for pair in ("qg", "qq", "gg"):
        main(["dist", str(ds_dir), "-o", str(tmp_path / f"{pair}.vocs"), "--pair", pair])
    args = ["--qg", str(tmp_path / "qg.vocs"), "--qq", str(tmp_path / "qq.vocs"), "--gg", str(tmp_path / "gg.vocs")]
    assert main(["rerank", *args, "-o", str(tmp_path / "rr.vocs"), "--k1", "5", "--k2", "2"]) == 0
    rr = fileio.read_scores(tmp_path / "rr.vocs")
    assert rr.kind == "distance" and rr.shape == (10, 40)
    capsys.readouterr()
    assert main(["eval", str(ds_dir), str(tmp_path / "rr.vocs"), "--report", str(tmp_path / "r.jsonl")]) == 0
    rec = json.loads((tmp_path / "r.jsonl").read_text())
    assert set(rec) == {"config", "map", "rank1", "rank5", "num_queries", "skipped_queries"}
    assert "mAP" in capsys.readouterr().out


def test_pipeline_vehicle_only_equals_dist_eval(tmp_path, vehicle_only):
    main(["dist", str(vehicle_only), "-o", str(tmp_path / "qg.vocs")])
    main(["eval", str(vehicle_only), str(tmp_path / "qg.vocs"), "--report", str(tmp_path / "eval.jsonl")])
    assert main(["pipeline", str(vehicle_only), "-o", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "report.jsonl").read_bytes() == (tmp_path / "eval.jsonl").read_bytes()


def test_pipeline_report_rows(tmp_path, ds_dir):
    assert main(["pipeline", str(ds_dir), "-o", str(tmp_path / "run")]) == 0
    rows = [json.loads(x) for x in (tmp_path / "run" / "report.jsonl").read_text().splitlines()]
    assert [r["config"]["label"] for r in rows] == ["V", "V+O", "V+O+C"]
    table = (tmp_path / "run" / "table.txt").read_text()
    assert "Vehicle ReID" in table and "Camera ReID" in table

    ds = fileio.read_dataset(ds_dir)
    masks = build_masks(ds.meta_q, ds.meta_g)
    s = {b: similarity_matrix(ds.queries(b), ds.gallery(b)) for b in ds.branches}
    expected = evaluate(voc_fuse(s["vehicle"], s["orientation"], s["camera"]), masks).map
    assert rows[2]["map"] == expected


def test_pipeline_config_file_and_flag_precedence(tmp_path, ds_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda_o": 0.0, "lambda_c": 0.0, "topk": 5}))
    main(["pipeline", str(ds_dir), "-o", str(tmp_path / "a"), "--config", str(cfg)])
    rows = [json.loads(x) for x in (tmp_path / "a" / "report.jsonl").read_text().splitlines()]
    # zero weights make every fused row equal to the vehicle-only row
    assert rows[0]["map"] == rows[1]["map"] == rows[2]["map"]
    main(["pipeline", str(ds_dir), "-o", str(tmp_path / "b"), "--config", str(cfg), "--lambda-o", "0.1"])
    rows_b = [json.loads(x) for x in (tmp_path / "b" / "report.jsonl").read_text().splitlines()]
    ds = fileio.read_dataset(ds_dir)
    s = {b: similarity_matrix(ds.queries(b), ds.gallery(b)) for b in ds.branches}
    fused = voc_fuse(s["vehicle"], s["orientation"], weights=FusionWeights(0.1, 0.0))
    # the flag wins over the file for lambda_o; topk still comes from the file
    assert rows_b[1]["map"] == evaluate(fused, build_masks(ds.meta_q, ds.meta_g), topk=5).map


def test_pipeline_rerank_track_hard_camera(tmp_path, ds_dir):
    args = ["--rerank", "--k1", "6", "--k2", "3", "--track-agg", "--hard-camera", "exclude_same_camera"]
    assert main(["pipeline", str(ds_dir), "-o", str(tmp_path / "run"), *args]) == 0
    rows = [json.loads(x) for x in (tmp_path / "run" / "report.jsonl").read_text().splitlines()]
    assert all(0 <= r["map"] <= 1 for r in rows)
    assert rows[0]["config"]["rerank"] and rows[0]["config"]["track"]


def test_threads_do_not_change_bytes(tmp_path, ds_dir):
    for t in ("1", "4"):
        main(["pipeline", str(ds_dir), "-o", str(tmp_path / t), "--rerank", "--k1", "6", "--k2", "3", "--threads", t])
    for f in ("report.jsonl", "table.txt"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "4" / f).read_bytes()


def test_loss_from_files(tmp_path, capsys):
    pts = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]], dtype=np.float32)
    fileio.write_embeddings(tmp_path / "e.voce", pts)
    (tmp_path / "l.txt").write_text("0 0 1 1\n")
    assert main(["loss", "--embeddings", str(tmp_path / "e.voce"), "--labels", str(tmp_path / "l.txt")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["triplet"] == 0.0
    assert out["combined"] == out["circle"] + out["triplet"]


def test_loss_from_dataset(ds_dir, capsys):
    assert main(["loss", "--dataset", str(ds_dir), "--P", "3", "--K", "4"]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"circle", "triplet", "combined"}


@pytest.mark.parametrize(
    "argv, category",
    [
        (["eval", "{ds}", "{bad}"], "bad_magic"),
        (["pipeline", "{ds}", "-o", "{tmp}/x", "--k1", "0", "--rerank"], "validation"),
        (["dist", "{ds}", "-o", "{tmp}/x", "--track-agg", "wheels"], "validation"),
        (["loss"], "validation"),
    ],
)
def test_errors_single_line(tmp_path, ds_dir, capsys, argv, category):
    (tmp_path / "bad.vocs").write_bytes(b"XXXX" + b"\x00" * 40)
    argv = [a.format(ds=ds_dir, bad=tmp_path / "bad.vocs", tmp=tmp_path) for a in argv]
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert err.startswith(f"error: {category}: ")


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "nope"), str(tmp_path / "nope.vocs")]) == 1
    assert capsys.readouterr().err.startswith("error: io: ")


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "vocreid", "eval", str(tmp_path), str(tmp_path / "x.vocs")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    assert proc.stderr.startswith("error: io:")
