import json
import subprocess
import sys

import numpy as np
import pytest

from gsvq import codec
from gsvq.cli import main
from gsvq.splat_model import load_ply, ply_header


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "s.ply"), "--count", "400", "--seed", "2",
                 "--cameras-out", str(d / "cams.json"), "--n-cameras", "2",
                 "--image-size", "16", "16"]) == 0
    return d


FAST = ["--size", "0.5k", "--vq-steps", "5", "--finetune-steps", "2"]


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_compress_report_and_decompress(scene, capsys):
    nvqg, ply = scene / "a.nvqg", scene / "a.ply"
    code, out, _ = run(["compress", "--in", str(scene / "s.ply"), "--out", str(nvqg), *FAST], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["bytes_written"] == nvqg.stat().st_size == report["sizes"]["total"]
    assert report["config"]["entries_s"] == 512 and report["config"]["entries_c"] == 128
    code, _, _ = run(["decompress", "--in", str(nvqg), "--out", str(ply)], capsys)
    assert code == 0
    assert len(load_ply(ply)) == len(codec.decode(nvqg))
    assert ply.read_bytes().startswith(ply_header(len(codec.decode(nvqg))))


def test_threads_and_reruns_are_byte_identical(scene, capsys):
    outs = []
    for k, threads in enumerate(("1", "1", "3")):
        path = scene / f"d{k}.nvqg"
        code, _, _ = run(["--threads", threads, "compress", "--in", str(scene / "s.ply"),
                          "--out", str(path), "--seed", "9", *FAST], capsys)
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_compress_decompress_compress_fixed_point(scene, capsys):
    args = ["--size", "0.5k", "--vq-steps", "0", "--no-prune"]
    p1, p2, p3 = (scene / f"i{k}.nvqg" for k in range(3))
    run(["compress", "--in", str(scene / "s.ply"), "--out", str(p1), *args], capsys)
    run(["decompress", "--in", str(p1), "--out", str(scene / "i1.ply")], capsys)
    run(["compress", "--in", str(scene / "i1.ply"), "--out", str(p2), *args], capsys)
    run(["decompress", "--in", str(p2), "--out", str(scene / "i2.ply")], capsys)
    run(["compress", "--in", str(scene / "i2.ply"), "--out", str(p3), *args], capsys)
    assert p2.read_bytes() == p3.read_bytes()


def test_exit_codes(scene, capsys):
    code, _, err = run(["compress", "--in", str(scene / "missing.ply"), "--out", "x.nvqg"], capsys)
    assert code == 2 and "missing.ply" in err
    bad = scene / "bad.nvqg"
    bad.write_bytes(b"NVQG" + bytes(10))
    code, _, _ = run(["decompress", "--in", str(bad), "--out", str(scene / "o.ply")], capsys)
    assert code == 3
    code, _, _ = run(["inspect", "--in", str(scene / "cams.json")], capsys)
    assert code == 3
    with pytest.raises(SystemExit) as exc:
        main(["compress", "--bogus"])
    assert exc.value.code == 1
    code, _, _ = run(["compress", "--in", str(scene / "s.ply"), "--out", "x", "--vq-steps", "-1"],
                     capsys)
    assert code == 1


def test_render_and_inspect(scene, capsys):
    code, out, _ = run(["render", "--in", str(scene / "s.ply"), "--cameras", str(scene / "cams.json"),
                        "--out", str(scene / "view"), "--background", "0.2"], capsys)
    assert code == 0
    images = json.loads(out)["images"]
    assert len(images) == 2
    img = np.load(str(scene / "view_000.npy"))
    assert img.shape == (16, 16, 3) and img.min() >= 0.0
    code, out, _ = run(["inspect", "--in", str(scene / "s.ply")], capsys)
    assert json.loads(out)["splats"] == 400


def test_eval_single_and_sweep(scene, capsys):
    nvqg = scene / "e.nvqg"
    run(["compress", "--in", str(scene / "s.ply"), "--out", str(nvqg), *FAST, "--no-prune"], capsys)
    code, out, _ = run(["eval", "--in", str(scene / "s.ply"), "--compressed", str(nvqg),
                        "--cameras", str(scene / "cams.json")], capsys)
    assert code == 0 and json.loads(out)["psnr_db"] > 10
    csv = scene / "sweep.csv"
    code, out, _ = run(["eval", "--in", str(scene / "s.ply"), "--sizes", "0.5k,1k",
                        "--vq-steps", "2", "--finetune-steps", "1", "--csv", str(csv)], capsys)
    assert code == 0
    lines = csv.read_text().strip().split("\n")
    assert len(lines) == 3 and lines[1].startswith("0.5k,") and lines[2].startswith("1k,")


def test_eval_exact_cover_flags_infinite(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "t.ply"), "--count", "128",
                 "--cameras-out", str(tmp_path / "c.json"), "--n-cameras", "1",
                 "--image-size", "8", "8"]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"entries_s": 128, "entries_r": 128, "entries_c": 128,
                               "entries_sh": 128, "prune": False, "vq_steps": 5}))
    capsys.readouterr()
    run(["compress", "--in", str(tmp_path / "t.ply"), "--out", str(tmp_path / "t.nvqg"),
         "--config", str(cfg)], capsys)
    code, out, _ = run(["eval", "--in", str(tmp_path / "t.ply"), "--compressed",
                        str(tmp_path / "t.nvqg"), "--cameras", str(tmp_path / "c.json")], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["psnr_infinite"] and rep["psnr_db"] is None


def test_module_entry_point(scene):
    proc = subprocess.run([sys.executable, "-m", "gsvq", "inspect", "--in", str(scene / "s.ply")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["format"] == "ply"
