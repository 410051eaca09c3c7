import subprocess
import sys

import numpy as np
import pytest

from scmc.bundle import CodecBundle
from scmc.cli import main
from scmc.imageio import read_image, write_ppm
from scmc.metrics import METRIC_COLUMNS, read_metrics_tsv

from conftest import smooth_image

TRAIN_ARGS = ["--patch-size", "8", "--iters", "3", "--phases", "1", "--patches", "16", "--batch-size", "4"]


@pytest.fixture
def files(tmp_path, bundle2):
    img = tmp_path / "img.ppm"
    write_ppm(img, smooth_image(45, 70, 3))
    b = tmp_path / "b2.scmc"
    bundle2.save(b)
    return tmp_path, img, b


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors_exit_2(capsys, tmp_path):
    code, _, err = _run(capsys, "train", "--m", "2", "--lambda", "0.01", "--out", tmp_path / "x")
    assert code == 2 and "--images" in err
    assert _run(capsys)[0] == 2
    assert _run(capsys, "frobnicate")[0] == 2
    assert _run(capsys, "complexity")[0] == 2
    assert _run(capsys, "complexity", "--paper-profile", "--m", "0")[0] == 2
    assert _run(capsys, "--threads", "0", "complexity", "--paper-profile")[0] == 2


def test_version_and_module_entry():
    out = subprocess.run([sys.executable, "-m", "scmc.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("scmc ")


def test_encode_decode_round_trip(capsys, files, bundle2):
    d, img, b = files
    code, out, _ = _run(capsys, "encode", "--bundle", b, "--in", img, "--out", d / "s.bin", "--report", d / "r.tsv",
                        "--patch-size", "32")
    assert code == 0
    row = read_metrics_tsv((d / "r.tsv").read_text())
    assert len(row) == 1 and out == (d / "r.tsv").read_text()
    assert (d / "r.tsv").read_text().splitlines()[0].split("\t") == list(METRIC_COLUMNS)
    r = row[0]
    assert (r.image, r.M, r.lam) == ("img.ppm", 2, bundle2.lam)
    assert r.rate_bpp == (d / "s.bin").stat().st_size * 8 / (45 * 70)
    code, out, _ = _run(capsys, "decode", "--bundle", b, "--in", d / "s.bin", "--out", d / "back.ppm")
    assert code == 0 and "70x45" in out
    from scmc.metrics import psnr

    back = read_image(d / "back.ppm")
    assert back.shape == (3, 45, 70)
    # the decoded PPM is 8-bit, the reported PSNR is of the float reconstruction
    assert abs(psnr(read_image(img), back) - r.psnr_db) < 0.05


def test_wrong_bundle_is_refused_without_output(capsys, files, arch):
    d, img, b = files
    _run(capsys, "encode", "--bundle", b, "--in", img, "--out", d / "s.bin", "--patch-size", "32")
    CodecBundle.random(arch, 2, 0.004, seed=42).save(d / "other.scmc")
    code, _, err = _run(capsys, "decode", "--bundle", d / "other.scmc", "--in", d / "s.bin", "--out", d / "o.ppm")
    assert code == 1 and "bundle" in err
    assert not (d / "o.ppm").exists()
    assert list(d.glob("*.tmp*")) == []


def test_runtime_errors_exit_1(capsys, files):
    d, img, b = files
    assert _run(capsys, "decode", "--bundle", b, "--in", d / "missing.bin", "--out", d / "o.ppm")[0] == 1
    (d / "junk.bin").write_bytes(b"junk")
    assert _run(capsys, "decode", "--bundle", b, "--in", d / "junk.bin", "--out", d / "o.ppm")[0] == 1
    assert _run(capsys, "encode", "--bundle", img, "--in", img, "--out", d / "s.bin")[0] == 1


def test_modemap_geometry_and_tie(capsys, files, arch):
    d, img, b = files
    code, out, _ = _run(capsys, "modemap", "--bundle", b, "--in", img, "--out", d / "m.pgm", "--patch-size", "32")
    assert code == 0
    data = (d / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n3 2\n255\n") and len(data) == len(b"P5\n3 2\n255\n") + 6
    one = CodecBundle.random(arch, 1, 0.004, seed=7)
    one.save(d / "m1.scmc")
    CodecBundle(arch, [one.codecs[0].copy(), one.codecs[0].copy()], 0.004).save(d / "twins.scmc")
    for name in ("m1.scmc", "twins.scmc"):
        _run(capsys, "modemap", "--bundle", d / name, "--in", img, "--out", d / "m.pgm", "--patch-size", "32")
        assert (read_image(d / "m.pgm") == 0).all()


def test_train_is_reproducible_and_m1_has_no_mode_map(capsys, tmp_path, monkeypatch):
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for k in range(2):
        write_ppm(imgs / f"{k}.ppm", smooth_image(24, 24, k))
    outs = []
    for name in ("a", "b"):
        code, out, _ = _run(capsys, "--seed", "11", "train", "--images", imgs, "--m", "1", "--lambda", "0.01",
                            "--out", tmp_path / f"{name}.scmc", *TRAIN_ARGS)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "a.scmc").read_bytes() == (tmp_path / "b.scmc").read_bytes()
    assert (tmp_path / "a.scmc.log.tsv").read_text().startswith("phase\tcluster_sizes")

    # SCMC_SEED is the fallback for --seed
    monkeypatch.setenv("SCMC_SEED", "11")
    _run(capsys, "train", "--images", imgs, "--m", "1", "--lambda", "0.01", "--out", tmp_path / "c.scmc", *TRAIN_ARGS)
    assert (tmp_path / "c.scmc").read_bytes() == (tmp_path / "a.scmc").read_bytes()
    monkeypatch.setenv("SCMC_SEED", "12")
    _run(capsys, "train", "--images", imgs, "--m", "1", "--lambda", "0.01", "--out", tmp_path / "d.scmc", *TRAIN_ARGS)
    assert (tmp_path / "d.scmc").read_bytes() != (tmp_path / "a.scmc").read_bytes()

    code, out, _ = _run(capsys, "encode", "--bundle", tmp_path / "a.scmc", "--in", imgs / "0.ppm",
                        "--out", tmp_path / "s.bin", "--patch-size", "16")
    assert code == 0
    assert read_metrics_tsv(out)[0].mode_map_bpp == 0.0


def test_train_missing_images_exits_1(capsys, tmp_path):
    code, _, err = _run(capsys, "train", "--images", tmp_path, "--m", "2", "--lambda", "0.01",
                        "--out", tmp_path / "x.scmc", *TRAIN_ARGS)
    assert code == 1 and str(tmp_path) in err
    assert not (tmp_path / "x.scmc").exists()


def test_eval_and_bdrate(capsys, tmp_path, arch):
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for k in range(2):
        write_ppm(imgs / f"{k}.ppm", smooth_image(32, 48, k + 20))
    bundles = []
    for k, lam in enumerate((0.01, 0.004, 0.001, 0.0004)):
        path = tmp_path / f"b{k}.scmc"
        CodecBundle.random(arch, 2, lam, seed=k).save(path)
        bundles.append(path)
    code, out, _ = _run(capsys, "eval", "--bundle", *bundles, "--images", imgs, "--out", tmp_path / "a.tsv",
                        "--patch-size", "16")
    assert code == 0
    rows = read_metrics_tsv((tmp_path / "a.tsv").read_text())
    assert len(rows) == 8 and {r.image for r in rows} == {"0.ppm", "1.ppm"}
    # halve every rate of the anchor to fabricate a test curve with a known BD-rate
    lines = (tmp_path / "a.tsv").read_text().splitlines()
    halved = [lines[0]]
    for line in lines[1:]:
        f = line.split("\t")
        f[3] = repr(float(f[3]) / 2)
        halved.append("\t".join(f))
    (tmp_path / "t.tsv").write_text("\n".join(halved) + "\n")
    code, out, _ = _run(capsys, "bdrate", "--anchor", tmp_path / "a.tsv", "--test", tmp_path / "a.tsv")
    if code == 0:
        # random codecs may give a non-monotone curve; only check when BD-rate is defined
        assert abs(float(out)) < 1e-6
        code, out, _ = _run(capsys, "bdrate", "--anchor", tmp_path / "a.tsv", "--test", tmp_path / "t.tsv")
        assert code == 0 and abs(float(out) + 50) < 0.1
    else:
        assert code == 1


def test_bdrate_on_synthetic_tables(capsys, tmp_path):
    head = "\t".join(METRIC_COLUMNS)
    a = [head] + [f"x\t2\t{lam}\t{r}\t0\t{q}" for lam, r, q in
                  ((0.01, 0.1, 28), (0.004, 0.2, 31), (0.001, 0.4, 34), (0.0004, 0.8, 36.5))]
    b = [head] + [f"x\t2\t{lam}\t{r / 2}\t0\t{q}" for lam, r, q in
                  ((0.01, 0.1, 28), (0.004, 0.2, 31), (0.001, 0.4, 34), (0.0004, 0.8, 36.5))]
    (tmp_path / "a.tsv").write_text("\n".join(a) + "\n")
    (tmp_path / "b.tsv").write_text("\n".join(b) + "\n")
    code, out, _ = _run(capsys, "bdrate", "--anchor", tmp_path / "a.tsv", "--test", tmp_path / "b.tsv")
    assert code == 0 and abs(float(out) + 50) < 0.1


def test_complexity_reference_profile(capsys):
    code, out, _ = _run(capsys, "complexity", "--paper-profile", "--m", "8")
    assert code == 0
    fields = out.splitlines()[1].split("\t")
    assert fields[4:] == ["171399", "1433"]
    code, out, _ = _run(capsys, "complexity", "--paper-profile")
    rows = [line.split("\t") for line in out.splitlines()[1:]]
    assert [r[3] for r in rows] == ["1", "2", "4", "8"]
    assert [r[4] for r in rows] == ["37538", "56661", "94907", "171399"]
    assert {r[5] for r in rows} == {"1433"}
    code, out, _ = _run(capsys, "complexity", "--paper-profile", "--m", "1", "--single-pass-m1")
    assert out.splitlines()[1].split("\t")[4] == "17690"


def test_complexity_of_local_bundle(capsys, files):
    _, _, b = files
    code, out, _ = _run(capsys, "complexity", "--bundle", b, "--m", *range(1, 9))
    assert code == 0
    rows = np.array([[float(x) for x in line.split("\t")] for line in out.splitlines()[1:]])
    ga, gs, p = rows[0, :3]
    for M, row in zip(range(1, 9), rows):
        assert row[4] == M * (ga + gs + p) + ga + p
        assert row[5] == gs + p
    code, out, _ = _run(capsys, "complexity", "--bundle", b)
    assert out.splitlines()[1].split("\t")[3] == "2"


def test_reference_profile_alias(capsys):
    a = _run(capsys, "complexity", "--paper-profile", "--m", "4")
    b = _run(capsys, "complexity", "--reference-profile", "--m", "4")
    assert a == b and a[0] == 0
