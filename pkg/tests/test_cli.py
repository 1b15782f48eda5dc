import csv

import numpy as np
import pytest

from hybridvc.bitstream import StreamHeader
from hybridvc.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, RD_COLUMNS, main
from hybridvc.pipeline import decode
from hybridvc.yuv import read_raw, read_y4m, write_raw


@pytest.fixture(scope="module")
def clip_file(tmp_path_factory):
    rng = np.random.default_rng(3)
    base = rng.integers(40, 216, (64, 90))
    frames = [np.clip(base[:, k:k + 80] + rng.integers(-2, 3, (64, 80)), 0, 255)
              .astype(np.uint8) for k in range(5)]
    path = tmp_path_factory.mktemp("cli") / "in.yuv"
    write_raw(path, frames)
    return path, frames


def _enc(clip_file, tmp_path, *extra):
    path, _ = clip_file
    out = tmp_path / "s.hvc"
    rc = main(["encode", "-i", str(path), "--width", "80", "--height", "64", "--gop", "4",
               "--intra-period", "0", "--preset", "e2e-tmerge", "-o", str(out), *extra])
    return rc, out


def test_encode_decode_round_trip(clip_file, tmp_path, capsys):
    rc, out = _enc(clip_file, tmp_path, "--csv", str(tmp_path / "f.csv"))
    assert rc == EXIT_OK
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["frame", "type", "layer", "q", "bits", "psnr"]
    assert "total" in text.splitlines()[-1]
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    assert [r["type"] for r in rows] == ["I", "B", "B", "B", "P"]
    assert sum(int(r["bits"]) for r in rows) + 8 * StreamHeader.SIZE == 8 * out.stat().st_size
    assert main(["decode", "-i", str(out), "-o", str(tmp_path / "d.yuv"), "-q"]) == EXIT_OK
    got = read_raw(tmp_path / "d.yuv", 80, 64)
    want = decode(out.read_bytes()).display_order()
    assert all(np.array_equal(a, b) for a, b in zip(got, want))
    assert main(["decode", "-i", str(out), "-o", str(tmp_path / "d.y4m"), "-q"]) == EXIT_OK
    assert len(read_y4m(tmp_path / "d.y4m")[0]) == 5


def test_analyze_writes_csv(clip_file, tmp_path, capsys):
    _, out = _enc(clip_file, tmp_path, "-q")
    assert main(["analyze", "-s", str(out), "--orig", str(clip_file[0])]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "section,item,value" and lines[1] == "schema,version,1"
    assert any(line.startswith("mode_area,tmerge,1.0") for line in lines)


def test_rdcurve_self_anchor(clip_file, tmp_path, capsys):
    path, _ = clip_file
    args = ["rdcurve", "-i", str(path), "--width", "80", "--height", "64", "--gop", "4",
            "--intra-period", "0", "--preset", "e2e-tmerge", "-q"]
    assert main(args + ["--csv", str(tmp_path / "rd.csv")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "rd.csv")))
    assert tuple(rows[0]) == RD_COLUMNS
    assert [int(r["q_step"]) for r in rows] == [12, 24, 45, 95]
    capsys.readouterr()
    rc = main(args + ["--csv", str(tmp_path / "rd2.csv"), "--anchor", str(tmp_path / "rd.csv")])
    assert rc == EXIT_OK
    cap = capsys.readouterr()
    assert "BD-rate vs" in cap.out
    assert abs(float(cap.out.rsplit(":", 1)[1].strip().rstrip("%"))) < 0.01
    assert "warning" not in cap.err


def test_exit_codes(clip_file, tmp_path, capsys):
    path, _ = clip_file
    assert main(["encode", "-i", str(path), "--width", "81", "--height", "64",
                 "-o", str(tmp_path / "x")]) == EXIT_DATA
    assert main(["encode", "-i", str(path), "--width", "80", "--height", "64", "--gop", "6",
                 "-o", str(tmp_path / "x")]) == EXIT_USAGE
    assert main(["decode", "-i", str(tmp_path / "missing"), "-o", str(tmp_path / "y")]) \
        == EXIT_DATA
    with pytest.raises(SystemExit) as e:
        main(["encode"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["rdcurve", "-i", str(path), "--qsteps", "12,x"])
    assert e.value.code == EXIT_USAGE


def test_truncated_stream_writes_partial_output(clip_file, tmp_path, capsys):
    _, out = _enc(clip_file, tmp_path, "-q")
    data = out.read_bytes()
    (tmp_path / "t.hvc").write_bytes(data[:-5])
    rc = main(["decode", "-i", str(tmp_path / "t.hvc"), "-o", str(tmp_path / "t.yuv")])
    assert rc == EXIT_DATA
    assert "decoded before the error" in capsys.readouterr().err
    assert len(read_raw(tmp_path / "t.yuv", 80, 64)) == 4
