import json
import struct

import numpy as np
import pytest

from dpssm import io


def test_pnm_roundtrip_rgb_and_gray(tmp_path):
    rng = np.random.default_rng(0)
    for c in (1, 3):
        img = rng.integers(0, 256, size=(c, 5, 7)) / 255.0
        p = io.write_pnm(tmp_path / f"x{c}.pnm", img)
        assert np.array_equal(io.read_pnm(p), img)


def test_pnm_comments_and_maxval(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n# another\n15\n" + bytes([0, 15]))
    assert np.array_equal(io.read_pnm(p), np.array([[[0.0, 1.0]]]))


@pytest.mark.parametrize("raw", [b"P3\n1 1\n255\n0 0 0", b"P5\n2 2\n255\n\x00", b"P5\n2 2\n65535\n" + b"\0" * 8,
                                 b"P5\n2"])
def test_pnm_rejects(tmp_path, raw):
    p = tmp_path / "bad.pgm"
    p.write_bytes(raw)
    with pytest.raises(io.FormatError):
        io.read_pnm(p)


def test_list_images(tmp_path):
    (tmp_path / "b.ppm").write_bytes(b"")
    (tmp_path / "a.PGM").write_bytes(b"")
    (tmp_path / "c.txt").write_bytes(b"")
    assert [p.name for p in io.list_images(tmp_path)] == ["a.PGM", "b.ppm"]
    with pytest.raises(FileNotFoundError):
        io.list_images(tmp_path / "missing")


def _tensors():
    rng = np.random.default_rng(1)
    return {"b": rng.normal(size=(3,)).astype(np.float32), "a.w": rng.normal(size=(2, 5)).astype(np.float32),
            "s": np.float32(2.5)}


def test_weights_roundtrip_and_layout():
    t = _tensors()
    buf = io.encode_weights(t, {"k": 1})
    assert buf.startswith(b"DPMW1\n")
    (hlen,) = struct.unpack("<I", buf[6:10])
    header = json.loads(buf[10:10 + hlen])
    assert list(header) == sorted(header)
    assert all(e["offset"] % 64 == 0 for k, e in header.items() if k != "__config__")
    out, cfg = io.decode_weights(buf)
    assert cfg == {"k": 1}
    assert out["s"].shape == ()
    for k in t:
        assert np.array_equal(out[k], np.asarray(t[k], dtype=np.float64))
    assert io.encode_weights({k: v for k, v in out.items()}, cfg) == buf


def _mutate(buf, fn):
    (hlen,) = struct.unpack("<I", buf[6:10])
    header = json.loads(buf[10:10 + hlen])
    fn(header)
    h = json.dumps(header).encode()
    return buf[:6] + struct.pack("<I", len(h)) + h + buf[10 + hlen:]


def test_weights_rejects():
    buf = io.encode_weights(_tensors())
    bad = [b"XXXXX\n" + buf[6:], buf[:8], buf[:-62],
           _mutate(buf, lambda h: h["b"].update(dtype="f16")),
           _mutate(buf, lambda h: h["b"].update(offset=h["b"]["offset"] + 4)),
           _mutate(buf, lambda h: h["b"].update(nbytes=4)),
           buf[:6] + struct.pack("<I", 3) + b"{{{"]
    for b in bad:
        with pytest.raises(io.FormatError):
            io.decode_weights(b)


def test_weights_refuse_nonfinite_and_reserved():
    with pytest.raises(ValueError):
        io.encode_weights({"x": np.array([np.nan])})
    with pytest.raises(ValueError):
        io.encode_weights({"__config__": np.zeros(1)})


def test_config_validation(tmp_path):
    cfg = io.validate_config({"seed": 3})
    assert cfg["seed"] == 3 and cfg["lambdas"] == [1.0, 0.5, 0.001]
    for bad in ({"widths": [8, 16]}, {"unknown": 1}, {"theta": 2.0}, {"lambdas": [1, -1, 0]}, []):
        with pytest.raises(io.ConfigError):
            io.validate_config(bad)
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(io.ConfigError):
        io.load_config(p)


def test_reports(tmp_path):
    io.write_json(tmp_path / "r.json", {"a": np.float64(0.5), "b": np.arange(3)})
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": 0.5, "b": [0, 1, 2]}
    io.write_csv(tmp_path / "r.csv", [{"x": 1 / 3, "y": "n", "z": 9}], ("x", "y"))
    assert io.read_csv(tmp_path / "r.csv") == [{"x": "0.333333333", "y": "n"}]
