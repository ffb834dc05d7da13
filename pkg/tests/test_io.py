import numpy as np
import pytest

from spmrepro import beamforming as bfm
from spmrepro import io
from spmrepro import room as rm


@pytest.fixture(scope="module")
def irs():
    room, geo = rm.synthetic_cabin(3, n_mics=4)
    return rm.simulate_channels(room, geo, "R", ir_len=64, max_order=1)


# ---------------------------------------------------------------------------
# WAV and JSON
# ---------------------------------------------------------------------------


class TestWav:
    def test_round_trip_float32(self, tmp_path, rng):
        x = rng.standard_normal((3, 100))
        io.write_wav(tmp_path / "a.wav", x, 48000)
        y, rate = io.read_wav(tmp_path / "a.wav")
        assert rate == 48000 and y.shape == (3, 100)
        np.testing.assert_array_equal(y, x.astype(np.float32))

    def test_mono(self, tmp_path):
        io.write_wav(tmp_path / "m.wav", np.arange(5.0))
        y, _ = io.read_wav(tmp_path / "m.wav")
        assert y.shape == (1, 5)

    def test_header_is_ieee_float(self, tmp_path):
        io.write_wav(tmp_path / "h.wav", np.zeros((2, 4)))
        raw = (tmp_path / "h.wav").read_bytes()
        assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
        fmt = raw.index(b"fmt ")
        assert int.from_bytes(raw[fmt + 8 : fmt + 10], "little") == 3  # WAVE_FORMAT_IEEE_FLOAT
        assert int.from_bytes(raw[fmt + 10 : fmt + 12], "little") == 2

    def test_unreadable(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"nope")
        with pytest.raises(OSError):
            io.read_wav(tmp_path / "bad.wav")


class TestJson:
    def test_numpy_values(self, tmp_path):
        io.write_json(tmp_path / "a.json", {"x": np.arange(3), "y": np.float64(0.5), 1: (np.int64(2),)})
        assert io.read_json(tmp_path / "a.json") == {"x": [0, 1, 2], "y": 0.5, "1": [2]}

    def test_digest(self, tmp_path):
        (tmp_path / "f").write_bytes(b"abc")
        assert io.digest(tmp_path / "f") == io.digest(b"abc")
        assert io.digest(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


# ---------------------------------------------------------------------------
# Datasets and filter banks
# ---------------------------------------------------------------------------


class TestIrSet:
    def test_round_trip(self, tmp_path, irs):
        io.save_ir_set(tmp_path / "R", irs, {"seed": 3})
        back = io.load_ir_set(tmp_path / "R")
        np.testing.assert_array_equal(back.ir, irs.ir.astype(np.float32))
        np.testing.assert_array_equal(back.geometry.mics, irs.geometry.mics)
        assert back.position == "R" and back.room == irs.room and back.band == irs.band
        m = io.read_json(tmp_path / "R" / "manifest.json")
        assert m["seed"] == 3 and m["files"][0] == "ls00.wav" and len(m["files"]) == 11
        assert "free-field" in m["target_model"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            io.load_ir_set(tmp_path)


class TestFilterBank:
    def test_round_trip(self, tmp_path, rng):
        h = rng.standard_normal((11, 32))
        io.save_filter_bank(tmp_path / "f" / "az000", h, manifest={"method": "fd"})
        back, meta = io.load_filter_bank(tmp_path / "f" / "az000")
        np.testing.assert_array_equal(back, h.astype(np.float32))
        assert meta == {"method": "fd", "sample_rate": 48000.0, "n_loudspeakers": 11, "filter_len": 32}


# ---------------------------------------------------------------------------
# Tables and images
# ---------------------------------------------------------------------------


class TestTables:
    def test_fmt(self):
        assert io.fmt(1 / 3) == "0.333333"
        assert io.fmt(np.float32(2)) == "2.000000"
        assert io.fmt(7) == "7" and io.fmt("x") == "x"

    def test_csv_round_trip(self, tmp_path):
        io.write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.5], ["x", 2.0]])
        assert (tmp_path / "t.csv").read_text() == "a,b\n1,0.500000\nx,2.000000\n"
        assert io.read_csv(tmp_path / "t.csv") == (["a", "b"], [["1", "0.500000"], ["x", "2.000000"]])

    def test_sspm_csv(self, tmp_path):
        st = bfm.StackedSpm(np.array([[0.0, -3.0, -6.0, -9.0]]), np.array([90.0]), np.arange(4) * 90.0)
        io.write_sspm_csv(tmp_path / "s.csv", st)
        header, rows = io.read_csv(tmp_path / "s.csv")
        assert header == ["source_azimuth", "0", "90", "180", "270"]
        assert rows == [["90", "0.000000", "-3.000000", "-6.000000", "-9.000000"]]

    def test_pgm_round_trip(self, tmp_path):
        v = np.array([[0.0, -15.0, -30.0], [-40.0, 5.0, -7.5]])
        io.write_pgm(tmp_path / "p.pgm", v, vmin=-30, vmax=0)
        img = io.read_pgm(tmp_path / "p.pgm")
        np.testing.assert_array_equal(img, [[255, 128, 0], [0, 255, 191]])
        assert (tmp_path / "p.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")

    def test_pgm_constant(self, tmp_path):
        io.write_pgm(tmp_path / "c.pgm", np.ones((2, 2)))
        np.testing.assert_array_equal(io.read_pgm(tmp_path / "c.pgm"), 0)

    def test_not_pgm(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError):
            io.read_pgm(tmp_path / "x.pgm")
