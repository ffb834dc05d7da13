import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spmrepro import beamforming as bfm
from spmrepro import dsp
from spmrepro import room as rm

from .oracles import spm_loop


@pytest.fixture(scope="module")
def geo():
    return rm.synthetic_cabin(0)[1]


@pytest.fixture(scope="module")
def grid():
    return bfm.default_grid()


SOURCES = np.arange(0, 360, 30.0)


@pytest.fixture(scope="module")
def targets(geo):
    return [rm.free_field_target(rm.VirtualSource(a), geo, 256, 1024) for a in SOURCES]


def plane_wave_spectra(geometry, azimuth, freqs):
    tau = bfm.plane_wave_delays(geometry.mics, geometry.center, [azimuth])[:, 0]
    return np.exp(-2j * np.pi * np.outer(tau, freqs))


# ---------------------------------------------------------------------------
# Grid and weights
# ---------------------------------------------------------------------------


class TestGrid:
    def test_default(self, grid):
        assert grid.azimuths.size == 72 and grid.step == 5.0
        assert grid.freqs.size == 64
        assert grid.freqs[0] == pytest.approx(300) and grid.freqs[-1] == pytest.approx(4000)

    @pytest.mark.parametrize("az", [[0, 90, 180], [0, 90, 90, 180], [10, 0, 90, 180], [0, 90, 180, 360]])
    def test_rejects_bad_azimuths(self, az):
        with pytest.raises(ValueError):
            bfm.SteeringGrid(az, [1000.0])

    def test_rejects_out_of_band(self):
        with pytest.raises(ValueError):
            bfm.SteeringGrid([0, 90, 180, 270], [100.0])


class TestWeights:
    def test_unit_modulus_over_q(self, geo, grid):
        w = bfm.dsb_weights(geo, grid)
        assert w.shape == (16, 72, 64)
        np.testing.assert_allclose(np.abs(w), 1 / 16)

    def test_center_mic_zero_phase(self, geo, grid):
        probe = rm.ArrayGeometry(geo.loudspeakers, np.stack([geo.center, geo.mics[0]]), geo.center)
        w = bfm.dsb_weights(probe, grid)
        np.testing.assert_allclose(w[0], 0.5)

    @pytest.mark.parametrize("b", [0, 13, 40, 71])
    def test_matched_steering_sums_to_one(self, geo, grid, b):
        w = bfm.dsb_weights(geo, grid)
        x = plane_wave_spectra(geo, grid.azimuths[b], grid.freqs)
        np.testing.assert_allclose(np.sum(w[:, b, :] * x, axis=0), 1.0, atol=1e-12)

    def test_two_mic_endfire(self):
        d = 0.05
        center = np.array([1.0, 1.0, 1.0])
        mics = np.stack([center + [d / 2, 0, 0], center - [d / 2, 0, 0]])
        geo2 = rm.ArrayGeometry([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]], mics, center)
        g = bfm.SteeringGrid([0, 90, 180, 270], [500.0, 1000.0, 3000.0])
        w = bfm.dsb_weights(geo2, g)
        dphi = np.angle(w[1, 0] / w[0, 0])
        np.testing.assert_allclose(dphi, 2 * np.pi * g.freqs * d / rm.SPEED_OF_SOUND, atol=1e-9)


# ---------------------------------------------------------------------------
# Power maps
# ---------------------------------------------------------------------------


class TestSpm:
    def test_zero_field(self, geo, grid):
        assert not np.any(bfm.spm(np.zeros((16, 64)), bfm.dsb_weights(geo, grid)))

    @pytest.mark.parametrize("az", [0.0, 45.0, 90.0, 135.0, 200.0, 270.0, 355.0])
    def test_plane_wave_peak(self, geo, grid, az):
        p = bfm.spm(plane_wave_spectra(geo, az, grid.freqs), bfm.dsb_weights(geo, grid))
        assert grid.azimuths[np.argmax(p)] == az

    def test_matched_steering_every_direction(self, geo, grid):
        w = bfm.dsb_weights(geo, grid)
        for b, az in enumerate(grid.azimuths):
            assert np.argmax(bfm.spm(plane_wave_spectra(geo, az, grid.freqs), w)) == b

    def test_matches_loop(self, rng):
        q, b, f = 4, 6, 5
        x = rng.standard_normal((q, f)) + 1j * rng.standard_normal((q, f))
        w = rng.standard_normal((q, b, f)) + 1j * rng.standard_normal((q, b, f))
        np.testing.assert_allclose(bfm.spm(x, w), spm_loop(x, w), rtol=1e-9)

    def test_rejects_bin_mismatch(self, geo, grid):
        with pytest.raises(ValueError):
            bfm.spm(np.ones((16, 10)), bfm.dsb_weights(geo, grid))

    @given(st.floats(0.1, 10.0), st.integers(0, 200))
    def test_homogeneous_and_shift_invariant(self, alpha, shift):
        geo = rm.synthetic_cabin(0)[1]
        grid = bfm.SteeringGrid(np.arange(0, 360, 30.0), np.geomspace(300, 4000, 8))
        g = np.random.default_rng(7).standard_normal((16, 256))
        base = bfm.spm_of_response(g, geo, grid)
        scaled = bfm.spm_of_response(alpha * g, geo, grid)
        shifted = bfm.spm_of_response(np.pad(g, ((0, 0), (shift, 0))), geo, grid)
        np.testing.assert_allclose(scaled, alpha**2 * base, rtol=1e-9)
        np.testing.assert_allclose(shifted, base, rtol=1e-9)
        assert np.all(base >= 0)

    def test_target_peak(self, geo, grid):
        d = rm.free_field_target(rm.VirtualSource(270.0), geo, 256, 1024)
        p = bfm.spm_of_response(d, geo, grid)
        assert bfm.circular_distance(grid.azimuths[np.argmax(p)], 270.0) <= grid.step

    def test_identical_signals_near_flat(self, geo, grid):
        x = np.zeros((16, 512))
        x[:, 100] = 1.0
        p = bfm.spm_of_response(x, geo, grid)
        # no directional cue: the map is flat up to the array's aliasing floor
        assert 10 * np.log10(p.max() / p.min()) < 3.0

    def test_power_grad(self, geo, rng):
        grid = bfm.SteeringGrid(np.arange(0, 360, 45.0), np.geomspace(300, 4000, 6))
        bf = bfm.Beamformer(geo, grid, 64)
        g = rng.standard_normal((16, 64))
        c = rng.standard_normal(8)
        _, dg = bf.power_grad(g, c)
        eps = 1e-6
        for idx in [(0, 0), (3, 17), (15, 63)]:
            e = np.zeros_like(g)
            e[idx] = eps
            fd = (c @ bf.power(g + e) - c @ bf.power(g - e)) / (2 * eps)
            assert dg[idx] == pytest.approx(fd, rel=1e-6)


# ---------------------------------------------------------------------------
# Stacked maps
# ---------------------------------------------------------------------------


class TestStacked:
    sources = SOURCES

    def test_targets_on_diagonal(self, geo, grid, targets):
        s = bfm.sspm(targets, self.sources, geo, grid)
        peaks = s.steering_azimuths[np.argmax(s.db, axis=1)]
        np.testing.assert_array_equal(peaks, self.sources)
        np.testing.assert_allclose(s.db.max(axis=1), 0.0)
        assert bfm.diag_dominance(s, 10) == 1.0

    def test_row_permutation(self, geo, grid, targets):
        perm = np.random.default_rng(0).permutation(len(targets))
        a = bfm.sspm(targets, self.sources, geo, grid)
        b = bfm.sspm([targets[i] for i in perm], self.sources[perm], geo, grid)
        np.testing.assert_allclose(b.db, a.db[perm])

    def test_duplicate_rows(self, geo, grid, targets):
        s = bfm.sspm([targets[2], targets[2]], [60.0, 60.0], geo, grid)
        np.testing.assert_array_equal(s.db[0], s.db[1])

    def test_zero_row_rejected(self, geo, grid):
        with pytest.raises(ValueError, match="zero-power"):
            bfm.sspm([np.zeros((16, 64))], [0.0], geo, grid)


class TestDominance:
    def make(self, peaks_at, sources):
        steer = np.arange(0, 360, 5.0)
        db = np.full((len(sources), steer.size), -20.0)
        for i, p in enumerate(peaks_at):
            db[i, int(p // 5)] = 0.0
        return bfm.StackedSpm(db, np.asarray(sources, float), steer)

    def test_perfect(self):
        s = np.arange(0, 360, 30.0)
        assert bfm.diag_dominance(self.make(s, s), 10) == 1.0

    def test_all_at_zero(self):
        s = np.arange(0, 360, 30.0)
        assert bfm.diag_dominance(self.make(np.zeros(12), s), 10) == pytest.approx(1 / 12)

    def test_vacuous_tolerance(self):
        s = np.arange(0, 360, 30.0)
        assert bfm.diag_dominance(self.make(np.full(12, 95.0), s), 180) == 1.0

    def test_circular(self):
        assert bfm.circular_distance(355.0, 5.0) == pytest.approx(10.0)
        assert bfm.diag_dominance(self.make([355.0], [0.0]), 5) == 1.0
