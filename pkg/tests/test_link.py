import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotless import numerics as nx
from pilotless.link import (ChannelParams, Profile, SlotGeometry, apply_channel,
                            apply_channel_tensors, doppler_frequency, dump_channel,
                            generate_channel, load_channel, noise_variance_from_snr,
                            rms_delay_spread)
from pilotless.numerics import Tensor

G = SlotGeometry()


class TestGeometry:
    def test_defaults(self):
        assert (G.n_subcarriers, G.n_symbols, G.n_streams, G.n_rx) == (72, 14, 2, 4)
        assert G.subcarrier_spacing == 30e3 and G.carrier_frequency == 3.5e9

    def test_invalid(self):
        with pytest.raises(ValueError):
            SlotGeometry(n_streams=5, n_rx=4)
        with pytest.raises(ValueError):
            SlotGeometry(n_symbols=0)

    def test_symbol_duration(self):
        assert G.symbol_duration == pytest.approx(0.5e-3 / 14)


class TestTaps:
    @pytest.mark.parametrize("profile", list(Profile))
    @pytest.mark.parametrize("ds", [10e-9, 100e-9, 300e-9])
    def test_profile_invariants(self, profile, ds):
        d, p = ChannelParams(rms_delay_spread=ds, profile=profile).taps()
        assert p.sum() == pytest.approx(1.0)
        assert d[0] >= 0 and np.all(np.diff(d) > 0)
        assert rms_delay_spread(d, p) == pytest.approx(ds, rel=1e-12)

    def test_templates_distinct(self):
        shapes = [ChannelParams(profile=p).taps()[0] for p in Profile]
        assert not np.allclose(shapes[0], shapes[1])
        assert not np.allclose(shapes[0], shapes[2])

    def test_doppler(self):
        assert doppler_frequency(3.0, 3.5e9) == pytest.approx(3.0 * 3.5e9 / 299_792_458.0)


class TestGenerate:
    def test_static_when_still(self):
        H = generate_channel(G, ChannelParams(velocity=0.0), seed=1)
        assert H.shape == (72, 14, 4, 2)
        np.testing.assert_array_equal(H, np.broadcast_to(H[:, :1], H.shape))

    def test_flat_single_tap(self):
        H = generate_channel(G, ChannelParams(tap_count=1, velocity=3.0), seed=2)
        np.testing.assert_allclose(H, np.broadcast_to(H[:1], H.shape), atol=1e-15)

    def test_deterministic(self):
        p = ChannelParams(velocity=4.0, rms_delay_spread=250e-9)
        a, b = generate_channel(G, p, 99), generate_channel(G, p, 99)
        assert a.tobytes() == b.tobytes()
        assert not np.allclose(a, generate_channel(G, p, 100))

    def test_moving_channel_varies(self):
        H = generate_channel(G, ChannelParams(velocity=5.0), seed=3)
        assert np.max(np.abs(H[:, -1] - H[:, 0])) > 1e-6

    def test_out_of_range_warns(self):
        with pytest.warns(UserWarning):
            generate_channel(G, ChannelParams(rms_delay_spread=1e-6), 0)
        with pytest.warns(UserWarning):
            generate_channel(G, ChannelParams(velocity=30.0), 0)

    def test_unit_average_gain(self):
        g = SlotGeometry(n_subcarriers=1, n_symbols=1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            Hs = np.stack([generate_channel(g, ChannelParams(), s)[0, 0] for s in range(10_000)])
        power = np.mean(np.abs(Hs) ** 2, axis=0)
        np.testing.assert_allclose(power, 1.0, atol=0.02 * 2)
        assert abs(np.mean(np.abs(Hs) ** 2) - 1.0) < 0.02

    def test_frequency_correlation_decays_faster_for_larger_spread(self):
        def corr(ds):
            acc = np.zeros(72, dtype=complex)
            for s in range(400):
                h = generate_channel(G, ChannelParams(rms_delay_spread=ds), s)[:, 0, 0, 0]
                acc += np.array([np.vdot(h[: 72 - k], h[k:]) / (72 - k) for k in range(72)])
            return np.abs(acc / acc[0])
        small, large = corr(10e-9), corr(300e-9)
        assert np.all(small[1:12] > large[1:12])
        assert small[8] > 0.99 and large[8] < small[8] - 0.05


class TestApply:
    def test_identity(self):
        g = SlotGeometry(n_streams=1, n_rx=1)
        x = np.exp(1j * np.arange(72 * 14).reshape(72, 14, 1))
        y = apply_channel(x, np.ones((72, 14, 1, 1)), 0.0, seed=0)
        np.testing.assert_array_equal(y, x)

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        H = generate_channel(G, ChannelParams(velocity=2.0), 7)
        x = rng.standard_normal((72, 14, 2)) + 1j * rng.standard_normal((72, 14, 2))
        y = apply_channel(x, H, 0.0, 0)
        for f, s in [(0, 0), (13, 5), (71, 13)]:
            np.testing.assert_allclose(y[f, s], H[f, s] @ x[f, s])

    def test_noise_power(self):
        x = np.zeros((25_000, 1, 2))
        H = np.zeros((25_000, 1, 4, 2))
        y = apply_channel(x, H, 0.1, seed=5)
        assert np.mean(np.abs(y) ** 2) == pytest.approx(0.1, rel=0.03)
        np.testing.assert_allclose(np.mean(np.abs(y) ** 2, axis=(0, 1)), 0.1, rtol=0.05)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_channel(np.zeros((72, 14, 3)), np.zeros((72, 14, 4, 2)), 0.0, 0)
        with pytest.raises(ValueError):
            apply_channel(np.zeros((72, 14, 2)), np.zeros((72, 14, 4, 2)), -1.0, 0)

    def test_tensor_path_matches_numpy(self):
        rng = np.random.default_rng(1)
        H = generate_channel(G, ChannelParams(), 3)
        x = rng.standard_normal((72, 14, 2)) + 1j * rng.standard_normal((72, 14, 2))
        yr, yi = apply_channel_tensors(Tensor(x.real), Tensor(x.imag), H)
        np.testing.assert_allclose(yr.value + 1j * yi.value, apply_channel(x, H, 0.0, 0))

    def test_tensor_path_gradient(self):
        rng = np.random.default_rng(2)
        H = rng.standard_normal((3, 2, 4, 2)) + 1j * rng.standard_normal((3, 2, 4, 2))
        n = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
        xr, xi = Tensor(rng.standard_normal((3, 2, 2))), Tensor(rng.standard_normal((3, 2, 2)))

        def power():
            yr, yi = apply_channel_tensors(xr, xi, H, n)
            return nx.tsum(yr * yr + yi * yi)

        assert nx.finite_diff_check(power, [xr, xi]) < 1e-6


class TestSnr:
    @pytest.mark.parametrize("snr,nv", [(0, 1.0), (10, 0.1), (30, 0.001)])
    def test_values(self, snr, nv):
        assert noise_variance_from_snr(snr) == pytest.approx(nv)

    @settings(max_examples=30)
    @given(st.floats(-20, 40), st.floats(0.1, 5))
    def test_monotone(self, snr, step):
        assert noise_variance_from_snr(snr + step) < noise_variance_from_snr(snr)


def test_dump_round_trip(tmp_path):
    H = generate_channel(G, ChannelParams(velocity=1.0), 4)
    dump_channel(H, tmp_path / "h.bin")
    assert (tmp_path / "h.bin").stat().st_size == H.size * 8
    np.testing.assert_allclose(load_channel(tmp_path / "h.bin", G), H, rtol=1e-6, atol=1e-7)
