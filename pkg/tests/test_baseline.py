import numpy as np
import pytest

from oracles import exhaustive_candidates, exhaustive_maxlog
from pilotless.baseline import (LLR_CLIP, CandidateList, DmrsPattern, default_k, detect_slot,
                                exponential_pdp_correlation, insert_dmrs, kbest_detect,
                                lmmse_estimate, lmmse_smoother, maxlog_llr, perfect_csi)
from pilotless.coding import ldpc_decode, ldpc_encode, mcs_code, mcs_lookup
from pilotless.constellation import Constellation, bits_to_index, label_bits, qam_reference
from pilotless.link import ChannelParams, SlotGeometry, generate_channel

G = SlotGeometry()
PAT = DmrsPattern()


def cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


class TestDmrs:
    def test_combs_disjoint(self):
        a, b = PAT.comb(0, 72), PAT.comb(1, 72)
        assert not set(a) & set(b) and len(a) + len(b) == 72

    def test_insert_counts(self):
        x = np.full((72, 14, 2), 7.0 + 0j)
        out = insert_dmrs(x, PAT, seed=3)
        for s in range(2):
            touched = out[:, :, s] != 7.0
            assert touched.sum() == 144
            pilots = out[:, list(PAT.symbols), s]
            assert np.count_nonzero(pilots) == 72
            nz = pilots[pilots != 0]
            assert np.mean(np.abs(nz) ** 2) == pytest.approx(1.0)
        mask = PAT.data_mask(G)
        np.testing.assert_array_equal(out[mask], x[mask])

    def test_overhead(self):
        assert PAT.overhead(14) == pytest.approx(2 / 14)

    def test_symbols_must_fit(self):
        with pytest.raises(ValueError):
            DmrsPattern(symbols=(2, 14)).data_mask(G)

    def test_pilots_keyed_by_seed(self):
        assert not np.allclose(PAT.pilots(0, 72, 1), PAT.pilots(0, 72, 2))
        np.testing.assert_array_equal(PAT.pilots(1, 72, 5), PAT.pilots(1, 72, 5))


def received_pilot_slot(H, seed, noise=None):
    x = insert_dmrs(np.zeros((72, 14, 2), complex), PAT, seed)
    y = np.einsum("fsrt,fst->fsr", H, x)
    return y if noise is None else y + noise


class TestLmmse:
    def test_flat_static_exact(self):
        rng = np.random.default_rng(0)
        H = np.broadcast_to(cn(rng, 4, 2), (72, 14, 4, 2)).copy()
        est = lmmse_estimate(received_pilot_slot(H, 4), PAT, 0.0, 4, G)
        assert np.max(np.abs(est - H)) < 1e-9

    def test_single_tap_noiseless(self):
        H = generate_channel(G, ChannelParams(tap_count=1), 3)
        est = lmmse_estimate(received_pilot_slot(H, 9), PAT, 0.0, 9, G)
        assert np.max(np.abs(est - H)) < 1e-9

    def test_scalar_formula(self):
        W = lmmse_smoother(np.array([[1.0]]), 0.25)
        assert W[0, 0] == pytest.approx(1 / 1.25)

    def test_correlation_prior(self):
        f = np.array([0.0, 30e3])
        R = exponential_pdp_correlation(f, f)
        assert R[0, 0] == 1 and R[0, 1] == pytest.approx(1 / (1 - 2j * np.pi * 30e3 * 100e-9))

    @pytest.mark.parametrize("nv", [1e-3, 1e-1])
    def test_denoising_beats_ls(self, nv):
        rng = np.random.default_rng(1)
        err_l, err_ls = 0.0, 0.0
        for s in range(10):
            H = generate_channel(G, ChannelParams(rms_delay_spread=50e-9), s)
            noise = np.sqrt(nv) * cn(rng, 72, 14, 4)
            y = received_pilot_slot(H, s, noise)
            est = lmmse_estimate(y, PAT, nv, s, G)
            ls = lmmse_estimate(y, PAT, 0.0, s, G)  # zero noise -> no smoothing
            err_l += np.mean(np.abs(est - H) ** 2)
            err_ls += np.mean(np.abs(ls - H) ** 2)
        assert err_l < err_ls

    def test_unknown_pattern(self):
        with pytest.raises(TypeError):
            lmmse_estimate(np.zeros((72, 14, 4)), "dmrs", 0.0, 0, G)

    def test_perfect_is_identity(self):
        H = generate_channel(G, ChannelParams(), 0)
        assert perfect_csi(H) is H


class TestKBest:
    def test_siso_nearest_ordering(self):
        rng = np.random.default_rng(2)
        q = qam_reference(4)
        y, h = cn(rng, 1), cn(rng, 1, 1)
        c = kbest_detect(y, h, [q], K=16)
        dist = np.abs(y[0] - h[0, 0] * q.points) ** 2
        np.testing.assert_array_equal(c.indices[:, 0], np.argsort(dist, kind="stable"))
        np.testing.assert_allclose(c.metrics, np.sort(dist))

    def test_qpsk_pair_best_candidate(self):
        rng = np.random.default_rng(3)
        qpsk = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
        for _ in range(50):
            H, y = cn(rng, 4, 2), cn(rng, 4)
            best = exhaustive_candidates(y, H, [qpsk, qpsk])[0]
            c = kbest_detect(y, H, [qpsk, qpsk], K=16)
            assert tuple(c.indices[0]) == best[1]

    def test_full_k_equals_enumeration(self):
        rng = np.random.default_rng(4)
        q = qam_reference(4).points
        H, y = cn(rng, 4, 2), cn(rng, 4)
        c = kbest_detect(y, H, [q, q], K=256)
        full = exhaustive_candidates(y, H, [q, q])
        np.testing.assert_allclose(c.metrics, [m for m, _ in full], atol=1e-12)
        assert {tuple(i) for i in c.indices} == {idx for _, idx in full}

    def test_candidates_sorted_distinct(self):
        rng = np.random.default_rng(5)
        q = qam_reference(4).points
        c = kbest_detect(cn(rng, 30, 4), cn(rng, 30, 4, 2), [q, q], K=16)
        assert np.all(np.diff(c.metrics, axis=1) >= 0) and np.all(c.metrics >= 0)
        for row in c.indices:
            assert len({tuple(r) for r in row}) == len(row)

    def test_rank_deficient_regularized(self):
        rng = np.random.default_rng(6)
        q = qam_reference(4).points
        h = cn(rng, 4, 1)
        H = np.concatenate([h, h], axis=1)
        c = kbest_detect(cn(rng, 4), H, [q, q], K=16)
        assert c.regularized and np.all(np.isfinite(c.metrics))

    def test_k_validation(self):
        with pytest.raises(ValueError):
            kbest_detect(np.zeros(4), np.zeros((4, 2)), [np.ones(4)] * 2, K=0)

    def test_defaults(self):
        assert default_k(4) == 16 and default_k(6) == 32


class TestMaxLog:
    def test_single_candidate_clips(self):
        c = CandidateList(np.array([[[0]]]), np.array([[0.3]]), np.array([False]))
        labels = [np.array([[0, 1], [1, 0]])]
        llr = maxlog_llr(c, 0.1, labels)
        np.testing.assert_array_equal(llr[0, 0], [LLR_CLIP, -LLR_CLIP])

    def test_symmetric_tie(self):
        c = CandidateList(np.array([[[0], [1]]]), np.array([[1.0, 1.0]]), np.array([False]))
        llr = maxlog_llr(c, 0.5, [np.array([[0], [1]])])
        assert llr[0, 0, 0] == 0.0

    def test_siso_four_point(self):
        rng = np.random.default_rng(7)
        pts = np.array([1, 1j, -1, -1j])
        labels = np.array([[0, 0], [0, 1], [1, 1], [1, 0]])
        for _ in range(100):
            y, h, nv = cn(rng, 1), cn(rng, 1, 1), rng.uniform(0.05, 2)
            c = kbest_detect(y, h, [pts], K=4)
            got = maxlog_llr(c, nv, [labels])
            want = exhaustive_maxlog(y, h, [pts], [labels], nv)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_noiseless_link_decodes(self):
        rng = np.random.default_rng(8)
        mcs = mcs_lookup(3)
        mask = PAT.data_mask(G)
        n_data = int(mask.sum())
        code = mcs_code(mcs, n_data, 2)
        u = rng.integers(0, 2, code.k)
        cw = ldpc_encode(u, code).reshape(n_data, 2, 4)
        q = qam_reference(4)
        x = np.zeros((72, 14, 2), complex)
        x[mask] = q.points[bits_to_index(cw)]
        H = generate_channel(G, ChannelParams(), 5)
        y = np.einsum("fsrt,fst->fsr", H, x)
        llrs = detect_slot(y, H, 1e-3, [q, q], 16, mask)
        assert llrs.shape == (n_data, 2, 4)
        np.testing.assert_array_equal(llrs < 0, cw == 1)
        dec, ok, _ = ldpc_decode(llrs.reshape(-1), code)
        assert ok and np.array_equal(dec, u)

    def test_arbitrary_learned_constellation(self):
        rng = np.random.default_rng(9)
        pts = cn(rng, 16)
        c = Constellation(pts, 4)
        H, y = cn(rng, 4, 2), cn(rng, 4)
        got = maxlog_llr(kbest_detect(y, H, [c, c], 256), 0.3, [c.bits, c.bits])
        want = exhaustive_maxlog(y, H, [pts, pts], [label_bits(4)] * 2, 0.3)
        np.testing.assert_allclose(got, want, atol=1e-9)
