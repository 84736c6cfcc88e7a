import numpy as np
import pytest
from scipy import integrate

from eventgc import generators as g
from eventgc.seqdata import Dataset, EventSequence, save_jsonl


class TestSpectralRadius:
    def test_two_by_two_example(self):
        A = np.array([[0.5, 0.0], [0.4, 0.3]])
        rho = g.spectral_radius(A)
        assert rho == pytest.approx(0.5, abs=1e-12)
        scaled = g.scale_to_spectral_radius(A, 0.8)
        np.testing.assert_allclose(scaled, A * (0.8 / 0.5), rtol=1e-12)
        assert abs(g.spectral_radius(scaled) - 0.8) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_eigvals_on_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.uniform(size=(6, 6)) * (rng.uniform(size=(6, 6)) < 0.4)
        A += np.diag(rng.uniform(size=6))
        assert g.spectral_radius(A) == pytest.approx(np.abs(np.linalg.eigvals(A)).max(), rel=1e-9)

    def test_config_rejects_wrong_radius(self):
        with pytest.raises(g.GeneratorError, match="spectral radius"):
            g.HawkesConfig(2, 1, 5, [0.1, 0.1], np.eye(2) * 0.5, np.ones((2, 2)), 0.8)


def _hawkes(alpha, mu, beta, S=1, mean_length=50):
    K = len(mu)
    return g.HawkesConfig(K, S, mean_length, np.array(mu), np.array(alpha), np.array(beta))


def _direct_hawkes_nll(cfg, seq):
    """O(n^2) intensity sums plus numerical compensator."""
    t, k = seq.times, seq.types

    def lam(s):
        past = t < s
        dt = s - t[past]
        return cfg.mu + (cfg.alpha[:, k[past]] * cfg.beta[:, k[past]] * np.exp(-cfg.beta[:, k[past]] * dt)).sum(axis=1)

    ll = sum(np.log(lam(ti)[ki]) for ti, ki in zip(t, k))
    grid = np.concatenate([[0.0], t, [seq.T]])
    comp = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        if b > a:
            comp += integrate.quad(lambda s: lam(s).sum(), a, b, epsabs=1e-13, epsrel=1e-12)[0]
    return comp - ll


class TestHawkes:
    def test_poisson_degenerate(self):
        cfg = _hawkes(np.zeros((2, 2)), [0.5, 1.5], np.ones((2, 2)), S=200, mean_length=100)
        ds, gt = g.sample_hawkes(cfg, 0)
        exposure = sum(s.T for s in ds.sequences)
        rates = ds.type_counts() / exposure
        np.testing.assert_allclose(rates, [0.5, 1.5], rtol=0.03)
        np.testing.assert_array_equal(gt, 0.0)

    def test_ground_truth_is_kernel_l1_norm(self):
        alpha = np.array([[0.3, 0.1], [0.0, 0.2]])
        beta = np.array([[2.0, 0.5], [1.0, 7.0]])
        cfg = _hawkes(alpha, [0.1, 0.1], beta)
        for i in range(2):
            for j in range(2):
                l1 = integrate.quad(lambda s: alpha[i, j] * beta[i, j] * np.exp(-beta[i, j] * s), 0, np.inf)[0]
                assert cfg.ground_truth()[i, j] == pytest.approx(l1, abs=1e-10)

    def test_nll_matches_direct(self):
        rng = np.random.default_rng(3)
        alpha = g.scale_to_spectral_radius(rng.uniform(size=(3, 3)), 0.7)
        cfg = _hawkes(alpha, [0.2, 0.1, 0.3], rng.uniform(0.5, 3, size=(3, 3)), S=3, mean_length=20)
        ds, _ = g.sample_hawkes(cfg, 1)
        for seq in ds.sequences:
            one = Dataset([seq], 3)
            assert g.hawkes_nll(cfg, one) == pytest.approx(_direct_hawkes_nll(cfg, seq), rel=1e-8)

    def test_target_length_and_horizon(self):
        cfg = _hawkes(np.zeros((1, 1)), [1.0], np.ones((1, 1)), S=50, mean_length=30)
        ds, _ = g.sample_hawkes(cfg, 0)
        assert abs(ds.lengths().mean() - 30) < 3
        assert all(s.T == s.times[-1] for s in ds.sequences)

    def test_validation(self):
        with pytest.raises(g.GeneratorError):
            _hawkes(np.zeros((2, 2)), [0.1, -0.1], np.ones((2, 2)))
        with pytest.raises(g.GeneratorError):
            _hawkes(np.zeros((2, 2)), [0.1, 0.1], np.zeros((2, 2)))


class TestSelfCorrecting:
    def test_closed_form_inverse(self):
        t = g._sc_next_times(0.0, np.array([0.0]), np.array([1.0]), np.array([np.e - 1.0]))
        assert t[0] == pytest.approx(1.0, abs=1e-14)

    def test_linear_limit(self):
        W, E = np.array([-0.7]), np.array([0.4])
        t = g._sc_next_times(2.0, W, np.array([0.0]), E)
        assert t[0] == pytest.approx(2.0 + 0.4 * np.exp(0.7), rel=1e-14)
        # a tiny drift agrees with the limit
        t_small = g._sc_next_times(2.0, W, np.array([1e-9]), E)
        assert t_small[0] == pytest.approx(t[0], rel=1e-6)
        assert g._sc_compensator(2.0, 3.0, W, np.array([0.0]))[0] == pytest.approx(np.exp(-0.7))

    @pytest.mark.parametrize("a,W,t0,t1", [(0.05, -1.0, 0.0, 3.0), (1.3, 0.2, 5.0, 5.5), (0.01, -4.0, 100.0, 180.0)])
    def test_compensator_quadrature(self, a, W, t0, t1):
        exact = g._sc_compensator(t0, t1, np.array([W]), np.array([a]))[0]
        quad = integrate.quad(lambda s: np.exp(a * s + W), t0, t1, epsrel=1e-12)[0]
        assert exact == pytest.approx(quad, rel=1e-10)

    def test_inverse_solves_compensator(self, rng):
        a = rng.uniform(0, 0.1, size=4)
        W = rng.uniform(-3, 0, size=4)
        E = rng.exponential(size=4)
        t = g._sc_next_times(7.0, W, a, E)
        for k in range(4):
            comp = g._sc_compensator(7.0, t[k], W[k : k + 1], a[k : k + 1])[0]
            assert comp == pytest.approx(E[k], rel=1e-10)

    def test_self_correction_lengthens_gaps(self):
        cfg = g.SelfCorrectingConfig(1, 10_000, 2, np.array([0.5]), np.array([[-2.0]]))
        ds, _ = g.sample_self_correcting(cfg, 0)
        pairs = np.array([s.gaps()[:2] for s in ds.sequences if len(s) >= 2])
        assert np.median(pairs[:, 1]) > np.median(pairs[:, 0])

    def test_ground_truth_is_weights(self):
        w = np.array([[0.0, -0.3], [-0.1, 0.0]])
        cfg = g.SelfCorrectingConfig(2, 3, 10, np.array([0.02, 0.03]), w)
        ds, gt = g.sample_self_correcting(cfg, 0)
        np.testing.assert_array_equal(gt, w)
        np.testing.assert_array_equal(ds.ground_truth, w)

    def test_nll_direct(self, rng):
        cfg = g.SelfCorrectingConfig(2, 2, 15, np.array([0.1, 0.3]), np.array([[-0.5, -0.1], [0.0, -0.8]]))
        ds, _ = g.sample_self_correcting(cfg, 4)
        for seq in ds.sequences:
            W = np.zeros(2)
            ll, comp, t_prev = 0.0, 0.0, 0.0
            for t, k in zip(seq.times, seq.types):
                comp += sum(integrate.quad(lambda s, j=j: np.exp(cfg.alpha_rate[j] * s + W[j]), t_prev, t)[0] for j in range(2))
                ll += cfg.alpha_rate[k] * t + W[k]
                W = W + cfg.w[:, k]
                t_prev = t
            assert g.self_correcting_nll(cfg, Dataset([seq], 2)) == pytest.approx(comp - ll, rel=1e-8)

    def test_rejects_positive_weights(self):
        with pytest.raises(g.GeneratorError):
            g.SelfCorrectingConfig(1, 1, 5, np.array([0.1]), np.array([[0.2]]))


def _isolated_a_config(S=60, T=2000.0):
    # A fires at 0.05, B and C essentially never, so E sees only the "A only" pattern
    parents, windows, tables = g._synergy_motif(0, 10.0, 0.05, {"none": 0.05, "A": 0.1, "C": 0.2, "AB": 0.5})
    tables = [np.array([0.05]), np.array([1e-12]), np.array([1e-12]), np.array([0.05]), tables[4]]
    return g.PgemConfig(5, S, T, parents, windows, tables)


def _union_length(starts, width, T):
    total, end = 0.0, -np.inf
    for s in starts:
        lo, hi = max(s, end), min(s + width, T)
        if hi > lo:
            total += hi - lo
        end = max(end, s + width)
    return total


class TestPgem:
    def test_no_parents_is_poisson(self):
        cfg = g.PgemConfig(2, 100, 300.0, [[], []], [[], []], [[0.2], [0.05]])
        ds, gt = g.sample_pgem(cfg, 0)
        rates = ds.type_counts() / (100 * 300.0)
        np.testing.assert_allclose(rates, [0.2, 0.05], rtol=0.05)
        np.testing.assert_array_equal(gt, 0.0)

    def test_a_only_rate_matches_table(self):
        cfg = _isolated_a_config()
        ds, _ = g.sample_pgem(cfg, 11)
        count, exposure = 0, 0.0
        for s in ds.sequences:
            a = s.times[s.types == 0]
            e = s.times[s.types == 4]
            exposure += _union_length(a, 10.0, s.T)
            # E events inside some (a, a + 10]
            idx = np.searchsorted(a, e, side="left") - 1
            count += int(np.sum((idx >= 0) & (e <= a[np.maximum(idx, 0)] + 10.0)))
        assert count / exposure == pytest.approx(0.1, rel=0.05)

    def test_nll_poisson_closed_form(self):
        cfg = g.PgemConfig(2, 1, 50.0, [[], []], [[], []], [[0.2], [0.05]])
        seq = EventSequence.from_events([(1.0, 0), (4.0, 1), (9.5, 0)], 50.0)
        expected = 0.25 * 50.0 - 2 * np.log(0.2) - np.log(0.05)
        assert g.pgem_nll(cfg, Dataset([seq], 2)) == pytest.approx(expected, rel=1e-12)

    def test_nll_crosses_change_points(self):
        # E's rate rises to table(A) on (1, 11] after A at t=1
        cfg = _isolated_a_config(S=1, T=30.0)
        seq = EventSequence.from_events([(1.0, 0), (5.0, 4)], 30.0)
        total_base = 0.05 + 1e-12 + 1e-12 + 0.05
        expected = total_base * 30.0 + 0.05 * 30.0 + (0.1 - 0.05) * 10.0 - np.log(0.05) - np.log(0.1)
        assert g.pgem_nll(cfg, Dataset([seq], 5)) == pytest.approx(expected, rel=1e-10)

    def test_table_size_validated(self):
        with pytest.raises(g.GeneratorError, match="2\\^1"):
            g.PgemConfig(2, 1, 10.0, [[], [0]], [[], [1.0]], [[0.1], [0.1]])


class TestDefaultConfigs:
    def test_excitation_full(self):
        cfg = g.default_config("excitation", "full", 0)
        assert (cfg.S, cfg.K, cfg.mean_length) == (1000, 10, 250)
        assert abs(g.spectral_radius(cfg.alpha) - 0.8) < 1e-9
        assert np.all((cfg.mu >= 0) & (cfg.mu <= 0.01))
        assert np.count_nonzero(cfg.alpha - np.diag(np.diag(cfg.alpha))) == 16

    def test_inhibition_full_weight_range(self):
        cfg = g.default_config("inhibition", "full", 0)
        nz = cfg.w[cfg.w != 0]
        assert np.all((nz >= -0.5) & (nz <= 0))
        assert np.all((cfg.alpha_rate >= 0) & (cfg.alpha_rate <= 0.05))
        assert (cfg.S, cfg.K) == (1000, 10)

    def test_synergy_full_two_motifs(self):
        cfg = g.default_config("synergy", "full", 0)
        assert (cfg.K, cfg.S, cfg.T) == (10, 1000, 1000.0)
        gt = cfg.ground_truth()
        assert gt.sum() == 6
        assert set(np.flatnonzero(gt[4])) == {0, 1, 2} and set(np.flatnonzero(gt[9])) == {5, 6, 7}

    def test_synergy_desk(self):
        cfg = g.default_config("synergy", "desk", 0)
        assert cfg.K == 5 and cfg.S == 200

    @pytest.mark.parametrize("name", ["excitation", "inhibition"])
    def test_desk_sizes(self, name):
        cfg = g.default_config(name, "desk", 0)
        assert (cfg.S, cfg.K, cfg.mean_length) == (200, 5, 100)

    def test_unknown(self):
        with pytest.raises(ValueError):
            g.default_config("bursty")
        with pytest.raises(ValueError):
            g.default_config("excitation", "huge")

    def test_config_json_round_trip(self):
        for name in ("excitation", "inhibition", "synergy"):
            cfg = g.default_config(name, "desk", 1)
            back = g.config_from_json(g.config_to_json(cfg))
            assert g.config_to_json(back) == g.config_to_json(cfg)


class TestDeterminism:
    @pytest.mark.parametrize("name", ["excitation", "inhibition", "synergy"])
    def test_same_seed_same_bytes(self, tmp_path, name):
        base = g.default_config(name, "desk", 0)
        small = type(base)(**{**base.__dict__, "S": 5})
        for i in range(2):
            ds, _ = g.sample(small, 9)
            save_jsonl(ds, tmp_path / f"{i}.jsonl")
        assert (tmp_path / "0.jsonl").read_bytes() == (tmp_path / "1.jsonl").read_bytes()

    def test_generate_single_seed(self):
        cfg_a, ds_a = g.generate("inhibition", "desk", 3)
        cfg_b, ds_b = g.generate("inhibition", "desk", 3)
        assert g.config_to_json(cfg_a) == g.config_to_json(cfg_b)
        assert ds_a == ds_b

    def test_different_seed_differs(self):
        cfg = _hawkes(np.zeros((1, 1)), [1.0], np.ones((1, 1)), S=2, mean_length=10)
        a, _ = g.sample(cfg, 0)
        b, _ = g.sample(cfg, 1)
        assert a != b
