import csv
import math

import numpy as np
import pytest

from driftkf import harness
from driftkf.harness import (
    Benchmark,
    ErrorSeries,
    ExperimentConfig,
    RmsRow,
    RmsTable,
    envelope,
    force_error,
    grid_search,
    identify,
    initial_ensembles,
    measured_signal,
    measurement_cov,
    rms_of_mean,
    run_batch,
    run_experiment,
    table_orderings,
    write_experiment_csvs,
)
from driftkf.mill import X5CRNI18_10, CoefficientSet, EngagementSample
from driftkf.simulate import noise_sigma

SHORT = Benchmark(n_rev=3)


class TestForceError:
    def test_identity(self):
        eng = EngagementSample(0.5, np.array([0.0, 0.04, 0.08]), 0.1)
        assert force_error(X5CRNI18_10, X5CRNI18_10, eng) == (0.0, 0.0)

    def test_double_k_single_disk(self):
        eng = EngagementSample(0.5, np.array([0.06]), 0.2)
        est = CoefficientSet(2 * 1700.0, 0.18, 2 * 350.0, 0.55)
        ideal = (1700.0 * 0.2 * 0.06 ** 0.82, 350.0 * 0.2 * 0.06 ** 0.45)
        assert force_error(est, X5CRNI18_10, eng) == pytest.approx(ideal, rel=1e-13)

    def test_direct_evaluation(self):
        eng = EngagementSample(0.5, np.array([0.1]), 1.0)
        est = CoefficientSet(1800.0, 0.2, 350.0, 0.55)
        expected = 1800 * math.pow(0.1, 0.8) - 1700 * math.pow(0.1, 0.82)
        assert force_error(est, X5CRNI18_10, eng)[0] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(27.975362, abs=1e-6)


class TestEnvelope:
    def test_single_run_has_zero_width(self):
        env = envelope(np.arange(5.0)[:, None])
        np.testing.assert_array_equal(env.width, 0.0)
        np.testing.assert_array_equal(env.mean, np.arange(5.0))

    def test_symmetric_two_sigma(self):
        v = np.random.default_rng(0).normal(size=(30, 7))
        env = envelope(v)
        sd = np.sqrt(((v - v.mean(axis=1, keepdims=True)) ** 2).mean(axis=1))
        np.testing.assert_allclose(env.hi - env.mean, 2 * sd, rtol=1e-12)
        np.testing.assert_allclose(env.mean - env.lo, 2 * sd, rtol=1e-12)
        assert np.all((env.lo <= env.mean) & (env.mean <= env.hi))

    def test_cap(self):
        env = envelope(np.array([[1e9, -1e9, 0.0]]), cap=1e6)
        assert env.mean[0] == 0.0
        assert env.hi[0] == pytest.approx(2e6 * math.sqrt(2 / 3))

    def test_rms_one_pass_oracle(self):
        v = np.random.default_rng(1).normal(size=(200, 5))
        total = 0.0
        for row in v:
            m = sum(row) / len(row)
            total += m * m
        oracle = math.sqrt(total / len(v))
        assert ErrorSeries(v, v).rms() == pytest.approx(oracle, rel=1e-12)
        assert rms_of_mean(v) == pytest.approx(oracle, rel=1e-12)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"case": "wavy"}, {"method": "pf"}, {"n_init": 0}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(**kwargs)

    def test_initial_ensembles_shared(self):
        a = initial_ensembles(SHORT, 4, 3)
        b = initial_ensembles(SHORT, 4, 3)
        c = initial_ensembles(SHORT, 4, 5)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[0], c[0][:3])

    def test_measurement_cov_is_generator_variance(self):
        sigma = noise_sigma(harness.clean_signal(SHORT, "static"), SHORT.snr)
        np.testing.assert_allclose(measurement_cov(SHORT, "static"), np.diag(np.square(sigma)))


class TestExperiments:
    def test_deterministic(self):
        cfg = ExperimentConfig("alternating", "enkf_star", n_init=3, seed=2)
        a, b = run_experiment(cfg, SHORT), run_experiment(cfg, SHORT)
        assert a.errors.dft.tobytes() == b.errors.dft.tobytes()
        assert a.kt.tobytes() == b.kt.tobytes()

    def test_batch_matches_single(self):
        batch = run_batch(SHORT, "static", "enkf_star", [0, 1], 2)
        single = run_experiment(ExperimentConfig("static", "enkf_star", n_init=2, seed=1), SHORT)
        np.testing.assert_array_equal(batch[1].errors.dft, single.errors.dft)

    def test_single_init_zero_envelope(self):
        res = run_experiment(ExperimentConfig("static", "enkf", n_init=1), SHORT)
        np.testing.assert_array_equal(res.errors.envelope.width, 0.0)

    def test_shapes_and_truth(self):
        res = run_experiment(ExperimentConfig("ascending", "enkf_star", n_init=4), SHORT)
        n = len(measured_signal(SHORT, "ascending", 0))
        assert res.n_samples == n
        assert res.errors.dft.shape == res.kt.shape == (n, 4)
        assert res.truth[-1, 0] > res.truth[0, 0]
        assert res.inflated_at[:2] == [49, 99]

    def test_rls_runs_from_ensemble_mean(self):
        res = run_experiment(ExperimentConfig("static", "rls", n_init=3), SHORT)
        assert res.errors.cap == harness.DIVERGENCE_CAP
        assert res.singular == 0
        assert res.divergent >= 0
        assert np.all(np.isfinite(res.errors.envelope.mean))

    def test_identify_without_case(self):
        sig = measured_signal(SHORT, "static", 0)
        res = identify(sig, "enkf", measurement_cov(SHORT, "static"), seed=0, bench=SHORT)
        ref = run_experiment(ExperimentConfig("static", "enkf", n_init=1), SHORT)
        assert res.config is None
        np.testing.assert_array_equal(res.kt, ref.kt)
        with pytest.raises(ValueError):
            identify(sig, "bogus", np.eye(2))

    def test_csv_output(self, tmp_path):
        res = run_experiment(ExperimentConfig("static", "enkf", n_init=2), SHORT)
        files = write_experiment_csvs(res, tmp_path)
        assert sorted(p.name for p in files) == ["eF_enkf_static.csv", "ki_enkf_static.csv", "mi_enkf_static.csv"]
        with open(files[0]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample", "mean", "lo", "hi"]
        assert len(rows) == res.n_samples + 1
        assert float(rows[1][1]) == res.errors.envelope.mean[0]


@pytest.fixture(scope="module")
def grid():
    return grid_search(SHORT, seeds=[0], n_init=2, cases=("static",))


class TestGrid:
    def test_layout(self, grid):
        table = grid.tables[0]
        assert len(table.rows) == 16
        assert table.classic.step == math.inf and table.classic.lam is None
        assert table.get("enkf_star", 50.0, 10.0).rms["static"] >= 0

    def test_rms_matches_envelopes(self, grid):
        table = grid.tables[0]
        for (method, step, lam, case), envs in grid.envelopes.items():
            mean = envs[0].mean
            assert table.get(method, step, lam).rms[case] == pytest.approx(
                math.sqrt(float(np.sum(mean ** 2)) / len(mean)), rel=1e-12)

    def test_repeatable(self, grid):
        again = grid_search(SHORT, seeds=[0], n_init=2, steps=(50,), lambdas=(10.0,), cases=("static",))
        assert again.tables[0].get("enkf_star", 50.0, 10.0).rms == grid.tables[0].get("enkf_star", 50.0, 10.0).rms
        assert again.tables[0].classic.rms == grid.tables[0].classic.rms

    def test_csv(self, grid, tmp_path):
        path = tmp_path / "rms.csv"
        grid.mean_table().to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["method", "step", "lambda", "static", "ascending", "alternating"]
        assert len(rows) == 17
        assert rows[-1][:3] == ["enkf", "inf", ""]
        assert rows[1][:3] == ["enkf_star", "50", "1.0"]


def _table(classic, star):
    rows = [RmsRow("enkf_star", float(s), float(l), dict(zip(("static", "alternating"), v)))
            for (s, l), v in star.items()]
    rows.append(RmsRow("enkf", math.inf, None, dict(zip(("static", "alternating"), classic))))
    return RmsTable(rows)


class TestOrderings:
    def test_all_hold(self):
        star = {(50, 1): (5, 6), (100, 1): (4, 7), (50, 10): (6, 5), (100, 10): (5, 6)}
        assert table_orderings(_table((1, 50), star)) == {"a": True, "b": True, "c": True, "d": True}

    def test_each_can_fail(self):
        star = {(50, 1): (5, 6), (100, 1): (6, 5)}
        checks = table_orderings(_table((5.5, 5.5), star))
        assert checks == {"a": False, "b": False, "c": False, "d": False}


@pytest.mark.slow
def test_static_classic_error_settles():
    res = run_batch(Benchmark(), "static", "enkf", range(20), 20)
    settled = 0
    for r in res:
        mean = r.errors.envelope.mean
        # one tooth pass (~30 samples') around sample 100 against the tail
        early = np.sqrt(np.mean(mean[85:116] ** 2))
        late = np.sqrt(np.mean(mean[800:] ** 2))
        settled += late < early
    assert settled >= 0.9 * len(res)
