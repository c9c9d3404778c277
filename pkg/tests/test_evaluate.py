import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalgp.evaluate import (
    BenchmarkConfig,
    coverage_eval,
    make_replicate_dataset,
    pehe,
    run_benchmark,
)
from causalgp.kernels import CMGPHyperparams

TINY = dict(n=70, d=2, n_treated=20, n_remove=6, replicates=2,
            cmgp_max_iters=4, baseline_max_iters=4)


class TestPehe:
    def test_zero_on_exact(self):
        t = np.array([1.0, -2.0, 0.5])
        assert pehe(t, t) == 0.0

    def test_hand_computed(self):
        est = np.array([1.0, 2.0, 3.0])
        true = np.array([1.0, 1.0, 5.0])
        np.testing.assert_allclose(pehe(est, true), (0 + 1 + 4) / 3,
                                   rtol=1e-14)

    def test_constant_offset(self):
        t = np.zeros(8)
        np.testing.assert_allclose(pehe(t + 0.3, t), 0.09, rtol=1e-12)

    @given(seed=st.integers(0, 10_000), c=st.floats(0.1, 10))
    @settings(max_examples=25, deadline=None)
    def test_scales_quadratically(self, seed, c):
        r = np.random.default_rng(seed)
        est, true = r.normal(size=6), r.normal(size=6)
        np.testing.assert_allclose(pehe(c * est, c * true),
                                   c * c * pehe(est, true), rtol=1e-9)

    def test_permutation_invariant(self):
        r = np.random.default_rng(1)
        est, true = r.normal(size=9), r.normal(size=9)
        perm = r.permutation(9)
        np.testing.assert_allclose(pehe(est[perm], true[perm]),
                                   pehe(est, true), rtol=1e-12)


class TestConfig:
    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown"):
            BenchmarkConfig.from_dict({"replicate": 3})

    def test_round_trip(self):
        cfg = BenchmarkConfig(**TINY)
        back = BenchmarkConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            BenchmarkConfig(methods=("cmgp", "mystery"))


class TestReplicateData:
    def test_deterministic(self):
        cfg = BenchmarkConfig(**TINY)
        a = make_replicate_dataset(cfg, 5, 0)
        b = make_replicate_dataset(cfg, 5, 0)
        np.testing.assert_array_equal(a[0].features, b[0].features)
        np.testing.assert_array_equal(a[0].outcomes, b[0].outcomes)
        assert a[2] == b[2]

    def test_replicates_differ(self):
        cfg = BenchmarkConfig(**TINY)
        a = make_replicate_dataset(cfg, 5, 0)
        b = make_replicate_dataset(cfg, 5, 1)
        assert not np.array_equal(a[0].features, b[0].features)

    def test_counts_and_truth(self):
        cfg = BenchmarkConfig(**TINY)
        ds, truth, _ = make_replicate_dataset(cfg, 0, 0)
        assert ds.n == cfg.n - cfg.n_remove
        assert ds.n_treated == cfg.n_treated
        np.testing.assert_array_equal(truth.true_ite, truth.f1 - truth.f0)

    def test_realization_files(self, tmp_path):
        from causalgp.data import load_csv, save_csv
        cfg0 = BenchmarkConfig(**TINY)
        paths = []
        for r in range(2):
            ds, truth, _ = make_replicate_dataset(cfg0, 9, r)
            p = tmp_path / f"rep{r}.csv"
            save_csv(ds, truth, p)
            paths.append(str(p))
        cfg = BenchmarkConfig(**{**TINY, "n_remove": 0},
                              realization_files=tuple(paths),
                              oracle_inject=True)
        report = run_benchmark(cfg, seed=9)
        assert {r["seed"] for r in report.records} == {0, 1}


class TestRunBenchmark:
    def test_smoke_and_structure(self):
        cfg = BenchmarkConfig(**TINY)
        report = run_benchmark(cfg, seed=3)
        assert len(report.records) == 2 * len(cfg.methods)
        assert not report.failures
        for method in cfg.methods:
            agg = report.aggregates[method]
            assert agg["in_sample_sqrt_pehe"]["n"] == 2
            assert agg["out_sample_sqrt_pehe"]["mean"] > 0
        assert "in_sample" in report.paired and "out_sample" in report.paired

    def test_deterministic(self):
        cfg = BenchmarkConfig(**TINY)
        a = run_benchmark(cfg, seed=3).to_json_dict()
        b = run_benchmark(cfg, seed=3).to_json_dict()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_oracle_inject_scores_zero(self):
        cfg = BenchmarkConfig(**TINY, oracle_inject=True)
        report = run_benchmark(cfg, seed=0)
        for rec in report.records:
            assert rec["method"] == "oracle"
            assert rec["in_sample_sqrt_pehe"] == 0.0
            assert rec["out_sample_sqrt_pehe"] == 0.0

    def test_finalize_recomputes_from_records(self):
        cfg = BenchmarkConfig(**TINY, methods=("naive-gp",))
        report = run_benchmark(cfg, seed=1)
        before = json.dumps(report.aggregates, sort_keys=True)
        report.finalize()
        assert json.dumps(report.aggregates, sort_keys=True) == before

    def test_cmgp_traces_recorded(self):
        cfg = BenchmarkConfig(**{**TINY, "replicates": 1})
        report = run_benchmark(cfg, seed=2)
        trace = report.traces[(0, "cmgp")]
        assert len(trace.params) >= 2
        assert "traces" not in report.to_json_dict()

    def test_serialization(self, tmp_path):
        cfg = BenchmarkConfig(**{**TINY, "replicates": 1})
        report = run_benchmark(cfg, seed=2)
        jpath = tmp_path / "report.json"
        cpath = tmp_path / "records.csv"
        report.save_json(jpath)
        report.save_records_csv(cpath)
        obj = json.loads(jpath.read_text())
        assert obj["n_records"] == len(report.records)
        lines = cpath.read_text().splitlines()
        assert lines[0].startswith("# config:")
        assert lines[2].split(",")[0:2] == ["seed", "method"]
        assert len(lines) == 3 + len(report.records)


class TestCoverage:
    @staticmethod
    def _theta(d=1):
        return CMGPHyperparams((0.3, 0.3), np.full(d, 0.6), np.full(d, 0.8),
                               (1.0, 0.8, 0.4), (0.7, 1.0, 0.3))

    def test_gamma_zero_never_covers(self):
        cov = coverage_eval(self._theta(), n_train=25, n_test=10, d=1,
                            gamma=0.0, replicates=2, seed=0)
        assert cov == 0.0

    def test_wide_intervals_almost_always_cover(self):
        cov = coverage_eval(self._theta(), n_train=25, n_test=10, d=1,
                            gamma=0.9999, replicates=4, seed=0)
        assert cov >= 0.95

    def test_deterministic(self):
        args = dict(n_train=20, n_test=8, d=1, gamma=0.9, replicates=3,
                    seed=5)
        assert (coverage_eval(self._theta(), **args)
                == coverage_eval(self._theta(), **args))
