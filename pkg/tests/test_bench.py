import csv
import io
import math

import numpy as np
import pytest

from hdmulti.bench import (
    NULL_COLUMNS,
    POWER_COLUMNS,
    RADIUS_COLUMNS,
    ConfigError,
    ExperimentConfig,
    build_gof_test,
    run,
    run_gof_power,
    run_null_dist,
    run_radius,
    run_two_sample_power,
)
from hdmulti.alternatives import null_uniform


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _gof_config(**kw):
    base = dict(mode="gof-power", null="uniform", d=50, n=100, alt="dense", tests=["trunc-chi2", "l1"],
                trials=200, eps_grid=[0.0, 0.3], calib="mc:1000", seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def _ts_config(**kw):
    base = dict(mode="two-sample-power", d=50, n1=60, n2=60, alt="uniform-dense", tests=["chi2", "l1", "oracle"],
                trials=40, eps_grid=[0.0, 0.5], calib="perm:100", oracle_calib="mc:500", seed=4)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="valid keys"):
            ExperimentConfig.from_dict({"mode": "radius", "colour": 1})

    def test_round_trip(self, tmp_path):
        cfg = _gof_config()
        path = tmp_path / "c.json"
        import json

        path.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_json(path) == cfg

    @pytest.mark.parametrize(
        "change,msg",
        [
            (dict(mode="bogus"), "mode"),
            (dict(trials=0), "trials"),
            (dict(alpha=1.5), "alpha"),
            (dict(eps_grid=[0.2, 0.1]), "increasing"),
            (dict(tests=["bogus"]), "choose from"),
            (dict(alt="bogus"), "choose from"),
            (dict(null="bogus"), "choose from"),
            (dict(calib="boot:5"), "mc:M"),
            (dict(tests=["chi2:0.5"]), "no parameter"),
            (dict(tests=["bulk-tail:2"]), "sigma"),
        ],
    )
    def test_validation(self, change, msg):
        with pytest.raises(ConfigError, match=msg):
            _gof_config(**change).validate()

    def test_two_sample_validation(self):
        with pytest.raises(ConfigError, match="n1 == n2"):
            _ts_config(n1=100).validate()
        with pytest.raises(ConfigError, match="perm"):
            _ts_config(calib="mc:500").validate()
        with pytest.raises(ConfigError, match="choose from"):
            _ts_config(tests=["trunc-chi2"]).validate()

    def test_registry(self):
        p0 = null_uniform(20)
        assert build_gof_test("bulk-tail:0.25", p0, 40).details["sigma"] == 0.25
        assert build_gof_test("bonferroni", p0, 40).joint
        assert not build_gof_test("bonferroni-strict", p0, 40).joint
        assert build_gof_test("l2", p0, 40).name == "l2"


class TestGofPower:
    def test_schema_and_provenance(self):
        text = run(_gof_config())
        header = text.splitlines()[0].split(",")
        assert tuple(header) == POWER_COLUMNS
        rows = _rows(text)
        assert [(r["eps_nominal"], r["test"]) for r in rows] == [
            ("0", "trunc-chi2"), ("0", "l1"), ("0.3", "trunc-chi2"), ("0.3", "l1")]
        for r in rows:
            assert r["n2"] == "" and r["n1"] == "100"
            assert r["seed"] == "3" and r["trials"] == "200" and r["alpha"] == "0.05" and r["calib"] == "mc:1000"
            assert 0 <= float(r["power"]) <= 1

    def test_level_rows(self):
        cfg = _gof_config(tests=["chi2", "lrt", "trunc-chi2", "l1", "l2", "bulk-tail", "bonferroni"],
                          trials=1000, eps_grid=[0.0], calib="mc:2000")
        for row in run_gof_power(cfg).rows:
            se = math.sqrt(0.05 * 0.95 / 1000)
            assert abs(row.power - 0.05) <= 3 * se, row

    def test_infeasible_rows_are_skipped(self):
        rows = _rows(run(_gof_config(eps_grid=[0.3, 1.95])))
        skipped = [r for r in rows if r["eps_nominal"] == "1.95"]
        assert len(skipped) == 2 and all(r["power"] == "" and r["eps_realized_mean"] == "" for r in skipped)

    def test_realized_distance_recorded(self):
        curve = run_gof_power(_gof_config(alt="minimax", eps_grid=[0.2, 0.4]))
        for row in curve.rows:
            assert row.eps_realized_mean == pytest.approx(row.eps_nominal, rel=0.1)

    @pytest.mark.parametrize("workers", [4, 8])
    def test_thread_count_invariance(self, workers):
        cfg = _gof_config(tests=["trunc-chi2", "bonferroni"], alt="minimax")
        assert run(cfg) == run(_gof_config(tests=["trunc-chi2", "bonferroni"], alt="minimax", workers=workers))

    def test_classical_tests_fail_on_sparse_powerlaw(self):
        cfg = _gof_config(null="powerlaw", d=1000, n=400, alt="sparse",
                          tests=["chi2", "lrt", "trunc-chi2", "bonferroni"],
                          trials=500, eps_grid=[0.2, 0.3, 0.4, 0.6], calib="mc:2000", seed=3)
        curve = run_gof_power(cfg)
        power = {(r.test, r.eps_nominal): r.power for r in curve.rows}
        hits = [e for e in cfg.eps_grid
                if power["trunc-chi2", e] >= 0.9 and power["bonferroni", e] >= 0.9
                and power["chi2", e] <= 0.5 and power["lrt", e] <= 0.5]
        assert hits, power


class TestTwoSamplePower:
    def test_schema(self):
        rows = _rows(run(_ts_config()))
        assert len(rows) == 6
        assert all(r["n2"] == "60" and r["calib"] == "perm:100" for r in rows)

    @pytest.mark.parametrize("workers", [4, 8])
    def test_thread_count_invariance(self, workers):
        assert run(_ts_config()) == run(_ts_config(workers=workers))

    def test_batu_pair_needs_small_pair_n(self):
        cfg = _ts_config(alt="batu", n1=200, n2=20, d=50, tests=["l1"], eps_grid=[0.5], trials=5)
        with pytest.raises(ValueError, match="2d"):
            run_two_sample_power(cfg)
        cfg.pair_n = 100
        assert run_two_sample_power(cfg).rows[0].power is not None

    def test_powerlaw_pair_loss_is_small(self):
        cfg = _ts_config(alt="powerlaw-sparse", d=400, n1=200, n2=200, tests=["oracle", "chi2", "l1", "l2"],
                         trials=300, eps_grid=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6], calib="perm:200",
                         oracle_calib="mc:1000", seed=5)
        curve = run_two_sample_power(cfg)
        for eps in cfg.eps_grid:
            power = {r.test: r.power for r in curve.rows if r.eps_nominal == eps}
            best = max(power[t] for t in ("chi2", "l1", "l2"))
            assert power["oracle"] - best <= 0.1, (eps, power)

    def test_imbalanced_l1_tracks_oracle(self):
        cfg = _ts_config(alt="powerlaw-sparse", d=400, n1=2000, n2=200, tests=["oracle", "l1"],
                         trials=200, eps_grid=[0.0, 0.2, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6], calib="perm:200",
                         oracle_calib="mc:1000", seed=6)
        curve = run_two_sample_power(cfg)
        for eps in cfg.eps_grid[len(cfg.eps_grid) // 2:]:
            power = {r.test: r.power for r in curve.rows if r.eps_nominal == eps}
            assert abs(power["oracle"] - power["l1"]) <= 0.15, (eps, power)


class TestNullDist:
    def _summary(self, records, test, key):
        return next(r["value"] for r in records if r["test"] == test and r["record"] == "summary" and r["key"] == key)

    def test_classical_spread_exceeds_truncated(self):
        cfg = ExperimentConfig(mode="null-dist", null="powerlaw", d=1000, n=400, tests=["chi2", "trunc-chi2"],
                               calib="mc:5000", seed=1)
        records = run_null_dist(cfg)

        def spread(test):
            q = {k: self._summary(records, test, k) for k in ("q01", "q50", "q99")}
            return (q["q99"] - q["q50"]) / (q["q50"] - q["q01"])

        assert spread("chi2") > spread("trunc-chi2")
        assert self._summary(records, "chi2", "skewness") > self._summary(records, "trunc-chi2", "skewness")

    def test_single_category_is_degenerate(self):
        cfg = ExperimentConfig(mode="null-dist", null="uniform", d=1, n=25, tests=["chi2", "lrt", "l1"],
                               calib="mc:200", seed=0)
        records = run_null_dist(cfg)
        for test in ("chi2", "lrt", "l1"):
            assert self._summary(records, test, "variance") == 0
            assert self._summary(records, test, "mean") == 0

    def test_csv_and_determinism(self):
        cfg = dict(mode="null-dist", null="powerlaw", d=100, n=50, tests=["trunc-chi2", "bulk-tail"],
                   calib="mc:500", seed=2, bins=10)
        a = run(ExperimentConfig(**cfg))
        assert a == run(ExperimentConfig(**cfg))
        rows = _rows(a)
        assert tuple(a.splitlines()[0].split(",")) == NULL_COLUMNS
        hist = [r for r in rows if r["test"] == "trunc-chi2" and r["record"] == "hist"]
        assert len(hist) == 10 and sum(int(r["count"]) for r in hist) == 500
        assert {r["test"] for r in rows} >= {"bulk-tail/T1[sigma=0.125]", "bulk-tail/T2[sigma=0.125]"}
        assert all(r["seed"] == "2" and r["calib"] == "mc:500" for r in rows)


class TestRadius:
    def _table(self, null, d_grid, n_grid):
        return run_radius(ExperimentConfig(mode="radius", null=null, d_grid=d_grid, n_grid=n_grid))

    def test_point_mass(self):
        for row in self._table("pointmass", [5, 50], [10, 1000]):
            assert row["ell_n"] == row["u_n"] == 1 / row["n"]

    def test_uniform_tracks_global_rate(self):
        for row in self._table("uniform", [10, 100, 1000], [10, 100, 1000]):
            if row["global_rate"] <= 1:
                assert 0.25 <= row["ell_n"] / row["global_rate"] <= 4
            assert row["two_thirds_norm"] == pytest.approx(math.sqrt(row["d"]))

    def test_powerlaw_is_easier(self):
        uni = self._table("uniform", [10, 100, 1000], [10, 100, 1000])
        pl = self._table("powerlaw", [10, 100, 1000], [10, 100, 1000])
        for a, b in zip(uni, pl):
            if a["ell_n"] < 1:
                assert b["ell_n"] < a["ell_n"]

    def test_csv(self):
        text = run(ExperimentConfig(mode="radius", null="uniform", d_grid=[100], n_grid=[100]))
        assert tuple(text.splitlines()[0].split(",")) == RADIUS_COLUMNS
        row = _rows(text)[0]
        assert 0.23 <= float(row["ell_n"]) <= 0.28
