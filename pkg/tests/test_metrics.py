import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from runoffbench import data as D
from runoffbench import metrics as ME
from runoffbench.errors import MetricUndefinedError, ParameterError
from runoffbench.tensor import RngStream

from oracles import ref_flv, ref_fhv, ref_kge, ref_nse, seeded_pair


# ---------------------------------------------------------------- NSE


def test_nse_closed_forms():
    obs = np.array([1.0, 2.0, 3.0, 4.0])
    assert ME.nse(obs, obs) == 1.0
    assert ME.nse(obs, np.full(4, obs.mean())) == 0.0
    # two-line formula: residual SS 0.07, total SS 5
    assert ME.nse(obs, [1.1, 1.9, 3.2, 3.9]) == pytest.approx(1 - 0.07 / 5, abs=1e-14)
    assert ME.nse(obs, [1.1, 1.9, 3.2, 3.9]) == pytest.approx(0.986, abs=1e-12)


def test_nse_undefined():
    with pytest.raises(MetricUndefinedError):
        ME.nse([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricUndefinedError):
        ME.nse([1.0, np.nan], [1.0, 2.0])


def test_nan_observations_are_skipped():
    obs, sim = seeded_pair(1, n=200, gaps=True)
    keep = ~np.isnan(obs)
    assert ME.nse(obs, sim) == ME.nse(obs[keep], sim[keep])
    with pytest.raises(ParameterError):
        ME.nse([1.0, 2.0], [1.0, np.nan])
    with pytest.raises(ParameterError):
        ME.nse([1.0, 2.0], [1.0])


# ---------------------------------------------------------------- KGE


def test_kge_closed_forms():
    obs = np.array([1.0, 3.0, 2.0, 5.0])
    k = ME.kge(obs, obs)
    assert (k.kge, k.r, k.alpha, k.beta) == (1.0, 1.0, 1.0, 1.0)
    k = ME.kge(obs, 2 * obs)
    assert k.r == pytest.approx(1, abs=1e-15) and k.alpha == 2 and k.beta == 2
    assert abs(k.kge - (1 - math.sqrt(2))) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 400))
def test_kge_identity_is_exact(seed, n):
    obs = np.exp(RngStream(seed).normal(0.0, 1.5, n))
    assert ME.kge(obs, obs).kge == 1.0 and ME.nse(obs, obs) == 1.0


def test_kge_undefined():
    with pytest.raises(MetricUndefinedError):
        ME.kge([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(MetricUndefinedError):
        ME.kge([-1.0, 1.0], [1.0, 2.0])


@pytest.mark.parametrize("a", [0.25, 0.5, 1.0, 1.7, 3.0])
@pytest.mark.parametrize("b", [-0.5, 0.0, 0.3, 2.0])
def test_kge_affine_response(a, b):
    obs, _ = seeded_pair(2, n=300)
    k = ME.kge(obs, a * obs + b * obs.mean())
    assert abs(k.r - 1) < 1e-12
    assert abs(k.alpha - a) < 1e-12
    assert abs(k.beta - (a + b)) < 1e-12
    assert abs(k.kge - (1 - math.sqrt((a - 1) ** 2 + (a + b - 1) ** 2))) < 1e-12


# ---------------------------------------------------------------- FHV / FLV


def test_fhv_closed_forms():
    obs, _ = seeded_pair(3, n=500)
    assert ME.fhv(obs, obs) == 0.0
    assert abs(ME.fhv(obs, 1.1 * obs) - 10.0) < 1e-10
    with pytest.raises(MetricUndefinedError):
        ME.fhv(obs[:49], obs[:49])
    with pytest.raises(MetricUndefinedError):
        ME.fhv(np.zeros(60), np.ones(60))


def test_fhv_segment_size():
    # 149 values: floor(0.02 * 149) = 2 highest flows
    obs = np.arange(1.0, 150.0)
    sim = obs.copy()
    sim[-1] += 10.0
    sim[-3] += 1000.0  # third-highest in obs, but it becomes the sim FDC's top
    expected = 100 * ((1147.0 + 159.0) - (149.0 + 148.0)) / (149.0 + 148.0)
    assert ME.fhv(obs, sim) == pytest.approx(expected, abs=1e-12)


def test_flv_closed_forms():
    obs, _ = seeded_pair(4, n=500)
    assert ME.flv(obs, obs) == 0.0
    for c in (0.3, 2.0, 17.0):
        assert abs(ME.flv(obs, c * obs)) < 1e-10
    with pytest.raises(MetricUndefinedError):
        ME.flv(np.ones(10), obs[:10])
    with pytest.raises(MetricUndefinedError):
        ME.flv(obs[:3], obs[:3])


def test_flv_with_zero_flows_matches_oracle():
    obs, sim = seeded_pair(5, zeros=True)
    assert abs(ME.flv(obs, sim) - ref_flv(obs, sim)) < 1e-10


def test_perfect_prediction_fixed_point():
    obs, _ = seeded_pair(6, gaps=True)
    sim = np.nan_to_num(obs, nan=123.0)
    k = ME.kge(obs, sim)
    assert abs(ME.nse(obs, sim) - 1) <= 1e-12 and abs(k.kge - 1) <= 1e-12
    assert abs(ME.fhv(obs, sim)) <= 1e-12 and abs(ME.flv(obs, sim)) <= 1e-12


@pytest.mark.parametrize("seed", range(50))
def test_metrics_match_brute_force(seed):
    obs, sim = seeded_pair(100 + seed, zeros=seed % 5 == 0, gaps=seed % 3 == 0)
    assert abs(ME.nse(obs, sim) - ref_nse(obs, sim)) < 1e-10
    k = ME.kge(obs, sim)
    assert np.max(np.abs(np.array([k.kge, k.r, k.alpha, k.beta]) - ref_kge(obs, sim))) < 1e-10
    assert abs(ME.fhv(obs, sim) - ref_fhv(obs, sim)) < 1e-10
    assert abs(ME.flv(obs, sim) - ref_flv(obs, sim)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(60, 400))
def test_permutation_invariance(seed, n):
    obs, sim = seeded_pair(seed, n=n)
    rng = np.random.default_rng(seed)
    p, q = rng.permutation(n), rng.permutation(n)
    assert ME.nse(obs[p], sim[p]) == pytest.approx(ME.nse(obs, sim), abs=1e-12)
    assert ME.kge(obs[p], sim[p]).kge == pytest.approx(ME.kge(obs, sim).kge, abs=1e-12)
    # FDC metrics ignore pairing altogether
    assert ME.fhv(obs[p], sim[q]) == ME.fhv(obs, sim)
    assert ME.flv(obs[p], sim[q]) == ME.flv(obs, sim)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_metric_upper_bounds(seed):
    obs, sim = seeded_pair(seed, n=80)
    assert ME.nse(obs, sim) <= 1.0 and ME.kge(obs, sim).kge <= 1.0


# ---------------------------------------------------------------- reports


def hand_report(values, label=""):
    return ME.MetricReport([ME.BasinMetrics(f"b{i}", nse=v, kge=v / 2, fhv=-v, flv=v * 10)
                            for i, v in enumerate(values)], label)


def test_report_medians_and_undefined():
    rep = hand_report([0.9, 0.2, 0.5])
    assert rep.median("nse") == sorted([0.9, 0.2, 0.5])[1]
    assert hand_report([0.4]).median("nse") == 0.4
    rep.basins.append(ME.BasinMetrics("bad", undefined={"nse": "zero variance"}))
    assert rep.median("nse") == 0.5 and rep.n_undefined("nse") == 1


def test_report_csv_round_trip(tmp_path):
    rep = hand_report([0.9, 0.2, 0.5])
    rep.write(tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "basin_id,nse,kge,r,alpha,beta,fhv,flv"
    assert text[5] == "statistic,nse,kge,r,alpha,beta,fhv,flv"
    assert text[6].startswith("median,0.5,0.25,nan")
    back = ME.read_metric_report(tmp_path / "r.csv")
    assert [b.nse for b in back.basins] == [0.9, 0.2, 0.5]


def test_replay_oracle_scores_perfectly():
    recs = D.synth_linear_reservoir(3, 400, rng=RngStream(7))
    split = D.SplitSpec("2000-01-01", "2000-06-30", "2000-07-01", "2001-02-03")
    rep = ME.evaluate_model(ME.ReplayOracle(), recs, split)
    for b in rep.basins:
        assert abs(b.nse - 1) <= 1e-12 and abs(b.kge - 1) <= 1e-12
        assert abs(b.fhv) <= 1e-12 and abs(b.flv) <= 1e-12
    assert rep.label == "replay-oracle"
    mean_rep = ME.evaluate_prediction_mean([ME.ReplayOracle(), ME.ReplayOracle()], recs, split)
    assert mean_rep.median("nse") == 1.0


def test_undefined_basin_is_reported_not_fatal():
    m = ME.basin_metrics("flat", np.ones(100), np.linspace(0, 2, 100))
    assert math.isnan(m.nse) and "nse" in m.undefined and "kge" in m.undefined
    # top 2 of 100: sim FDC (2, 2*98/99) against obs (1, 1)
    assert m.fhv == pytest.approx(100 * ((2 + 2 * 98 / 99) - 2) / 2, abs=1e-12)


# ---------------------------------------------------------------- ensembles


def test_two_member_arithmetic():
    s = ME.summarize_ensemble([hand_report([0.7]), hand_report([0.8])])
    assert s["nse"].mean == pytest.approx(0.75, abs=1e-15)
    assert s["nse"].std == pytest.approx(math.sqrt(0.005), abs=1e-15)
    assert s["nse"].std == pytest.approx(0.0707, abs=1e-4)
    assert not s["nse"].degenerate


def test_single_member_is_degenerate():
    s = ME.summarize_ensemble([hand_report([0.7, 0.1, 0.3])])
    assert s["nse"].mean == 0.3 and s["nse"].std == 0.0 and s["nse"].degenerate
    assert "single member" in s.table_row()
    with pytest.raises(ParameterError):
        ME.summarize_ensemble([])


def test_identical_members_have_zero_std():
    s = ME.summarize_ensemble([hand_report([0.4, 0.6])] * 4)
    assert all(m.std == 0.0 for m in s.metrics.values())


def test_ten_members_against_spreadsheet_oracle():
    rng = RngStream(8)
    reports = [hand_report(rng.uniform(-0.5, 1.0, 7)) for _ in range(10)]
    s = ME.summarize_ensemble(reports)
    for metric in ("nse", "kge", "fhv", "flv"):
        medians = [statistics.median(getattr(b, metric) for b in r.basins) for r in reports]
        assert abs(s[metric].mean - statistics.fmean(medians)) < 1e-12
        assert abs(s[metric].std - statistics.stdev(medians)) < 1e-12
    csv = s.to_csv().splitlines()
    assert csv[0] == "metric,mean,std,n_members,degenerate" and csv[1].startswith("nse,")
    assert s.table_row().splitlines()[0].startswith("NSE: ")


# ---------------------------------------------------------------- CDF


def test_cdf_small_cases():
    c = ME.cdf_series([3.0, 1.0, 2.0], "nse")
    assert c.values.tolist() == [1.0, 2.0, 3.0]
    np.testing.assert_allclose(c.levels, [1 / 6, 1 / 2, 5 / 6], rtol=0, atol=1e-15)
    assert ME.cdf_series([0.4], "kge").levels.tolist() == [0.5]
    c = ME.cdf_series([1.0, np.nan, 0.5], "fhv")
    assert c.n_excluded == 1 and c.values.tolist() == [0.5, 1.0]
    with pytest.raises(ParameterError):
        ME.cdf_series([np.nan], "fhv")


def test_cdf_at_median():
    v = RngStream(9).normal(0, 1, 100)
    c = ME.cdf_series(v, "nse")
    level_at_median = np.interp(np.median(v), c.values, c.levels)
    assert abs(level_at_median - 0.5) <= 1 / 100
    lines = c.to_csv().splitlines()
    assert lines[0] == "value,cdf_level" and len(lines) == 101


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_cdf_invariants(values):
    c = ME.cdf_series(values, "nse")
    assert np.all(np.diff(c.values) >= 0)
    assert np.all(np.diff(c.levels) > 0) and c.levels[0] > 0 and c.levels[-1] < 1
