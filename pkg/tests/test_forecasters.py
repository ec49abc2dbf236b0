import datetime as dt

import numpy as np
import pytest

from monsoon_bench.errors import AlignmentError, ConfigError, EmptyWindowsWarning
from monsoon_bench.forecasters import (PipelineSpec, calibrate_match, dlhd_config, dlhd_layers, fusion_config,
                                       lag_sweep, run_dl_hd, run_nwp, run_nwp_dlhd, run_nwp_plus)
from monsoon_bench.grid import GridIndex, LatLon, all_candidates
from monsoon_bench.ingest import DailyField, ForecastField, SplitSpec, by_date, verifying_truth
from monsoon_bench.metrics import evaluate
from monsoon_bench.neural import AdamConfig, peak_biased_loss
from monsoon_bench.synthetic import season_dates, white_noise_dataset

TARGET = GridIndex.rectangle(20.5, 75.5, 2, 2)
# aligned source mesh wide enough that every target has all five candidates
SOURCE = GridIndex.rectangle(19.5, 74.5, 4, 4)
FUSION_YEARS = dict(train_years=(2019, 2020), test_years=(2021, 2021))
FAST = fusion_config(max_epochs=60, early_stop_patience=8)


def make_obs(truth_fn, years=(2019, 2020, 2021), days=50, n=4, seed=0):
    rng = np.random.default_rng(seed)
    obs = []
    for y in years:
        for d in season_dates(y)[:days]:
            obs.append(DailyField(d, truth_fn(rng, n), np.ones(n, bool)))
    return obs


def make_fcst(obs, value_fn, lead=1, seed=1):
    """One forecast per issue date with a verifying truth; value_fn(rng, truth) -> 16 source values."""
    rng = np.random.default_rng(seed)
    obs_map = by_date(obs)
    out = []
    for f in obs:
        tr = verifying_truth(obs_map, f.date, lead)
        if tr is None:
            continue
        out.append(ForecastField(f.date, lead, value_fn(rng, tr[0]), np.ones(SOURCE.count, bool)))
    return out


def rain(rng, n):
    return np.round(rng.gamma(0.7, 15.0, n), 2)


def centres():
    return [c[0] for c in all_candidates(TARGET, SOURCE)]


def perfect_centre(rng, truth):
    v = np.round(rng.gamma(0.7, 15.0, SOURCE.count), 2)
    v[centres()] = truth
    return v


def loss_of(forecasts, obs):
    return evaluate(forecasts, obs, TARGET).loss


# ---------------------------------------------------------------- NWP

def argmin_oracle(obs, fcst):
    obs_map = by_date(obs)
    rows = [(f, verifying_truth(obs_map, f.issue_date, 1)) for f in fcst]
    rows = [(f, t[0]) for f, t in rows if t is not None]
    chosen = []
    for cell, cand in enumerate(all_candidates(TARGET, SOURCE)):
        best, best_err = None, None
        for s in cand:
            err = np.mean([abs(t[cell] - f.values[s]) ** 1.5 if f.values[s] < t[cell] else abs(t[cell] - f.values[s])
                           for f, t in rows])
            if best_err is None or err < best_err:
                best, best_err = s, err
        chosen.append(best)
    return chosen


def test_run_nwp_matches_oracle():
    for seed in range(5):
        obs = make_obs(lambda r, n: rain(r, n), seed=seed)
        fcst = make_fcst(obs, lambda r, t: np.round(r.gamma(0.7, 15.0, SOURCE.count), 2), seed=seed + 10)
        match = calibrate_match(obs, fcst, TARGET, SOURCE)
        chosen = argmin_oracle(obs, fcst)
        assert list(match.source) == chosen
        out = run_nwp(obs, fcst, TARGET, match)
        src = {f.issue_date: f for f in fcst}
        for f in out:
            assert np.array_equal(f.values, src[f.issue_date].values[chosen])
            assert f.lead_days == 1


def test_run_nwp_single_candidate_passthrough():
    # cells two degrees apart: each target sees only its own centre cell
    spaced = GridIndex(tuple(LatLon(20.5 + 2 * i, 75.5 + 2 * j) for i in range(2) for j in range(2)))
    source = GridIndex(spaced.cells)
    obs = make_obs(rain)
    obs_map = by_date(obs)
    fcst = [ForecastField(f.date, 1, np.arange(4.0) + k, np.ones(4, bool)) for k, f in enumerate(obs)
            if verifying_truth(obs_map, f.date, 1) is not None]
    match = calibrate_match(obs, fcst, spaced, source)
    assert list(match.source) == [0, 1, 2, 3]
    out = run_nwp(obs, fcst, spaced, match)
    assert all(np.array_equal(o.values, f.values) for o, f in zip(out, fcst))


def test_run_nwp_zero_error_candidate():
    obs = make_obs(rain)
    fcst = make_fcst(obs, perfect_centre)
    match = calibrate_match(obs, fcst, TARGET, SOURCE)
    assert list(match.source) == centres()
    assert np.all(match.error == 0)
    assert loss_of(run_nwp(obs, fcst, TARGET, match), obs) == 0.0


# ---------------------------------------------------------------- NWP+

def test_nwp_plus_beats_imperfect_candidates():
    obs = make_obs(rain)
    fcst = make_fcst(obs, perfect_centre)
    out, model = run_nwp_plus(obs, fcst, TARGET, SOURCE, config=FAST, seeds=(0, 1), **FUSION_YEARS)
    assert out and all(f.issue_date.year == 2021 and f.lead_days == 1 for f in out)
    assert all(np.all(f.values >= 0) for f in out)
    fused = loss_of(out, obs)
    test_fc = [f for f in fcst if f.issue_date.year == 2021]
    cands = all_candidates(TARGET, SOURCE)
    for k in range(1, 5):
        # raw forecast from the k-th (imperfect) candidate of every cell
        raw = [ForecastField(f.issue_date, 1, f.values[[c[k] for c in cands]], np.ones(4, bool)) for f in test_fc]
        assert fused < loss_of(raw, obs)


def test_nwp_plus_duplicated_columns():
    obs = make_obs(rain)
    # candidates overlap between cells, so use a single-cell target for a clean duplicate
    target = GridIndex(TARGET.cells[:1])
    cand = all_candidates(target, SOURCE)[0]
    obs1 = [DailyField(f.date, f.values[:1], f.present[:1]) for f in obs]
    rng = np.random.default_rng(3)
    obs_map = by_date(obs1)
    fc_dup, fc_one = [], []
    for f in obs1:
        tr = verifying_truth(obs_map, f.date, 1)
        if tr is None:
            continue
        val = max(round(float(tr[0][0]) * 1.2 + rng.normal(0, 3), 2), 0.0)
        v = np.zeros(SOURCE.count)
        v[list(cand)] = val
        fc_dup.append(ForecastField(f.date, 1, v, np.ones(SOURCE.count, bool)))
        fc_one.append(ForecastField(f.date, 1, np.array([val]), np.ones(1, bool)))
    single_source = GridIndex((SOURCE.cells[cand[0]],))
    out_dup, _ = run_nwp_plus(obs1, fc_dup, target, SOURCE, config=FAST, seeds=(0, 1, 2), **FUSION_YEARS)
    out_one, _ = run_nwp_plus(obs1, fc_one, target, single_source, config=FAST, seeds=(0, 1, 2), **FUSION_YEARS)
    l_dup = evaluate(out_dup, obs1, target).loss
    l_one = evaluate(out_one, obs1, target).loss
    assert abs(l_dup - l_one) <= 0.1 * l_one


def test_nwp_plus_zero_truth():
    obs = make_obs(lambda r, n: np.zeros(n))
    fcst = make_fcst(obs, lambda r, t: np.round(r.gamma(0.7, 15.0, SOURCE.count), 2))
    out, _ = run_nwp_plus(obs, fcst, TARGET, SOURCE, config=FAST, seeds=(0,), **FUSION_YEARS)
    assert max(f.values.max() for f in out) < 1.0


def test_nwp_plus_needs_training_dates():
    obs = make_obs(rain, years=(2021,))
    fcst = make_fcst(obs, perfect_centre)
    with pytest.raises(ConfigError):
        run_nwp_plus(obs, fcst, TARGET, SOURCE, config=FAST, seeds=(0,), **FUSION_YEARS)


def test_nwp_plus_reproducible():
    obs = make_obs(rain)
    fcst = make_fcst(obs, perfect_centre)
    a, _ = run_nwp_plus(obs, fcst, TARGET, SOURCE, config=FAST, seeds=(4,), **FUSION_YEARS)
    b, _ = run_nwp_plus(obs, fcst, TARGET, SOURCE, config=FAST, seeds=(4,), **FUSION_YEARS)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


# ---------------------------------------------------------------- NWP+DL-HD

def dl_from(obs, fcst, fn, seed=5):
    rng = np.random.default_rng(seed)
    obs_map = by_date(obs)
    return [ForecastField(f.issue_date, 1, fn(rng, verifying_truth(obs_map, f.issue_date, 1)[0]), np.ones(4, bool))
            for f in fcst]


def noisy_nwp(rng, truth):
    v = np.round(rng.gamma(0.7, 15.0, SOURCE.count), 2)
    v[centres()] = np.maximum(np.round(truth + rng.normal(0, 8, 4), 2), 0)
    return v


def test_perfect_dlhd_feature():
    obs = make_obs(rain)
    fcst = make_fcst(obs, noisy_nwp)
    plus, _ = run_nwp_plus(obs, fcst, TARGET, SOURCE, config=FAST, seeds=(0, 1), **FUSION_YEARS)
    dl = dl_from(obs, fcst, lambda r, t: t)
    fused, model = run_nwp_dlhd(obs, fcst, dl, TARGET, SOURCE, config=FAST, seeds=(0, 1), **FUSION_YEARS)
    assert model.with_dlhd
    assert loss_of(fused, obs) <= loss_of(plus, obs)


def test_noise_dlhd_feature_with_perfect_nwp():
    # learning to ignore a noise column needs a decade of training seasons
    obs = make_obs(rain, years=tuple(range(2011, 2022)), days=122)
    fcst = make_fcst(obs, perfect_centre)
    cfg = fusion_config(early_stop_patience=10)
    years = dict(train_years=(2011, 2020), test_years=(2021, 2021))
    plus, _ = run_nwp_plus(obs, fcst, TARGET, SOURCE, config=cfg, seeds=(0, 1), **years)
    dl = dl_from(obs, fcst, lambda r, t: np.round(r.gamma(0.7, 15.0, 4), 2))
    fused, _ = run_nwp_dlhd(obs, fcst, dl, TARGET, SOURCE, config=cfg, seeds=(0, 1), **years)
    lp, lf = loss_of(plus, obs), loss_of(fused, obs)
    assert abs(lf - lp) <= 0.1 * lp


def test_all_zero_inputs():
    obs = make_obs(lambda r, n: np.zeros(n))
    fcst = make_fcst(obs, lambda r, t: np.zeros(SOURCE.count))
    dl = dl_from(obs, fcst, lambda r, t: np.zeros(4))
    fused, _ = run_nwp_dlhd(obs, fcst, dl, TARGET, SOURCE, config=FAST, seeds=(0,), **FUSION_YEARS)
    assert loss_of(fused, obs) < 0.1


def test_strict_alignment():
    obs = make_obs(rain)
    fcst = make_fcst(obs, perfect_centre)
    dl = dl_from(obs, fcst, lambda r, t: t)
    dropped = dl[3].issue_date
    dl = dl[:3] + dl[4:]
    with pytest.raises(AlignmentError, match=dropped.isoformat()):
        run_nwp_dlhd(obs, fcst, dl, TARGET, SOURCE, config=FAST, seeds=(0,), **FUSION_YEARS)
    out, _ = run_nwp_dlhd(obs, fcst, dl, TARGET, SOURCE, config=FAST, seeds=(0,), align="intersect",
                          **FUSION_YEARS)
    assert out


# ---------------------------------------------------------------- DL-HD

def small_spec(**kw):
    base = dict(context_days=4, split=SplitSpec((2008, 2011), (2012, 2012)), ensemble_runs=1)
    base.update(kw)
    return PipelineSpec(**base)


def obs_years(values_fn, years, n=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for y in years:
        dates = season_dates(y)
        series = values_fn(rng, len(dates), n)
        out.extend(DailyField(d, series[k], np.ones(n, bool)) for k, d in enumerate(dates))
    return out


def test_dlhd_constant_data():
    obs = obs_years(lambda r, t, n: np.full((t, n), 12.0), range(2008, 2013))
    for lead in (1, 3):
        fc, model = run_dl_hd(obs, small_spec(lead_days=lead), layers=dlhd_layers(4, hidden=8))
        assert fc and all(f.lead_days == lead for f in fc)
        assert max(np.abs(f.values - 12.0).max() for f in fc) < 1.0


def ar1(rng, t, n, phi=0.8):
    """Independent AR(1) per cell (unit innovations), mapped to rain as 20 + 5z."""
    z = np.zeros((t, n))
    z[0] = rng.normal(0, 1 / np.sqrt(1 - phi * phi), n)
    for k in range(1, t):
        z[k] = phi * z[k - 1] + rng.normal(0, 1, n)
    return np.round(np.maximum(20.0 + 5.0 * z, 0.0), 2)


def test_dlhd_beats_persistence_on_ar1():
    obs = obs_years(ar1, range(2003, 2013))
    spec = small_spec(ensemble_runs=3, cap_mm=60.0, split=SplitSpec((2003, 2010), (2011, 2012)))
    cfg = dlhd_config("desk", 60.0, adam=AdamConfig(step_size=0.005), batch_size=32)
    fc, _ = run_dl_hd(obs, spec, cfg, layers=dlhd_layers(4, hidden=16))
    persist = [ForecastField(f.issue_date, 1, by_date(obs)[f.issue_date].values, np.ones(4, bool)) for f in fc]
    g = GridIndex.rectangle(20.5, 75.5, 2, 2)
    assert evaluate(fc, obs, g).loss < evaluate(persist, obs, g).loss


def test_dlhd_empty_windows_warns():
    obs = obs_years(lambda r, t, n: np.full((t, n), 1.0), range(2008, 2013))
    short = [f for f in obs if f.date.day <= 10]  # 10-day runs cannot host d=12 windows
    with pytest.warns(EmptyWindowsWarning):
        fc, model = run_dl_hd(short, small_spec(context_days=12))
    assert fc == [] and model is None


def test_dlhd_reproducible():
    obs = obs_years(ar1, range(2008, 2013))
    cfg_layers = dlhd_layers(4, hidden=8)
    a, _ = run_dl_hd(obs, small_spec(seed=3), layers=cfg_layers)
    b, _ = run_dl_hd(obs, small_spec(seed=3), layers=cfg_layers)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert all(np.all(x.values >= 0) for x in a)


def test_pipeline_spec_validation():
    with pytest.raises(ConfigError):
        PipelineSpec(context_days=2)
    with pytest.raises(ConfigError):
        PipelineSpec(kind="transformer")
    assert PipelineSpec(seed=5, ensemble_runs=3).seeds == [5, 6, 7]


# ---------------------------------------------------------------- lag sweep

def test_lag_sweep_single_row():
    obs = obs_years(ar1, range(2008, 2013))
    rows = lag_sweep(obs, [5], small_spec(ensemble_runs=2), layers_for=lambda n: dlhd_layers(n, hidden=8))
    assert len(rows) == 1 and rows[0].context_days == 5
    assert len(rows[0].seed_losses) == 2 and rows[0].seed_se >= 0
    with pytest.raises(ConfigError):
        lag_sweep(obs, [], small_spec())


def test_white_noise_curve_flat():
    ds = white_noise_dataset()
    spec = PipelineSpec(split=SplitSpec((2008, 2015), (2016, 2017)), ensemble_runs=2)
    layers = dlhd_layers(9, hidden=8)
    fc = {}
    for d in (3, 12):
        out, _ = run_dl_hd(ds.obs, PipelineSpec(context_days=d, split=spec.split, ensemble_runs=2),
                           layers=layers)
        fc[d] = {f.issue_date: f.values for f in out}
    shared = sorted(set(fc[3]) & set(fc[12]))
    obs_map = by_date(ds.obs)
    truth = np.array([obs_map[d + dt.timedelta(1)].values for d in shared])

    def per_date(d):
        p = np.array([fc[d][k] for k in shared])
        e = truth - p
        return np.where(e > 0, np.abs(e) ** 1.5, np.abs(e)).mean(axis=1)

    l3, l12 = per_date(3), per_date(12)
    rng = np.random.default_rng(0)
    # bootstrap standard error of a curve point (resampling test dates)
    se = max(float(np.std([l[rng.integers(0, len(l), len(l))].mean() for _ in range(500)]))
             for l in (l3, l12))
    assert abs(l3.mean() - l12.mean()) <= 2 * se
    assert per_date(3).mean() == pytest.approx(
        peak_biased_loss(np.array([fc[3][k] for k in shared]), truth))
