"""Simulation study machinery: generators, calibration and scoring."""

import numpy as np
import pytest
from scipy.integrate import quad

from dalsm.errors import InvalidConfigurationError
from dalsm.likelihood import EVENT, INTERVAL, RIGHT
from dalsm.simulate import (
    EVAL_GRID,
    PARAM_TARGETS,
    PARAM_TRUTH,
    SMOOTH_TARGETS,
    SimulationScenario,
    TRUE_BETA,
    TRUE_DELTA,
    TRUTH_FUNCTIONS,
    calibrate_rc_rate,
    generate,
    mixture_density,
    model_spec,
    sample_mixture,
    score,
)


def test_mixture_density_is_standardized():
    total = quad(mixture_density, -10, 10)[0]
    mean = quad(lambda r: r * mixture_density(r), -10, 10)[0]
    m2 = quad(lambda r: r * r * mixture_density(r), -10, 10)[0]
    assert total == pytest.approx(1.0, abs=1e-6)
    assert mean == pytest.approx(0.0, abs=1e-3)
    assert m2 - mean**2 == pytest.approx(1.0, abs=1e-3)


def test_mixture_sampler_matches_density_moments(rng):
    x = sample_mixture(rng, 200_000)
    assert np.mean(x) == pytest.approx(0.0, abs=0.01)
    assert np.var(x) == pytest.approx(1.0, abs=0.02)
    # bimodal shape: clearly more mass near the two component centers
    # than in the trough between them
    hist, edges = np.histogram(x, bins=60, range=(-3, 3), density=True)
    mids = 0.5 * (edges[:-1] + edges[1:])
    assert hist[np.argmin(np.abs(mids + 0.4))] > 1.5 * hist[np.argmin(np.abs(mids - 0.9))]


def test_truth_functions_are_centered():
    for name, f in TRUTH_FUNCTIONS.items():
        assert quad(f, 0.0, 1.0)[0] == pytest.approx(0.0, abs=1e-3), name


def test_generated_data_is_deterministic_per_replicate():
    sc = SimulationScenario(n=200, rc_rate=0.2, ic_rate=0.2, n_replicates=2)
    a = generate(sc, 0)
    b = generate(sc, 0)
    c = generate(sc, 1)
    assert np.array_equal(a.obs.lower, b.obs.lower)
    assert np.array_equal(a.covariates["x1_mu"], b.covariates["x1_mu"])
    assert not np.array_equal(a.obs.lower, c.obs.lower)


def test_censoring_rates_are_calibrated():
    sc = SimulationScenario(n=4000, rc_rate=0.25, ic_rate=0.25, n_replicates=1)
    data = generate(sc, 0)
    rc_frac = float(np.mean(data.obs.kind == RIGHT))
    ic_frac = float(np.mean(data.obs.kind == INTERVAL))
    assert rc_frac == pytest.approx(0.25, abs=0.03)
    assert ic_frac == pytest.approx(0.25, abs=0.03)


def test_no_censoring_scenario_is_all_events():
    sc = SimulationScenario(n=300, rc_rate=0.0, ic_rate=0.0, n_replicates=1)
    data = generate(sc, 0)
    assert np.all(data.obs.kind == EVENT)
    assert np.array_equal(data.obs.lower, data.y)


def test_scenario_validation():
    with pytest.raises(InvalidConfigurationError):
        SimulationScenario(n=0, rc_rate=0.0, ic_rate=0.0, n_replicates=1)
    with pytest.raises(InvalidConfigurationError):
        SimulationScenario(n=10, rc_rate=0.8, ic_rate=0.4, n_replicates=1)


def test_model_spec_has_eight_covariates():
    spec = model_spec("np")
    assert spec.location_fixed == ["z1_mu", "z2_mu"]
    assert spec.location_smooth == ["x1_mu", "x2_mu"]
    assert spec.dispersion_fixed == ["z1_sigma", "z2_sigma"]
    assert spec.dispersion_smooth == ["x1_sigma", "x2_sigma"]
    assert model_spec("normal").error_model == "normal"


def _fake_replicate(i, bias=0.0, se=0.3):
    out = {"replicate": i}
    for model in ("np",):
        entry = {"converged": True, "n_outer": 5, "params": {}}
        for tgt in SMOOTH_TARGETS:
            truth = TRUTH_FUNCTIONS[tgt](EVAL_GRID)
            entry[tgt] = {"est": truth + bias, "se": np.full(EVAL_GRID.size, se)}
        for tgt in PARAM_TARGETS:
            entry["params"][tgt] = (PARAM_TRUTH[tgt] + bias, se)
        out["np"] = entry
    return out


def test_score_on_exact_truth_gives_zero_error_and_full_coverage():
    sc = SimulationScenario(n=100, rc_rate=0.0, ic_rate=0.0, n_replicates=3)
    reps = [_fake_replicate(i) for i in range(3)]
    metrics = score(reps, sc, models=("np",))
    for tgt in SMOOTH_TARGETS:
        assert metrics.value(tgt, "ma_bias", "np") == pytest.approx(0.0, abs=1e-10)
        assert metrics.value(tgt, "rmise", "np") == pytest.approx(0.0, abs=1e-10)
        assert metrics.value(tgt, "coverage", "np") == pytest.approx(1.0)
    assert metrics.value("beta1", "bias", "np") == pytest.approx(0.0, abs=1e-12)


def test_score_detects_constant_bias():
    sc = SimulationScenario(n=100, rc_rate=0.0, ic_rate=0.0, n_replicates=4)
    reps = [_fake_replicate(i, bias=0.1) for i in range(4)]
    metrics = score(reps, sc, models=("np",))
    # a constant offset is removed by the curve centering, so the smooth
    # metrics stay clean while the parameter bias shows it exactly
    assert metrics.value("f1_mu", "ma_bias", "np") == pytest.approx(0.0, abs=1e-10)
    assert metrics.value("beta1", "bias", "np") == pytest.approx(0.1, abs=1e-12)


def test_metrics_frame_has_contract_columns():
    sc = SimulationScenario(n=100, rc_rate=0.1, ic_rate=0.2, n_replicates=2)
    reps = [_fake_replicate(i) for i in range(2)]
    frame = score(reps, sc, models=("np",)).to_frame()
    assert list(frame.columns) == ["target", "metric", "error_model", "rc", "ic", "value"]
    assert set(frame["rc"]) == {0.1}
    assert set(frame["ic"]) == {0.2}


def test_truth_parameters_match_design():
    assert np.allclose(TRUE_BETA, [1.6, 0.3, 0.75])
    assert np.allclose(TRUE_DELTA, [-0.5, -0.03, 0.01])
    assert PARAM_TRUTH["delta2"] == pytest.approx(0.01)


def test_calibrated_exponential_rate_hits_target():
    sc = SimulationScenario(n=2000, rc_rate=0.3, ic_rate=0.0, n_replicates=1)
    rate, sd_y = calibrate_rc_rate(sc)
    assert rate > 0
    assert sd_y > 0
    data = generate(sc, 0)
    assert float(np.mean(data.obs.kind == RIGHT)) == pytest.approx(0.3, abs=0.04)
