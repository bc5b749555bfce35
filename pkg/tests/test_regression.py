import numpy as np
import pandas as pd
import pytest
from scipy import stats

from src.diagnostics.regression import GapSeries, gap_series, ols, ols_trend_test, regress_columns
from src.errors import EvaluationError

STEPS = np.arange(20) * 1000.0 + 100000
SLOPE = -6.9e-5
STDERR = 2.7e-5
SIGMA = STDERR * np.sqrt(np.sum((STEPS - STEPS.mean()) ** 2))


def test_exact_line():
    x = np.arange(10.0)
    result = ols(x, 2 * x)
    assert result.beta0 == pytest.approx(2.0)
    assert result.beta1 == pytest.approx(0.0, abs=1e-12)
    assert result.p_value < 1e-10
    assert result.n_points == 10


def test_flat_line():
    result = ols(np.arange(5.0), np.full(5, 3.0))
    assert result.beta0 == 0.0
    assert result.p_value == 1.0


def test_matches_linregress():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 100, 40)
    y = 0.3 * x + rng.normal(0, 5, 40)
    result = ols(x, y)
    reference = stats.linregress(x, y)
    assert result.beta0 == pytest.approx(reference.slope, abs=1e-10)
    assert result.beta1 == pytest.approx(reference.intercept, abs=1e-10)
    assert result.stderr == pytest.approx(reference.stderr, abs=1e-10)
    assert result.p_value == pytest.approx(reference.pvalue, abs=1e-10)


def test_null_p_values_are_uniform():
    rng = np.random.default_rng(1)
    x = np.arange(20.0)
    p_values = [ols(x, rng.normal(size=20)).p_value for _ in range(10000)]
    assert stats.kstest(p_values, 'uniform').statistic < 0.02


def test_planted_slope():
    rng = np.random.default_rng(2)
    trials = 2000
    critical = stats.t.ppf(0.975, df=len(STEPS) - 2)
    covered, rejected, stderrs = 0, 0, []
    for _ in range(trials):
        result = ols(STEPS, 0.05 + SLOPE * STEPS + rng.normal(0, SIGMA, len(STEPS)))
        covered += abs(result.beta0 - SLOPE) <= critical * result.stderr
        rejected += result.p_value < 0.05
        stderrs.append(result.stderr)

    assert 0.90 <= covered / trials <= 0.97
    noncentrality = SLOPE / STDERR
    power = stats.nct.sf(critical, len(STEPS) - 2, noncentrality) + \
        stats.nct.cdf(-critical, len(STEPS) - 2, noncentrality)
    assert abs(rejected / trials - power) < 0.04
    assert np.mean(stderrs) == pytest.approx(STDERR, rel=0.05)


def test_degenerate_inputs():
    with pytest.raises(EvaluationError, match='degenerate'):
        ols(np.full(5, 7.0), np.arange(5.0))
    with pytest.raises(EvaluationError, match='at least 3'):
        ols([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(EvaluationError):
        ols([1.0, 2.0, 3.0], [1.0, 2.0])


def test_gap_of_identical_curves():
    curve = pd.Series([3.0, 2.5, 2.2, 2.1], index=[100, 200, 300, 400])
    series = gap_series(curve, curve)
    assert (series.gap == 0).all()
    result = ols_trend_test(series)
    assert result.beta0 == 0.0 and result.p_value == 1.0


def test_constant_gap():
    a = pd.Series([3.0, 2.5, 2.2, 2.1], index=[100, 200, 300, 400])
    series = gap_series(a + 0.25, a)
    assert np.allclose(series.gap, 0.25)
    assert abs(ols_trend_test(series).beta0) < 1e-12


def test_gap_start_step():
    a = pd.Series([5.0, 4.0, 3.0, 2.0, 1.0], index=[0, 10, 20, 30, 40])
    b = pd.Series([1.0, 1.0, 1.0, 1.0, 1.0], index=[40, 30, 20, 10, 0])
    series = gap_series(a, b, start_step=20)
    assert series.steps.tolist() == [20.0, 30.0, 40.0]
    assert series.gap.tolist() == [2.0, 1.0, 0.0]
    assert list(series.to_frame().columns) == ['step', 'gap']


def test_gap_misalignment():
    a = pd.Series([1.0, 2.0, 3.0], index=[0, 10, 20])
    b = pd.Series([1.0, 2.0, 3.0], index=[0, 10, 30])
    with pytest.raises(EvaluationError, match='misalignment'):
        gap_series(a, b)


def test_gap_series_validation():
    with pytest.raises(EvaluationError):
        GapSeries(steps=np.array([2.0, 1.0]), gap=np.array([0.0, 0.0]))
    with pytest.raises(EvaluationError):
        GapSeries(steps=np.array([1.0, 2.0]), gap=np.array([0.0, np.nan]))


def test_regress_columns():
    frame = pd.DataFrame({'step': [0, 1, 2, 3, 4, 5], 'gap': [9.0, 9.0, 1.0, 2.0, 3.0, np.nan]})
    result = regress_columns(frame, 'step', 'gap', start_step=2)
    assert result.n_points == 3
    assert result.beta0 == pytest.approx(1.0)
    assert 'beta0=' in result.to_text() and 'p_value=' in result.to_text()
    with pytest.raises(EvaluationError, match='column'):
        regress_columns(frame, 'step', 'missing')
