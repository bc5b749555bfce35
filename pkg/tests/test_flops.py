import dataclasses
import math

import pytest

from src.config import RunConfig
from src.diagnostics.flops import (REFERENCE_STEPS, expected_lengths, flops_per_step, flops_report, forward_flops,
                                   normalized_cumulative_flops)
from src.models.spactor.utils import Stage


@pytest.fixture
def base_model():
    return RunConfig().model_config(32000)


@pytest.fixture
def base_report(base_model):
    return flops_report(base_model, 2048, 512, 0.15, 3.0)


def test_expected_lengths():
    assert expected_lengths(512, 0.15, 3.0) == (461, 104)


def test_baseline_forward(base_model):
    gflops = forward_flops(base_model, 512, 0.15, 3.0, Stage.SC_ONLY) / 1e9
    assert gflops == pytest.approx(111.87, abs=0.01)
    extra = forward_flops(base_model, 512, 0.15, 3.0, Stage.HYBRID) / 1e9 - gflops
    assert extra == pytest.approx(41.95, abs=0.01)


def test_base_ratio(base_report):
    assert 1.36 <= base_report.ratio <= 1.40
    assert base_report.ratio == pytest.approx(1.375, abs=1e-4)


@pytest.mark.parametrize('tau, steps, expected', [
    (250000, 500000, 1.1875),
    (120000, 500000, 1.09),
    (60000, 500000, 1.045),
    (0, 1000000, 2.0),
    (250000, 1000000, 2.1875),
])
def test_normalized_at_reference_ratio(tau, steps, expected):
    assert normalized_cumulative_flops(tau, steps, 1.375) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize('tau, steps, expected', [
    (250000, 500000, 1.19),
    (120000, 500000, 1.09),
    (60000, 500000, 1.05),
    (0, 1000000, 2.00),
    (250000, 1000000, 2.19),
])
def test_normalized_from_base_model(base_report, tau, steps, expected):
    assert abs(base_report.add(tau, steps) - expected) <= 0.01


@pytest.mark.parametrize('tau, steps, expected', [
    (250000, 500000, 1.1875),
    (120000, 500000, 1.09),
    (60000, 500000, 1.045),
    (250000, 1000000, 2.1875),
])
def test_base_model_near_reference_ratio(base_report, tau, steps, expected):
    assert base_report.add(tau, steps) == pytest.approx(expected, abs=1e-5)


def test_baseline_run_is_one_unit(base_report):
    assert base_report.add(0, REFERENCE_STEPS) == 1.0
    assert base_report.add(0, 1000000) == 2.0


def test_no_auxiliary_components_cost_nothing(base_model):
    bare = dataclasses.replace(base_model, gen_layers=0, gen_mlp=0, rtd_mlp=0)
    report = flops_report(bare, 2048, 512, 0.15, 3.0)
    assert report.ratio == 1.0


def test_batch_doubling(base_model):
    for stage in Stage:
        assert flops_per_step(base_model, 4096, 512, 0.15, 3.0, stage) == \
            2 * flops_per_step(base_model, 2048, 512, 0.15, 3.0, stage)


def test_hybrid_throughout(base_report):
    assert normalized_cumulative_flops(math.inf, 500000, base_report.ratio) == pytest.approx(base_report.ratio)


def test_invalid_tau():
    with pytest.raises(ValueError):
        normalized_cumulative_flops(600000, 500000, 1.375)
    with pytest.raises(ValueError):
        normalized_cumulative_flops(-1, 500000, 1.375)


def test_report_frame(base_report):
    base_report.add(120000, 500000)
    base_report.add(math.inf, 500000)
    frame = base_report.to_frame()
    assert list(frame.columns) == ['tau', 'steps', 'baseline_gflops_per_step', 'hybrid_gflops_per_step', 'ratio',
                                   'normalized_flops']
    assert len(frame) == 2
    assert frame.normalized_flops.iloc[1] == pytest.approx(base_report.ratio)
