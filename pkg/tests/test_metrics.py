"""
Tests for spike statistics, exposure accounting, efficiency arithmetic and
the multi-run report.
"""

import math

import pytest

from precond_runtime import config
from precond_runtime.core.harness import classifier_preset, run_training
from precond_runtime.core.metrics import (boundary_step_exposure, communication_volume, compute_eta,
                                          discover_runs, energy_ratio, exposure_breakdown, report,
                                          spike_stats)
from precond_runtime.errors import (EmptyTraceError, MissingAnnotationsError, MissingRunsError,
                                    NonpositiveRatioError, RunOutputError)
from precond_runtime.models.optimizer_config import Method
from precond_runtime.models.traces import EfficiencyInput, StepRecord, StepTimeTrace


def make_trace(totals, waits=None):
    waits = waits or [0.0] * len(totals)
    return StepTimeTrace([StepRecord(step, 1.0, total, compute_us=total - wait, barrier_wait_us=wait,
                                     install_us=0.0)
                          for step, (total, wait) in enumerate(zip(totals, waits))])


def test_spike_stats_order_statistics():
    stats = spike_stats(make_trace([10.0] * 9 + [60.0]))
    assert stats.median == 10.0
    assert stats.max == 60.0
    assert stats.max_step == 9
    assert stats.spike_ratio == pytest.approx(6.0)
    # nearest rank of 0.99 * 10 is the last element
    assert stats.p99 == 60.0


def test_spike_stats_of_flat_trace():
    stats = spike_stats(make_trace([5.0] * 200))
    assert stats.spike_ratio == 1.0
    assert stats.p99 == 5.0


def test_spike_stats_empty_trace():
    with pytest.raises(EmptyTraceError):
        spike_stats(StepTimeTrace())


def test_exposure_charged_to_period_boundary():
    trace = make_trace([15.0, 10.0, 12.0, 10.0, 10.0], waits=[5.0, 0.0, 2.0, 0.0, 0.0])
    exposures = exposure_breakdown(trace, pf=2)

    assert [exposure.step for exposure in exposures] == [0, 2, 4]
    assert [exposure.exposed_us for exposure in exposures] == [5.0, 2.0, 0.0]
    assert sum(e.exposed_us for e in exposures) == trace.component_total('barrier_wait_us')
    assert [e.step for e in boundary_step_exposure(trace, 2)] == [0, 2, 4]


def test_exposure_errors():
    with pytest.raises(EmptyTraceError):
        exposure_breakdown(StepTimeTrace(), 10)
    with pytest.raises(ValueError):
        exposure_breakdown(make_trace([1.0]), 0)
    unannotated = StepTimeTrace([StepRecord(0, 1.0, 10.0, barrier_wait_us=None)])
    with pytest.raises(MissingAnnotationsError):
        exposure_breakdown(unannotated, 10)


def test_eta_matches_vocabulary_baseline():
    L_init = math.log(config.DEFAULT_VOCAB_SIZE)
    assert compute_eta(EfficiencyInput(L_init - 3.0942, 1.0)) == pytest.approx(3.0942, abs=1e-3)
    assert compute_eta(EfficiencyInput(7.283, 1.0)) == pytest.approx(3.0942, abs=1e-3)


def test_eta_with_energy_overhead():
    L_init = math.log(32128)
    L_final = L_init - 3.0562 * 1.171
    assert L_final == pytest.approx(6.798, abs=1e-3)
    assert compute_eta(EfficiencyInput(L_final, 1.171)) == pytest.approx(3.0562, abs=1e-4)


@pytest.mark.parametrize("ratio", [0.0, -1.0, math.inf, math.nan])
def test_eta_rejects_nonpositive_ratio(ratio):
    with pytest.raises(NonpositiveRatioError):
        compute_eta(EfficiencyInput(1.0, ratio, L_init=2.0))


def test_energy_ratio():
    assert energy_ratio(11.71, 10.0) == pytest.approx(1.171)
    with pytest.raises(NonpositiveRatioError):
        energy_ratio(1.0, 0.0)


def test_communication_volume_counts_coherence_records():
    events = [
        {'event': 'install', 'step': 0},
        {'event': 'coherence', 'action': 'sync', 'intra_bytes': 64, 'inter_bytes': 256},
        {'event': 'coherence', 'action': 'hit', 'intra_bytes': 0, 'inter_bytes': 0},
        {'event': 'coherence', 'action': 'sync', 'intra_bytes': 64, 'inter_bytes': 256},
    ]
    assert communication_volume(events) == {'syncs': 2, 'hits': 1, 'intra_bytes': 128,
                                            'inter_bytes': 512}


def test_discover_runs_errors(tmp_path):
    with pytest.raises(MissingRunsError):
        discover_runs(tmp_path / "absent")
    with pytest.raises(MissingRunsError):
        discover_runs(tmp_path)


def test_report_over_runs(tmp_path):
    for method in (Method.SHAMPOO, Method.ADAMW):
        cfg = classifier_preset(method, steps=12,
                                run={'output_dir': str(tmp_path / "runs" / method.value)})
        run_training(cfg)

    result = report(tmp_path / "runs", tmp_path / "out")
    rows = result['rows']

    assert [row['method'] for row in rows] == ['AdamW', 'Shampoo']
    assert rows[0]['energy_ratio'] == pytest.approx(1.0)
    assert all(row['spike_ratio'] >= 1.0 for row in rows)
    assert result['totals']['barrier_wait_us'] == pytest.approx(
        sum(row['barrier_wait_us'] for row in rows))
    for name in (config.REPORT_CSV_NAME, config.REPORT_SERIES_NAME, config.REPORT_MD_NAME):
        assert (tmp_path / "out" / name).exists()


def test_report_counts_coherence_syncs_from_trace(tmp_path):
    cfg = classifier_preset(steps=24, topology={'nodes': 2, 'ranks': 4}, coherence={'budget': 4},
                            scheduler={'staleness_S': 2, 'inject_job_delay_steps': 1.0},
                            run={'output_dir': str(tmp_path / "runs" / "multi")})
    summary = run_training(cfg)
    expected = sum(1 for event in summary.coherence_events if event['action'] == 'sync')

    rows = report(tmp_path / "runs")['rows']

    assert expected > 0
    assert rows[0]['coherence_syncs'] == expected


def test_report_write_failure_is_raised(tmp_path):
    cfg = classifier_preset(steps=4, run={'output_dir': str(tmp_path / "runs" / "one")})
    run_training(cfg)
    out = tmp_path / "out"
    # a directory where the temporary file would go blocks the write
    (out / (config.REPORT_MD_NAME + ".tmp")).mkdir(parents=True)

    with pytest.raises(RunOutputError):
        report(tmp_path / "runs", out)
