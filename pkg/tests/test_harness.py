"""
End-to-end tests of the data-parallel harness: reference equivalence,
bounded staleness, reproducibility, the spike and staleness benchmarks and
the optimizer ranking on the ill-conditioned quadratic.
"""

import numpy as np
import pytest

from precond_runtime import config
from precond_runtime.core.harness import (MLP, IllConditionedQuadratic, SyntheticClassifier,
                                          bench_spikes, clip_gradients, classifier_preset,
                                          gradient_check, merge_events, module_of, quadratic_preset,
                                          rank_optimizers, reference_training, run_training,
                                          steps_to_target, sweep, sweep_config, warmup_lr)
from precond_runtime.errors import ConfigInvalidError, RunOutputError
from precond_runtime.models.optimizer_config import Method, OptimizerConfig
from precond_runtime.models.run_config import ModelSpec, Task
from precond_runtime.utils.validators import TraceIntegrityValidator


def relative_gap(a, b):
    return abs(a - b) / abs(b)


def test_gradient_check_on_small_network():
    model = MLP(ModelSpec([5, 6, 3], seed=2))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 5))
    y = rng.integers(0, 3, size=7)
    assert gradient_check(model, x, y) < 1e-5


def test_gradient_check_with_empty_batch():
    model = MLP(ModelSpec([3, 2]))
    assert gradient_check(model, np.zeros((0, 3)), np.zeros(0, dtype=int)) == 0.0


def test_classifier_shards_cover_the_batch():
    workload = SyntheticClassifier(Task(batch_size=10), ModelSpec([4, 8, 3]), seed=1)
    x, y = workload.batch(3)
    shards = [workload.shard(3, index, 3) for index in range(3)]

    assert sum(weight for _, weight in shards) == 10.0
    assert np.array_equal(np.concatenate([data[0] for data, _ in shards]), x)
    assert np.array_equal(workload.batch(3)[0], x)
    assert y.max() < 3


def test_quadratic_gradient_and_optimum():
    problem = IllConditionedQuadratic(dim=4, condition=100.0, seed=3)
    assert problem.loss({'W': problem.W_star}) == pytest.approx(0.0, abs=1e-20)
    assert np.linalg.cond(np.kron(problem.B @ problem.B.T, problem.A.T @ problem.A)) == pytest.approx(100.0)

    W = np.random.default_rng(0).normal(size=(4, 4))
    _, grads = problem.loss_and_grad({'W': W})
    E = np.zeros((4, 4))
    E[1, 2] = 1e-6
    numeric = (problem.loss({'W': W + E}) - problem.loss({'W': W - E})) / 2e-6
    assert numeric == pytest.approx(grads['W'][1, 2], rel=1e-5)

    with pytest.raises(ConfigInvalidError):
        IllConditionedQuadratic(condition=0.5)


def test_step_helpers():
    opt = OptimizerConfig(lr=1.0)
    assert warmup_lr(opt, 0, 100) == pytest.approx(0.2)
    assert warmup_lr(opt, 10, 100) == 1.0
    assert module_of("W3") == 3

    grads = {'a': np.array([3.0, 4.0])}
    assert clip_gradients(grads) == pytest.approx(5.0)
    assert np.allclose(grads['a'], [0.6, 0.8])


def test_merge_events_orders_by_step_worker_seq():
    events = merge_events([
        [{'step': 1, 'worker': 0, 'seq': 0}, {'step': 0, 'worker': 0, 'seq': 1}],
        [{'step': 0, 'worker': 1, 'seq': 0}],
    ])
    assert [(e['step'], e['worker'], e['seq']) for e in events] == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]


@pytest.mark.parametrize("method", [Method.SHAMPOO, Method.SOAP])
@pytest.mark.parametrize("pf", [1, 10])
def test_synchronous_run_matches_reference(method, pf):
    cfg = classifier_preset(method, steps=200, optimizer={'pf': pf}, scheduler={'staleness_S': 0},
                            run={'record_params': True})
    summary = run_training(cfg)
    losses, history = reference_training(cfg)

    assert np.allclose(summary.losses, losses, rtol=0.0, atol=1e-10)
    assert len(summary.param_history) == len(history)
    for step, (got, expected) in enumerate(zip(summary.param_history, history)):
        for name in expected:
            assert np.max(np.abs(got[name] - expected[name])) <= 1e-10, (step, name)


def test_async_run_respects_staleness_bound():
    cfg = classifier_preset(steps=60, optimizer={'pf': 5},
                            scheduler={'staleness_S': 2, 'inject_job_delay_steps': 4.0},
                            run={'audit': True})
    summary = run_training(cfg)

    consumed = [event for event in summary.events if event['event'] == 'consume']
    assert consumed
    assert all(event['step'] - event['snapshot_step'] <= (2 + 1) * 5 for event in consumed)
    assert TraceIntegrityValidator.validate_all(summary.events, 2, 5) == []


def test_run_outputs_are_reproducible(tmp_path):
    outputs = []
    for name in ("first", "second"):
        cfg = classifier_preset(steps=30, scheduler={'inject_job_delay_steps': 3.0},
                                run={'output_dir': str(tmp_path / name)})
        run_training(cfg)
        outputs.append(tmp_path / name)

    for file_name in (config.LOSS_FILE_NAME, config.TRACE_FILE_NAME):
        assert (outputs[0] / file_name).read_bytes() == (outputs[1] / file_name).read_bytes()
    assert (outputs[0] / config.SUMMARY_MD_NAME).exists()


def test_adamw_decreases_quadratic_loss():
    summary = run_training(quadratic_preset(Method.ADAMW, lr=1e-4, steps=30))
    assert all(later <= earlier for earlier, later in zip(summary.losses, summary.losses[1:]))
    assert summary.steps_to_target is None


def test_multi_rank_run_keeps_replicas_coherent():
    cfg = classifier_preset(steps=24, topology={'nodes': 2, 'ranks': 4}, coherence={'budget': 4},
                            scheduler={'staleness_S': 2, 'inject_job_delay_steps': 1.0})
    summary = run_training(cfg)

    # data-parallel ranks apply identical averaged gradients
    assert len(set(summary.param_digests.values())) == 1
    syncs = [event for event in summary.coherence_events if event['action'] == 'sync']
    assert syncs
    assert summary.ledger['inter_bytes'] > 0


def test_unwritable_run_output_is_an_error(tmp_path):
    out = tmp_path / "run"
    (out / (config.SUMMARY_JSON_NAME + ".tmp")).mkdir(parents=True)
    cfg = classifier_preset(steps=3, run={'output_dir': str(out)})

    with pytest.raises(RunOutputError):
        run_training(cfg)
    assert not (out / config.SUMMARY_JSON_NAME).exists()


def test_sweep_config_axes():
    cfg = classifier_preset(topology={'nodes': 1, 'ranks': 2})
    assert sweep_config(cfg, 'staleness', 3).scheduler.staleness_S == 3
    nodes = sweep_config(cfg, 'nodes', 4).topology
    assert (nodes.nodes, nodes.ranks) == (4, 8)
    assert sweep_config(cfg, 'budget', 'inf').coherence.disabled
    with pytest.raises(ConfigInvalidError):
        sweep_config(cfg, 'width', 1)


def test_steps_to_target_reports_failure():
    problem = IllConditionedQuadratic(dim=4, condition=10.0)
    assert steps_to_target(Method.ADAMW, 1e-3, problem, max_steps=5) == 6


def test_second_order_methods_beat_adamw_on_quadratic():
    ranking = rank_optimizers(config.QUADRATIC_CONDITION, dim=8, seed=0)
    adamw = ranking['AdamW']['steps']

    assert ranking['Shampoo']['steps'] < adamw
    assert ranking['SOAP']['steps'] < adamw
    assert ranking['Shampoo']['steps'] <= config.RANKING_MAX_STEPS


def test_async_refresh_flattens_step_time_spikes():
    results = bench_spikes(classifier_preset(steps=200), job_cost=5.0, async_staleness=5)

    assert results['sync']['spikes']['spike_ratio'] >= 3.0
    assert results['async']['spikes']['spike_ratio'] <= 1.3
    assert relative_gap(results['async']['final_loss'], results['sync']['final_loss']) <= config.QUALITY_BAND


def test_staleness_sweep_wait_plateaus(tmp_path):
    cfg = classifier_preset(steps=200, scheduler={'inject_job_delay_steps': 5.0})
    rows = sweep(cfg, 'staleness', config.STALENESS_SWEEP, tmp_path)
    waits = {row['value']: row['barrier_wait_us'] for row in rows}
    evals = [row['final_eval_loss'] for row in rows]

    ordered = [waits[value] for value in config.STALENESS_SWEEP]
    assert all(later <= earlier for earlier, later in zip(ordered, ordered[1:]))
    assert waits[5] <= 1.1 * waits[10]
    assert (max(evals) - min(evals)) / min(evals) <= config.QUALITY_BAND
    assert (tmp_path / config.SWEEP_FILE_NAME).exists()
