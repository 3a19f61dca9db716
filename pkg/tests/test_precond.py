"""
Tests for blocking, factor accumulation, refreshes and update rules.
"""

import numpy as np
import pytest

from precond_runtime.core.precond import (AdamState, ParamState, accumulate_factors, adamw_step,
                                          apply_update, compute_refresh, get_update_rule,
                                          install_refresh, partition_param, precondition_shampoo,
                                          precondition_soap, refresh_inverse, register_update_rule,
                                          registered_update_rules, take_snapshot)
from precond_runtime.errors import (ConfigInvalidError, NonFiniteError, ShapeMismatchError,
                                    StaleUninitializedError)
from precond_runtime.models.blocks import FactorSnapshot, PrecondBlock, RefreshResult
from precond_runtime.models.matrices import EigenPair
from precond_runtime.models.optimizer_config import Accumulation, Method, OptimizerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_block(rows=4, cols=3):
    return PrecondBlock(partition_param((rows, cols), 2048, "W")[0])


def test_partition_covers_parameter_once():
    specs = partition_param((5, 7), 3, "W")
    covered = np.zeros((5, 7), dtype=int)
    for spec in specs:
        assert spec.rows <= 3 and spec.cols <= 3
        covered[spec.slices()] += 1

    assert np.all(covered == 1)
    assert len(specs) == 2 * 3
    assert specs[-1].shape == (2, 1)


def test_partition_scalars_and_vectors():
    assert [spec.shape for spec in partition_param((), 4)] == [(1, 1)]
    assert [spec.shape for spec in partition_param((6,), 4)] == [(4, 1), (2, 1)]
    with pytest.raises(ConfigInvalidError):
        partition_param((3, 3), 0)


def test_sum_accumulation_adds_grams(rng):
    cfg = OptimizerConfig(method="Shampoo")
    block = make_block()
    g1, g2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    accumulate_factors(block, g1, cfg)
    accumulate_factors(block, g2, cfg)

    assert np.allclose(block.L.to_array(), g1 @ g1.T + g2 @ g2.T)
    assert np.allclose(block.R.to_array(), g1.T @ g1 + g2.T @ g2)


def test_ema_accumulation_is_soap_default(rng):
    cfg = OptimizerConfig(method="SOAP")
    assert cfg.resolved_accumulation == Accumulation.EMA

    block = make_block()
    g = rng.standard_normal((4, 3))
    accumulate_factors(block, g, cfg)
    assert np.allclose(block.L.to_array(), (1 - cfg.accumulation_beta) * g @ g.T)


def test_accumulate_rejects_bad_gradients():
    cfg = OptimizerConfig()
    block = make_block()
    with pytest.raises(ShapeMismatchError):
        accumulate_factors(block, np.ones((3, 4)), cfg)
    with pytest.raises(NonFiniteError):
        accumulate_factors(block, np.full((4, 3), np.nan), cfg)


def test_snapshot_is_a_copy(rng):
    cfg = OptimizerConfig()
    block = make_block()
    accumulate_factors(block, rng.standard_normal((4, 3)), cfg)
    snapshot = take_snapshot(block, step=10)
    checksum = snapshot.compute_checksum()

    accumulate_factors(block, rng.standard_normal((4, 3)), cfg)
    assert snapshot.compute_checksum() == checksum
    assert snapshot.step == 10


def test_shampoo_refresh_install_bumps_version(rng):
    cfg = OptimizerConfig(method="Shampoo", damping=1e-4)
    block = make_block()
    accumulate_factors(block, rng.standard_normal((4, 3)), cfg)

    with pytest.raises(StaleUninitializedError):
        precondition_shampoo(block, np.ones((4, 3)))

    result = compute_refresh(take_snapshot(block, 0), cfg)
    install_refresh(block, result, step=2)
    assert block.version == 1
    assert block.last_refresh_step == 2
    assert block.source_snapshot_step == 0

    g = rng.standard_normal((4, 3))
    expected = result.inv_L.to_array() @ g @ result.inv_R.to_array()
    assert np.allclose(precondition_shampoo(block, g), expected)


def test_refresh_inverse_leaves_input_untouched(rng):
    cfg = OptimizerConfig(method="Shampoo")
    block = make_block()
    accumulate_factors(block, rng.standard_normal((4, 3)), cfg)

    refreshed = refresh_inverse(block, cfg, step=0)
    assert block.version == 0 and block.inv_L is None
    assert refreshed.version == 1 and refreshed.inv_L is not None


def test_soap_first_step_direction_is_sign_like(rng):
    cfg = OptimizerConfig(method="SOAP", eps=1e-12)
    block = make_block()
    g = rng.standard_normal((4, 3))
    accumulate_factors(block, g, cfg)
    install_refresh(block, compute_refresh(take_snapshot(block, 0), cfg), 0)

    direction = precondition_soap(block, g, cfg, step=0)
    q_l, q_r = block.eig_L.vectors, block.eig_R.vectors
    rotated = q_l.T @ direction @ q_r
    # one bias-corrected Adam step in the eigenbasis is ±1 wherever the rotated gradient is nonzero
    mask = np.abs(q_l.T @ g @ q_r) > 1e-8
    assert np.allclose(np.abs(rotated[mask]), 1.0, atol=1e-6)


def test_soap_install_reprojects_moments(rng):
    cfg = OptimizerConfig(method="SOAP")
    block = make_block()
    g = rng.standard_normal((4, 3))
    accumulate_factors(block, g, cfg)
    install_refresh(block, compute_refresh(take_snapshot(block, 0), cfg), 0)
    precondition_soap(block, g, cfg, step=0)

    m_full = block.eig_L.vectors @ block.rotated_m @ block.eig_R.vectors.T
    accumulate_factors(block, rng.standard_normal((4, 3)), cfg)
    install_refresh(block, compute_refresh(take_snapshot(block, 1), cfg), 1)

    # first moments rotate exactly; second moments stay nonnegative
    assert np.allclose(block.eig_L.vectors @ block.rotated_m @ block.eig_R.vectors.T, m_full)
    assert np.all(block.rotated_v >= 0)
    assert block.version == 2


def test_install_rejects_foreign_result(rng):
    cfg = OptimizerConfig()
    block = make_block()
    other = PrecondBlock(partition_param((4, 3), 2048, "V")[0])
    accumulate_factors(other, rng.standard_normal((4, 3)), cfg)
    with pytest.raises(ShapeMismatchError):
        install_refresh(block, compute_refresh(take_snapshot(other, 0), cfg), 0)


def test_adamw_first_step_and_weight_decay():
    cfg = OptimizerConfig(method="AdamW", lr=0.1, weight_decay=0.5, eps=0.0)
    state = AdamState((2,))
    direction = adamw_step(state, np.array([3.0, -0.5]), cfg, step=0)
    assert np.allclose(direction, [1.0, -1.0])

    theta = np.array([1.0, 2.0])
    assert np.allclose(apply_update(theta, direction, cfg), theta - 0.1 * (direction + 0.5 * theta))
    assert np.allclose(apply_update(theta, direction, cfg, lr=0.0), theta)


def test_apply_update_errors():
    cfg = OptimizerConfig(lr=1.0)
    with pytest.raises(ShapeMismatchError):
        apply_update(np.zeros(2), np.zeros(3), cfg)
    with pytest.raises(NonFiniteError):
        apply_update(np.zeros(2), np.array([np.inf, 0.0]), cfg)


def test_update_rule_registry():
    assert {"AdamW", "Shampoo", "SOAP"} <= set(registered_update_rules())
    with pytest.raises(ConfigInvalidError):
        register_update_rule("Shampoo", lambda *args: None)
    with pytest.raises(ConfigInvalidError):
        get_update_rule("Lion")

    register_update_rule("SignSGD", lambda state, g, cfg, step, tensors: np.sign(g), replace=True)
    assert np.array_equal(get_update_rule("SignSGD")(None, np.array([-2.0, 3.0]), None, 0, {}),
                          [-1.0, 1.0])
    assert get_update_rule(Method.SHAMPOO) is get_update_rule("Shampoo")


def test_param_state_blocks():
    cfg = OptimizerConfig(method="Shampoo", block_dim_limit=4)
    matrix = ParamState("W0", (6, 5), cfg)
    vector = ParamState("b0", (6,), cfg)

    assert matrix.second_order and len(matrix.blocks) == 4
    assert not vector.second_order and vector.adam is not None

    g = np.arange(30.0).reshape(6, 5)
    tiles = list(matrix.block_gradients(g))
    assert sum(tile.size for _, tile in tiles) == 30

    clone = matrix.copy()
    next(iter(clone.blocks.values())).version = 1
    assert all(block.version == 0 for block in matrix.blocks.values())


def test_optimizer_config_validation():
    with pytest.raises(ConfigInvalidError):
        OptimizerConfig(method="Lion")
    with pytest.raises(ConfigInvalidError):
        OptimizerConfig.from_dict({'pf': 5, 'precondition_frequency': 10})
    assert OptimizerConfig.from_dict({'pf': 5}).pf == 5


def test_partition_edge_tiles():
    tall = partition_param((3000, 500), 2048, "W")
    assert [(spec.row_range, spec.col_range) for spec in tall] == [((0, 2048), (0, 500)),
                                                                   ((2048, 3000), (0, 500))]

    square = partition_param((5000, 5000), 2048, "W")
    assert len(square) == 9
    assert sorted({spec.rows for spec in square}) == [904, 2048]
    assert [spec.shape for spec in square[:3]] == [(2048, 2048), (2048, 2048), (2048, 904)]
    assert square[-1].shape == (904, 904)


@pytest.mark.parametrize("scale", [0.25, 4.0, 81.0])
def test_shampoo_scaled_identity_factors(rng, scale):
    cfg = OptimizerConfig(method="Shampoo", damping=0.0)
    block = make_block()
    snapshot = FactorSnapshot(block.block_id, 0, scale * np.eye(4), scale * np.eye(3))
    install_refresh(block, compute_refresh(snapshot, cfg), 0)

    g = rng.standard_normal((4, 3))
    assert np.max(np.abs(precondition_shampoo(block, g) - g / np.sqrt(scale))) < 1e-10


def test_shampoo_diagonal_gradient_is_whitened():
    cfg = OptimizerConfig(method="Shampoo", damping=0.0, accumulation="Sum")
    block = make_block(2, 2)
    g = np.diag([2.0, 4.0])
    accumulate_factors(block, g, cfg)
    install_refresh(block, compute_refresh(take_snapshot(block, 0), cfg), 0)

    assert np.allclose(precondition_shampoo(block, g), np.eye(2), atol=1e-10)


def test_refresh_of_scaled_identity():
    cfg = OptimizerConfig(method="Shampoo", damping=0.0)
    block = make_block(2, 2)
    identity = compute_refresh(FactorSnapshot(block.block_id, 0, np.eye(2), np.eye(2)), cfg)
    scaled = compute_refresh(FactorSnapshot(block.block_id, 0, 16.0 * np.eye(2), np.eye(2)), cfg)

    assert np.allclose(identity.inv_L.to_array(), np.eye(2), atol=1e-12)
    assert np.allclose(identity.inv_R.to_array(), np.eye(2), atol=1e-12)
    assert np.allclose(scaled.inv_L.to_array(), 0.5 * np.eye(2), atol=1e-12)
    assert np.allclose(scaled.inv_R.to_array(), np.eye(2), atol=1e-12)


def test_soap_with_identity_bases_is_adamw(rng):
    cfg = OptimizerConfig(method="SOAP", weight_decay=0.0)
    block = make_block()
    bases = RefreshResult(block.block_id, 0, eig_L=EigenPair(np.ones(4), np.eye(4)),
                          eig_R=EigenPair(np.ones(3), np.eye(3)))
    install_refresh(block, bases, 0)
    state = AdamState((4, 3))

    for step in range(8):
        g = rng.standard_normal((4, 3))
        soap = precondition_soap(block, g, cfg, step)
        adam = adamw_step(state, g, cfg, step)
        assert np.max(np.abs(soap - adam)) < 1e-10


def test_soap_permuted_basis_moves_moments(rng):
    cfg = OptimizerConfig(method="SOAP")
    block = make_block()
    right = np.diag([1.0, 2.0, 3.0])
    left = np.diag([1.0, 2.0, 3.0, 4.0])
    install_refresh(block, compute_refresh(FactorSnapshot(block.block_id, 0, left, right), cfg), 0)
    precondition_soap(block, rng.standard_normal((4, 3)), cfg, step=0)
    m_old, v_old = block.rotated_m.copy(), block.rotated_v.copy()

    perm = np.eye(4)[[2, 0, 3, 1]]
    moved = FactorSnapshot(block.block_id, 1, perm @ left @ perm.T, right)
    install_refresh(block, compute_refresh(moved, cfg), 1)

    assert np.allclose(np.abs(block.eig_L.vectors), perm, atol=1e-12)
    assert np.allclose(block.rotated_v, perm.T @ v_old, atol=1e-12)
    # eigenvector signs are free, so compare magnitudes
    assert np.allclose(np.abs(block.rotated_m), np.abs(perm.T @ m_old), atol=1e-12)


def test_adamw_constant_gradient_settles_on_sign():
    cfg = OptimizerConfig(method="AdamW", eps=1e-12)
    state = AdamState((4,))
    g = np.array([0.3, -2.0, 5e-3, -7.0])
    for step in range(200):
        direction = adamw_step(state, g, cfg, step)
    assert np.allclose(direction, np.sign(g), atol=1e-6)


def test_adamw_zero_gradient_only_decays():
    cfg = OptimizerConfig(method="AdamW", lr=0.01, weight_decay=0.1)
    state = AdamState((3,))
    direction = adamw_step(state, np.zeros(3), cfg, step=0)
    assert np.array_equal(direction, np.zeros(3))

    theta = np.array([1.0, -2.0, 0.5])
    assert np.allclose(apply_update(theta, direction, cfg), theta - 0.01 * 0.1 * theta)
