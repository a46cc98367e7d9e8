import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qprocess.core import (
    SpineSampler,
    build_alias,
    dp_joint_distribution,
    q_n_row,
    q_n_step,
    q_transition_probs,
    simulate_batch,
    simulate_grid,
    simulate_trajectory,
    spine_step,
    stream,
    transition_matrix,
)
from qprocess.errors import CapTooSmall
from qprocess.offspring import derive_params, new_offspring_law
from qprocess.series import joint_gf

from conftest import valid_laws


def brute_force_q(law, i, j_max):
    """Q_ij(1) by enumerating every offspring vector of the i parents."""
    params = derive_params(law)
    P = np.zeros(j_max + 1)
    probs = law.probs
    for kids in itertools.product(range(len(probs)), repeat=i):
        j = sum(kids)
        if j <= j_max:
            P[j] += math.prod(probs[k] for k in kids)
    j = np.arange(j_max + 1)
    return j * params.q ** (j - i) * P / (i * params.beta)


@pytest.mark.parametrize("i", [1, 2, 3, 4])
def test_transition_matches_enumeration(example_law, i):
    law, params = example_law
    row = q_transition_probs(params, law, i, 20)
    np.testing.assert_allclose(row.probs, brute_force_q(law, i, 20), atol=1e-14)
    assert row.probs.sum() + row.leakage == pytest.approx(1.0, abs=1e-14)


def test_super_law_transitions(super_law):
    params = derive_params(super_law)
    assert q_transition_probs(params, super_law, 1, 6).probs[2] == pytest.approx(1.0)
    row = q_transition_probs(params, super_law, 2, 6).probs
    assert row[2] == pytest.approx(0.75) and row[4] == pytest.approx(0.25)


def test_q_n_step_values(super_law):
    params = derive_params(super_law)
    assert q_n_step(params, super_law, 1, 2, 1) == pytest.approx(1.0, abs=1e-14)
    assert q_n_step(params, super_law, 1, 2, 2) == pytest.approx(0.75, abs=1e-14)
    assert q_n_step(params, super_law, 1, 4, 2) == pytest.approx(0.25, abs=1e-14)
    assert q_n_step(params, super_law, 3, 3, 0) == 1.0
    assert q_n_step(params, super_law, 1, 0, 5) == 0.0


def test_transition_matrix_rows(example_law):
    law, params = example_law
    Q, leak = transition_matrix(params, law, 30)
    for i in (1, 2, 5):
        np.testing.assert_allclose(Q[i], q_transition_probs(params, law, i, 30).probs, atol=1e-15)
    assert np.all(leak[1:] >= -1e-15)


@pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (4, 2)])
def test_chapman_kolmogorov(example_law, n, m):
    law, params = example_law
    cap = 96
    rows_n = np.array([q_n_row(params, law, i, n, cap) if i else np.zeros(cap + 1) for i in range(cap + 1)])
    rows_m = np.array([q_n_row(params, law, i, m, cap) if i else np.zeros(cap + 1) for i in range(cap + 1)])
    direct = q_n_row(params, law, 1, n + m, cap)
    np.testing.assert_allclose((rows_n[1] @ rows_m)[:30], direct[:30], atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(valid_laws(max_support=4), st.integers(1, 4))
def test_q_rows_are_probabilities(law, i):
    params = derive_params(law)
    row = q_transition_probs(params, law, i, 64)
    assert row.probs.min() >= 0.0
    assert row.probs[0] == 0.0
    assert row.probs.sum() <= 1.0 + 1e-12


def test_build_alias_reproduces_probabilities():
    p = np.array([0.1, 0.0, 0.6, 0.3])
    prob, alias = build_alias(p)
    k = len(p)
    recon = prob / k
    for c in range(k):
        recon[alias[c]] += (1.0 - prob[c]) / k
    np.testing.assert_allclose(recon, p, atol=1e-15)


@pytest.mark.parametrize("i", [1, 3])
def test_spine_step_frequencies(example_law, i):
    law, params = example_law
    sampler = SpineSampler(law, params)
    draws = sampler.step(stream(11, 0), np.full(1_000_000, i, dtype=np.int64))
    exact = q_transition_probs(params, law, i, 40).probs
    freq = np.bincount(draws, minlength=41)[:41] / len(draws)
    se = np.sqrt(exact * (1 - exact) / len(draws))
    assert np.all(np.abs(freq - exact) <= 5 * se + 1e-12)


def test_spine_step_scalar(super_law):
    params = derive_params(super_law)
    assert spine_step(stream(1), params, super_law, 1) == 2
    assert spine_step(stream(1), params, super_law, 2) in (2, 4)


def test_trajectory(super_law):
    params = derive_params(super_law)
    traj = simulate_trajectory(stream(3), params, super_law, 1, 50, seed_info="seed=3")
    assert len(traj.states) == 51 and traj.states[0] == 1 and traj.states[1] == 2
    assert (traj.states >= 1).all()
    assert traj.total_progeny == int(traj.states[:50].sum())
    again = simulate_trajectory(stream(3), params, super_law, 1, 50)
    assert np.array_equal(traj.states, again.states)


def test_batch_mean_state(example_law):
    law, params = example_law
    n = 6
    sample = simulate_batch(5, params, law, 1, n, 40_000)
    row = q_n_row(params, law, 1, n, 200)
    exact_w = float(row @ np.arange(201))
    se = sample.states.std(ddof=1) / math.sqrt(sample.paths)
    assert abs(sample.states.mean() - exact_w) <= 5 * se


def test_batch_joint_frequencies_match_dp(super_law):
    params = derive_params(super_law)
    sample = simulate_batch(9, params, super_law, 1, 4, 50_000)
    table = dp_joint_distribution(params, super_law, 4, 64, 64)
    for j, l, p in table.items():
        if p < 1e-3:
            continue
        freq = np.mean((sample.states == j) & (sample.values == l))
        assert abs(freq - p) <= 5 * math.sqrt(p * (1 - p) / sample.paths)


def test_results_independent_of_worker_count(super_law):
    params = derive_params(super_law)
    one = simulate_grid(4, params, super_law, 1, [5, 10], 25_000, workers=1)
    two = simulate_grid(4, params, super_law, 1, [5, 10], 25_000, workers=2)
    for n in (5, 10):
        assert np.array_equal(one[n].values, two[n].values)
        assert np.array_equal(one[n].states, two[n].states)


def test_grid_prefix_consistency(super_law):
    params = derive_params(super_law)
    grid = simulate_grid(2, params, super_law, 1, [3, 7], 12_000)
    alone = simulate_batch(2, params, super_law, 1, 3, 12_000)
    assert np.array_equal(grid[3].values, alone.values)


def test_dp_examples(super_law):
    params = derive_params(super_law)
    t0 = dp_joint_distribution(params, super_law, 0, 8, 8)
    assert list(t0.items()) == [(1, 0, 1.0)]
    t1 = dp_joint_distribution(params, super_law, 1, 8, 8)
    assert list(t1.items()) == [(2, 1, 1.0)]
    t2 = dp_joint_distribution(params, super_law, 2, 8, 8)
    assert [(j, l) for j, l, _ in t2.items()] == [(2, 3), (4, 3)]
    assert t2.probs[2, 3] == pytest.approx(0.75) and t2.probs[4, 3] == pytest.approx(0.25)


def test_dp_mass_conservation(example_law):
    law, params = example_law
    table = dp_joint_distribution(params, law, 12, 128, 256)
    assert table.total + table.leakage == pytest.approx(1.0, abs=1e-12)
    assert table.probs.min() >= 0.0


def test_dp_cap_too_small(super_law):
    params = derive_params(super_law)
    with pytest.raises(CapTooSmall):
        dp_joint_distribution(params, super_law, 20, 4, 8)


@pytest.mark.parametrize("n", [1, 3, 6])
def test_dp_agrees_with_generating_function(example_law, n):
    law, params = example_law
    table = dp_joint_distribution(params, law, n, 96, 96)
    J = joint_gf(law, n, 96, 96)
    np.testing.assert_allclose(table.probs[:13, :25], J.coeffs[:13, :25], atol=1e-10)


def test_subcritical_start_above_one(sub_law):
    params = derive_params(sub_law)
    row = q_transition_probs(params, sub_law, 2, 10).probs
    # spine law k p_k / m for the sub law: k=1 -> 1/3, k=2 -> 2/3; the other parent uses p itself
    assert row[1] == pytest.approx(0.5 / 3)
    assert row.sum() == pytest.approx(1.0)


def test_sub_law_first_step(sub_law):
    params = derive_params(sub_law)
    row = q_transition_probs(params, sub_law, 1, 5).probs
    assert row[1] == pytest.approx(1 / 3) and row[2] == pytest.approx(2 / 3)


def test_spine_step_from_two_within_three_se(super_law):
    params = derive_params(super_law)
    draws = SpineSampler(super_law, params).step(stream(7, 0), np.full(1_000_000, 2, dtype=np.int64))
    assert set(np.unique(draws)) == {2, 4}
    for value, p in ((2, 0.75), (4, 0.25)):
        assert abs(np.mean(draws == value) - p) <= 3 * math.sqrt(p * (1 - p) / 1e6)


def test_mean_S10_within_three_se(super_law):
    params = derive_params(super_law)
    sample = simulate_batch(7, params, super_law, 1, 10, 100_000)
    se = sample.values.std(ddof=1) / math.sqrt(sample.paths)
    assert abs(sample.values.mean() - 26.00390625) <= 3 * se


def test_S3_histogram_against_series(super_law):
    from qprocess.series import marginal_S

    params = derive_params(super_law)
    sample = simulate_batch(7, params, super_law, 1, 3, 100_000)
    exact = marginal_S(joint_gf(super_law, 3, 32, 32))
    freq = np.bincount(sample.values, minlength=33)[:33] / sample.paths
    for l, p in enumerate(exact):
        if p >= 1e-3:
            assert abs(freq[l] - p) <= 3 * math.sqrt(p * (1 - p) / sample.paths)
