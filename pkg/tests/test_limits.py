import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qprocess.errors import DegenerateSample
from qprocess.limits import (
    clt_check,
    clt_grid,
    ks_distance_degenerate,
    ks_distance_normal,
    lln_check,
    rate_probe_clt,
    report_to_csv,
    report_to_json,
    variance_diagnostic,
)
from qprocess.offspring import derive_params


def test_ks_on_normal_draws():
    x = np.random.default_rng(2024).standard_normal(100_000)
    assert ks_distance_normal(x, 0.0, 1.0) < 1.95 / math.sqrt(1e5)


def test_ks_known_small_case():
    # one sample at 0: F_hat jumps from 0 to 1 where Phi = 1/2
    assert ks_distance_normal([0.0, 0.0], 0.0, 1.0) == pytest.approx(0.5)


def test_ks_on_constant_sample():
    assert ks_distance_normal(np.full(50, 3.0), 0.0, 1.0) >= 0.5


def test_ks_rejects_degenerate_inputs():
    with pytest.raises(DegenerateSample):
        ks_distance_normal([1.0], 0.0, 1.0)
    with pytest.raises(DegenerateSample):
        ks_distance_normal([1.0, 2.0], 0.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.integers(0, 10_000))
def test_ks_affine_invariance(shift, scale, seed):
    x = np.random.default_rng(seed).standard_normal(500)
    a = ks_distance_normal(x, 0.0, 1.0)
    b = ks_distance_normal(shift + scale * x, shift, scale)
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= 1.0


@pytest.mark.parametrize("p", [20_000])
def test_ks_dkw_envelope(p):
    """DKW: P{KS > e} <= 2 exp(-2 p e^2); the 0.999 level shrinks like 1/sqrt(p)."""
    rng = np.random.default_rng(5)
    for paths in (p, p // 10):
        e = math.sqrt(math.log(2 / 1e-3) / (2 * paths))
        assert ks_distance_normal(rng.standard_normal(paths), 0.0, 1.0) <= e


def test_ks_degenerate():
    assert ks_distance_degenerate([1.0, 2.0, 3.0], 2.0) == pytest.approx(1 / 3)
    assert ks_distance_degenerate([2.0, 2.0], 2.0) == 0.0


def test_clt_n1_is_degenerate(super_law):
    with pytest.raises(DegenerateSample):
        clt_check(super_law, 1, 1000, seed=1)


def test_clt_small_run(super_law):
    r = clt_check(super_law, 50, 20_000, seed=3)
    params = derive_params(super_law)
    assert r.mean_used == pytest.approx(3 * 50 - 4 * (1 - 0.5**50))
    assert r.paths == 20_000 and r.seed == 3
    assert abs(r.standardized_mean) < 5 / math.sqrt(20_000)
    assert r.standardized_var == pytest.approx(1.0, abs=0.05)
    assert r.ks_distance < 0.1
    assert r.variance_ratio == pytest.approx(r.scale_used**2 / (2 * params.c_rho * 50))


def test_clt_grid_matches_single_runs(super_law):
    grid = clt_grid(super_law, [20, 40], 10_000, seed=4)
    single = clt_check(super_law, 40, 10_000, seed=4)
    assert grid[1].ks_distance == single.ks_distance


def test_rate_probe_small(super_law):
    probe = rate_probe_clt(super_law, (25, 50, 100, 200), 20_000, seed=2)
    assert probe.bound_fraction == 1.0
    assert probe.slope < 0.0
    with pytest.raises(ValueError):
        rate_probe_clt(super_law, (25, 50), 100, seed=2)


def test_lln_small(sub_law):
    r = lln_check(sub_law, (50, 200), 5_000, seed=6)
    assert r.limit == pytest.approx(11 / 3)
    assert r.eps == pytest.approx(0.1 * 11 / 3)
    for m, se, e in zip(r.means, r.std_errors, r.exact_means):
        assert abs(m - e) <= 4 * se
    assert r.deviation_probs[1] <= r.deviation_probs[0]
    # mass at the atom splits around it, so the degenerate KS stays near 1/2
    assert r.ks_degenerate[-1] > 0.3


def test_lln_rejects_bad_eps(super_law):
    with pytest.raises(ValueError):
        lln_check(super_law, (10, 20), 100, eps=0.0)


def test_variance_diagnostic(example_law):
    law, params = example_law
    d = variance_diagnostic(law)
    assert all(c < 0.01 for c in d["relative_changes"])
    # the ratio approaches its limit like 1/n; one Richardson step removes that term
    extrapolated = 2 * d["ratios"][2] - d["ratios"][1]
    assert extrapolated == pytest.approx(d["predicted_limit"], rel=1e-4)
    assert d["agrees_with_one"] is False


def test_report_serialization(super_law):
    r = clt_check(super_law, 10, 2_000, seed=1)
    assert json.loads(report_to_json(r))["n"] == 10
    text = report_to_csv([r.to_dict()])
    header, row = text.strip().split("\n")
    assert header.split(",")[0] == "n" and row.split(",")[0] == "10"
