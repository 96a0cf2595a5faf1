import math

import numpy as np
import pytest

from fairshield.core import Group
from fairshield.distribution import (InputDistribution, ScoredDataset,
                                     ThetaEntry, build_theta, load_scored_csv,
                                     paired_estimate, validate)
from fairshield.errors import ValidationError

A, B = Group.A, Group.B


# -- closed-form builders ----------------------------------------------------

def test_constant_builder():
    theta = build_theta("constant", 0.5)
    assert theta.cost_set == (1.0,)
    for g in (A, B):
        for r in (0, 1):
            assert theta.probability(g, r, 0) == 0.25


def test_constant_k_builder():
    theta = build_theta("constant_k", 0.325, cost_set=[0.25, 0.75])
    a_entries = [e for e in theta.entries if e.group == A]
    assert len(a_entries) == 4
    for e in a_entries:
        assert e.probability == pytest.approx(0.08125, abs=0)
    assert sum(e.probability for e in theta.entries) == pytest.approx(1.0, abs=1e-12)


def test_hybrid_deterministic_recommender():
    theta = build_theta("hybrid", 0.5, acceptance={A: 1.0, B: 0.0})
    assert theta.probability(A, 1, 0) == 0.5
    assert theta.probability(A, 0, 0) == 0.0
    assert theta.probability(B, 1, 0) == 0.0
    assert theta.probability(B, 0, 0) == 0.5


def test_hybrid_k_formula():
    theta = build_theta("hybrid_k", 0.4, acceptance={A: 0.75, B: 0.25},
                        cost_set=[0.1, 0.2, 0.3])
    assert theta.probability(A, 1, 1) == pytest.approx(0.4 * 0.75 / 3)
    assert theta.probability(B, 0, 2) == pytest.approx(0.6 * 0.75 / 3)


def test_builder_rejects_bad_parameters():
    with pytest.raises(ValidationError):
        build_theta("constant", 0.0)
    with pytest.raises(ValidationError):
        build_theta("constant", 1.0)
    with pytest.raises(ValidationError):
        build_theta("hybrid", 0.5)  # acceptance missing
    with pytest.raises(ValidationError):
        build_theta("constant_k", 0.5)  # cost set missing
    with pytest.raises(ValidationError):
        build_theta("constant_k", 0.5, cost_set=[0.1, 0.1])
    with pytest.raises(ValidationError):
        build_theta("uniform", 0.5)


@pytest.mark.parametrize("kind,kwargs", [
    ("constant", {}),
    ("constant_k", {"cost_set": [0.1, 0.4, 0.9]}),
    ("hybrid", {"acceptance": {A: 0.9, B: 0.15}}),
    ("hybrid_k", {"acceptance": {A: 0.6, B: 0.3}, "cost_set": [0.2, 0.8]}),
])
@pytest.mark.parametrize("p_a", [0.098, 0.325, 0.5, 0.6593])
def test_builders_normalize_and_marginalize(kind, kwargs, p_a):
    theta = build_theta(kind, p_a, **kwargs)
    assert validate(theta) == []
    assert sum(e.probability for e in theta.entries) == pytest.approx(1.0, abs=1e-12)
    assert theta.group_marginal(A) == pytest.approx(p_a, abs=1e-12)
    assert theta.group_marginal(B) == pytest.approx(1 - p_a, abs=1e-12)


# -- paired histogram estimator ---------------------------------------------

def test_paired_two_bin_example():
    data = ScoredDataset(((A, 0.9), (A, 0.6), (B, 0.2), (B, 0.4)))
    theta = paired_estimate(data, p_a=0.5, bins=2)
    assert theta.cost_set == (0.125, 0.375)
    assert theta.probability(A, 1, 1) == 0.25   # score 0.9, distance 0.4
    assert theta.probability(A, 1, 0) == 0.25   # score 0.6, distance 0.1
    assert theta.probability(B, 0, 1) == 0.25   # score 0.2, distance 0.3
    assert theta.probability(B, 0, 0) == 0.25   # score 0.4, distance 0.1
    assert validate(theta) == []


def test_paired_single_bin_degenerate_group():
    data = ScoredDataset(((A, 0.75), (A, 0.75), (B, 0.1)))
    theta = paired_estimate(data, p_a=0.6, bins=1)
    assert theta.cost_set == (0.25,)
    assert theta.probability(A, 1, 0) == pytest.approx(0.6)
    assert theta.probability(A, 0, 0) == 0.0


def test_paired_score_exactly_half():
    # strict "score > 0.5" means recommendation 0; distance 0 lands in bin 1
    data = ScoredDataset(((A, 0.5), (B, 0.9)))
    theta = paired_estimate(data, p_a=0.5, bins=3)
    assert theta.probability(A, 0, 0) == pytest.approx(0.5)
    assert theta.probability(A, 1, 0) == 0.0


def test_paired_interior_edge_goes_to_lower_bin():
    # bins over [0, 0.5] with n=2 have the interior edge at 0.25
    data = ScoredDataset(((A, 0.75), (B, 0.25)))
    theta = paired_estimate(data, p_a=0.5, bins=2)
    assert theta.probability(A, 1, 0) == pytest.approx(0.5)
    assert theta.probability(A, 1, 1) == 0.0


def test_paired_empty_group_rejected():
    with pytest.raises(ValidationError):
        paired_estimate(ScoredDataset(((A, 0.9),)), p_a=0.5, bins=2)


def test_paired_labels_become_ground_truth():
    data = ScoredDataset(((A, 0.9, 1), (A, 0.8, 0), (A, 0.2, 1), (B, 0.7, 1)))
    theta = paired_estimate(data, p_a=0.5, bins=1)
    assert theta.p_z1(A, 1) == pytest.approx(0.5)
    assert theta.p_z1(A, 0) == pytest.approx(1.0)
    assert theta.p_z1(B, 1) == pytest.approx(1.0)
    assert theta.p_z1(B, 0) == 0.0  # empty cell, zero mass


def test_paired_converges_to_known_histogram():
    # scores drawn from a fixed distribution; the estimator's cell masses
    # must approach the true binned masses as rows grow
    rng = np.random.default_rng(1234)
    n = 20_000
    groups = np.where(rng.random(n) < 0.4, "a", "b")
    scores = np.where(groups == "a", rng.beta(4, 2, n), rng.beta(2, 5, n))
    data = ScoredDataset(tuple((Group(g), float(s)) for g, s in zip(groups, scores)))
    theta = paired_estimate(data, p_a=0.4, bins=4)
    for e in theta.entries:
        lo = e.cost_index * 0.125
        hi = lo + 0.125
        if e.recommendation == 1:
            sel_lo, sel_hi = 0.5 + lo, 0.5 + hi
        else:
            sel_lo, sel_hi = 0.5 - hi, 0.5 - lo
        mask = groups == e.group.value
        frac = np.mean((scores[mask] > sel_lo) & (scores[mask] <= sel_hi))
        expected = (0.4 if e.group == A else 0.6) * frac
        assert e.probability == pytest.approx(expected, abs=0.02)


# -- validate ----------------------------------------------------------------

def test_validate_ok():
    assert validate(build_theta("constant", 0.5)) == []


def test_validate_range_diagnostic():
    theta = InputDistribution(
        cost_set=(1.0,),
        entries=(ThetaEntry(A, 1, 0, 1.2), ThetaEntry(B, 0, 0, -0.2)),
    )
    problems = validate(theta)
    assert any(p.startswith("range") for p in problems)


def test_validate_normalization_diagnostic():
    theta = InputDistribution(
        cost_set=(1.0,),
        entries=(ThetaEntry(A, 1, 0, 0.5), ThetaEntry(B, 0, 0, 0.499)),
    )
    problems = validate(theta)
    assert any(p.startswith("normalization") for p in problems)


def test_validate_cost_set_and_ground_truth():
    theta = InputDistribution(
        cost_set=(1.0, 1.0),
        entries=(ThetaEntry(A, 1, 5, 1.0),),
        ground_truth={(A, 1): 1.5},
    )
    problems = validate(theta)
    assert any(p.startswith("cost-set") for p in problems)
    assert any(p.startswith("ground-truth") for p in problems)


# -- serialization ------------------------------------------------------------

def test_dict_round_trip_and_digest_stability():
    theta = build_theta("hybrid_k", 0.3, acceptance={A: 0.8, B: 0.4},
                        cost_set=[0.2, 0.6],
                        ground_truth={(A, 1): 0.9, (A, 0): 0.2,
                                      (B, 1): 0.8, (B, 0): 0.1})
    clone = InputDistribution.from_dict(theta.to_dict())
    assert clone == theta
    assert clone.digest() == theta.digest()
    assert len(theta.digest()) == 64


def test_scored_csv_round_trip(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("group,score,label\na,0.9,1\nb,0.2,0\n")
    data = load_scored_csv(str(path))
    assert data.rows == ((A, 0.9, 1), (B, 0.2, 0))
    path2 = tmp_path / "unlabelled.csv"
    path2.write_text("group,score\na,0.7\nb,0.3\n")
    assert not load_scored_csv(str(path2)).has_labels
    bad = tmp_path / "bad.csv"
    bad.write_text("g,s\na,0.7\n")
    with pytest.raises(ValidationError):
        load_scored_csv(str(bad))
