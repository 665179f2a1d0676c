import pytest

from dsmdp.goldens import GOLDENS, TOLERANCE, compute_exact, published_penalty_check, qvalue_table, run_goldens
from dsmdp.goldens import PARAMS, REF, WORLD
from dsmdp.policy import KLSign

NON_SIGN = {g.name for g in GOLDENS if not g.sign_sensitive}


def test_there_are_at_least_twenty_reference_values():
    assert len(GOLDENS) >= 20
    assert len({g.name for g in GOLDENS}) == len(GOLDENS)


def test_sign_free_values_reproduce():
    for r in run_goldens():
        if r.golden.name in NON_SIGN:
            assert r.passed, r.golden.name


def test_reference_penalties_drive_the_recursion_to_every_downstream_value():
    results = published_penalty_check()
    assert len(results) == 10
    for r in results:
        assert r.passed, (r.golden.name, r.value, r.golden.expected)


def test_exact_values_within_rounding_of_reference():
    # the largest gap is the eightfold-amplified rounding of a 4-decimal log ratio
    for r in run_goldens():
        assert abs(r.diff) <= 8 * 0.5e-4 + 0.5e-4 + 1e-3, r.golden.name


def test_other_sign_convention_flips_penalties_but_keeps_net():
    results = {r.golden.name: r for r in run_goldens(KLSign.SECTION_3)}
    appendix = compute_exact(PARAMS, REF, WORLD)
    for g in GOLDENS:
        r = results[g.name]
        if not g.sign_sensitive:
            assert r.passed, g.name
        elif abs(g.expected) > 2 * TOLERANCE:
            assert not r.passed, g.name
            assert r.value == pytest.approx(-appendix[g.name], abs=1e-15)


def test_perturbation_is_detected():
    base = sum(not r.passed for r in run_goldens())
    perturbed = sum(not r.passed for r in run_goldens(perturb_theta_s=0.05))
    assert perturbed > base + 5
    assert not any(r.passed for r in run_goldens(perturb_theta_s=0.05) if r.golden.name == "p_correct")


def test_worked_arithmetic_mode_is_close_to_exact():
    for r in run_goldens(arithmetic="worked"):
        assert abs(r.value - r.exact_value) < 2e-3, r.golden.name
    with pytest.raises(ValueError):
        run_goldens(arithmetic="approximate")


def test_qvalue_table_rows_in_reverse_order():
    rows = qvalue_table()
    assert [r["action"] for r in rows] == ["STOP", "Sample C", "RESAMPLE", "Sample W"]
    assert [r["parameter"] for r in rows] == ["theta_d_c", "theta_s", "theta_d_w", "theta_s"]
    for r in rows:
        assert r["contribution"] == pytest.approx(r["score"] * r["q"], abs=1e-15)
