"""
Suite de chequeo de gradientes (ops, perdidas y modelo completo)
"""

import os

import pytest

from app.core.errors import ConfigError, GradCheckFailure
from app.services.gradcheck_service import check_suite, default_cases, run_suite

RUN_SLOW = os.getenv("DIRECTCAPS_RUN_SLOW", "0") == "1"

FAST_CASES = [c.name for c in default_cases() if c.name != "end_to_end"]


@pytest.mark.parametrize("name", FAST_CASES)
def test_case_passes(name):
    """Cada op y perdida contra diferencias finitas (3 pruebas rapidas)"""
    report = run_suite(trials=3, only=[name])
    case = report.results[0]
    assert case.passed, f"{name}: max_rel={case.max_rel_error:.3e} en {case.worst_input}"
    assert case.checked > 0


def test_end_to_end_tiny_model():
    report = run_suite(trials=2, only=["end_to_end"])
    assert report.passed, report.results[0].worst_input


@pytest.mark.slow
@pytest.mark.skipif(not RUN_SLOW, reason="activar con DIRECTCAPS_RUN_SLOW=1")
def test_full_suite_default_trials():
    report = run_suite()
    check_suite(report)
    assert all(r.trials == 20 for r in report.results)


def test_injected_bug_is_caught():
    report = run_suite(trials=2, only=["sigmoid", "mul"], inject_bug="sigmoid")
    assert not report.passed
    assert report.worst_case == "sigmoid"
    with pytest.raises(GradCheckFailure) as info:
        check_suite(report)
    assert "sigmoid" in info.value.message
    # la regla original vuelve a quedar registrada
    assert run_suite(trials=1, only=["sigmoid"]).passed


def test_loose_tolerance_is_honored():
    report = run_suite(trials=1, only=["sigmoid"], inject_bug="sigmoid", tol=0.5)
    assert report.passed and report.tol == 0.5


def test_unknown_case_rejected():
    with pytest.raises(ConfigError):
        run_suite(trials=1, only=["no_existe"])
    with pytest.raises(ConfigError):
        run_suite(trials=1, only=["sigmoid"], inject_bug="no_existe")
