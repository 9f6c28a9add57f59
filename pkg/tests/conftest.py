"""Shared fixtures plus a per-criterion summary for the acceptance suite."""

from __future__ import annotations

import pytest

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance_results[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.failed:
        _acceptance_results[name] = "ERROR"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_acceptance_results):
        outcome = _acceptance_results[name]
        terminalreporter.write_line(f"[{outcome}] {name}")


@pytest.fixture()
def tiny_note():
    from trialmatch.model import PatientNote

    return PatientNote(
        patient_id="P001",
        sentences=(
            "A 61-year-old woman presents with progressive dyspnea.",
            "She has a documented history of type 2 diabetes mellitus.",
            "Current medications include metformin and lisinopril.",
        ),
    )


@pytest.fixture()
def tiny_trial():
    from trialmatch.model import ClinicalTrial

    return ClinicalTrial(
        trial_id="T001",
        title="Observational study of cardiopulmonary outcomes",
        summary="Evaluates exercise tolerance in adults with chronic dyspnea.",
        target_diseases=("chronic dyspnea", "heart failure"),
        interventions=("exercise program",),
        inclusion_text="Documented history of diabetes mellitus.\nProgressive dyspnea on exertion.",
        exclusion_text="Current anticoagulant therapy.",
    )
