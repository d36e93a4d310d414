"""Published top-5 feature lists for the readmission (RA30) and deterioration (VS) cohorts.

Each column lists one explainer's five highest-ranked features. Building
global explanations straight from these rankings lets the agreement metrics
be checked without any training.
"""

from __future__ import annotations

from xai_concord.agreement import AgreementReport, ExpertSet, GlobalExplanation, pairwise_report

SHAP, L1, DTD = "S", "L", "D"

TABLE1 = {
    "RA30": {
        SHAP: (
            "Prev. inpat. stay count",
            "Patho.: No unique tests",
            "Elect. status: Not assigned",
            "LOS",
            "Planned the same day",
        ),
        # Printed as "Prev. input. stay count"; the same feature as the other columns' rank 1.
        L1: (
            "Prev. inpat. stay count",
            "Prev. inpat. stay count ²",
            "Patho.: No unique tests",
            "Adm. source: Broader",
            "Elect. status: Not assigned",
        ),
        DTD: (
            "Prev. inpat. stay count",
            "Ed presentations stay counts",
            "Age",
            "Prev. inpat. stay count ²",
            "Elect. status: Emergency",
        ),
    },
    "VS": {
        SHAP: ("LOS", "SpO2", "SBP", "N_RecordedVS", "min SpO2"),
        L1: ("LOS", "SpO2", "SBP count", "Resp. Rate count", "DBP"),
        DTD: ("AVPU", "O2 Flow rate", "N_MeasuredEvents", "N_RecordedVS", "SpO2"),
    },
}

# Expert-suggested predictors, spelled as the matching cohort features. RA30:
# previous inpatient and emergency visit counts, age, socioeconomic index and a
# longer-than-a-day stay flag. VS: the vital signs and bedside-activity counts
# clinicians named for deterioration.
EXPERT_SETS = {
    "RA30": (
        "Prev. inpat. stay count",
        "Ed presentations stay counts",
        "Age",
        "Socioeconomic index",
        "Stay longer than a day",
    ),
    "VS": (
        "AVPU",
        "SpO2",
        "Resp. Rate",
        "O2 Flow rate",
        "SBP",
        "DBP",
        "N_RecordedVS",
        "N_MeasuredEvents",
        "LOS",
    ),
}

FIXTURE_N_VALUES = (1, 3, 5)


def feature_space(study: str) -> tuple:
    """Every feature named in the study's table columns or expert set, first-seen order."""
    seen = []
    for col in (SHAP, L1, DTD):
        for name in TABLE1[study][col]:
            if name not in seen:
                seen.append(name)
    for name in EXPERT_SETS[study]:
        if name not in seen:
            seen.append(name)
    return tuple(seen)


def table1_globals(study: str) -> list:
    space = feature_space(study)
    return [GlobalExplanation.from_ranking(col, TABLE1[study][col], space) for col in (SHAP, L1, DTD)]


def table1_report(study: str, n_values=FIXTURE_N_VALUES) -> AgreementReport:
    return pairwise_report(
        table1_globals(study), n_values, ExpertSet(frozenset(EXPERT_SETS[study])),
        metadata={"source": "table1", "study": study},
    )
