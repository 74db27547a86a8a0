"""Movement-rhythm consistency from hourly step counts, with mixed-model and
rank-test analyses and a cohort simulator for validation."""
from .consistency import ConsistencyConfig, EmptyDatasetError, compute_consistency
from .ingest import (IngestError, ParticipantProfile, StepRecord, StringencyPoint, SurveyResponse,
                     parse_demographics, parse_step_records, parse_stringency, parse_survey)
from .rhythm import (DEFAULT_SEGMENTATION, Segmentation, consistency_value, emd, long_term_consistency,
                     monthly_consistency, short_term_consistency)
from .simulator import CohortConfig, simulate_cohort
from .stats import mann_whitney_u, pearson_r, wilcoxon_signed_rank

__version__ = "0.1.0"

__all__ = [
    "CohortConfig", "ConsistencyConfig", "DEFAULT_SEGMENTATION", "EmptyDatasetError", "IngestError",
    "ParticipantProfile", "Segmentation", "StepRecord", "StringencyPoint", "SurveyResponse",
    "compute_consistency", "consistency_value", "emd", "long_term_consistency", "mann_whitney_u",
    "monthly_consistency", "parse_demographics", "parse_step_records", "parse_stringency", "parse_survey",
    "pearson_r", "short_term_consistency", "simulate_cohort", "wilcoxon_signed_rank",
]
