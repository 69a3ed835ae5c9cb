"""Data-poisoning experiments for least-squares identification of noisy LTI systems."""
from .lti_sim import Dataset, DisturbanceSet, LtiSystem, simulate
from .regression import LsFit, ls_fit
from .attacks import PoisonDelta, BudgetSpec, StealthyConstraintSpec, AttackResult

__all__ = [
    "Dataset", "DisturbanceSet", "LtiSystem", "simulate",
    "LsFit", "ls_fit",
    "PoisonDelta", "BudgetSpec", "StealthyConstraintSpec", "AttackResult",
]
__version__ = "0.1.0"
