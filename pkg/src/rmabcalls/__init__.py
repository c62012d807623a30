"""Restless-bandit planning of weekly service calls for a beneficiary cohort."""

from .core import ACTIVE, E, NE, PASSIVE, TransitionModel
from .whittle import IndexTable, precompute_index_table, whittle_index

__version__ = "0.1.0"
