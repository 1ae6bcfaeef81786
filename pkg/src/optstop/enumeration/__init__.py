"""Finite filtered probability spaces: exhaustive checks of the stopping theory."""

from .approx import ApproximationTrace, approximate_stopping_time, default_rectangles
from .generate import (
    MANIFEST,
    all_binary_spaces,
    random_gains,
    random_product_space,
    random_stopping_time,
    tree_space,
)
from .space import (
    DEFAULT_CAP,
    FiniteFilteredSpace,
    GainTable,
    ProductStructure,
    StoppingTimeTable,
    bits,
    count_stopping_times,
    enumerate_stopping_times,
    iter_stopping_times,
    mask_of,
)
from .values import (
    expected_gain,
    first_contact_time,
    snell_envelope,
    stopping_time_matrix,
    value_brute_force,
    verify_key_equality,
    verify_smallest_optimal,
    vtilde_table,
)

__all__ = [
    "ApproximationTrace", "approximate_stopping_time", "default_rectangles",
    "MANIFEST", "all_binary_spaces", "random_gains", "random_product_space",
    "random_stopping_time", "tree_space",
    "DEFAULT_CAP", "FiniteFilteredSpace", "GainTable", "ProductStructure",
    "StoppingTimeTable", "bits", "count_stopping_times", "enumerate_stopping_times",
    "iter_stopping_times", "mask_of",
    "expected_gain", "first_contact_time", "snell_envelope", "stopping_time_matrix",
    "value_brute_force", "verify_key_equality", "verify_smallest_optimal", "vtilde_table",
]
