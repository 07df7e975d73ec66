#!/usr/bin/env python3
# -*- coding: utf-8 -*-
from datetime import datetime
from typing import Sequence

import numpy as np
import regex

class ValidationHelper:
    """Numeric and input checks shared by the loaders and the verification suites"""

    @staticmethod
    def is_valid_pattern(value):
        """Check if a value compiles as a column-selection pattern

        Args:
            value: The pattern to check

        Returns:
            True if the pattern compiles, False otherwise
        """
        if not value or not isinstance(value, str):
            return False
        try:
            regex.compile(value)
        except regex.error:
            return False
        return True

    @staticmethod
    def distinct_intervals(timestamps: Sequence[datetime]) -> int:
        """Number of distinct steps between consecutive timestamps; 1 means regular sampling"""
        return len({b - a for a, b in zip(timestamps[:-1], timestamps[1:])})

    @staticmethod
    def max_abs_deviation(a, b) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f'Cannot compare shapes {a.shape} and {b.shape}')
        return float(np.max(np.abs(a - b))) if a.size else 0.0

    @staticmethod
    def is_non_increasing(values, tolerance: float = 0.0) -> bool:
        """Each value at most the previous one plus a relative tolerance"""
        values = np.asarray(values, dtype=np.float64)
        if values.size < 2:
            return True
        slack = tolerance * np.maximum(np.abs(values[:-1]), 1.0)
        return bool(np.all(values[1:] <= values[:-1] + slack))

    @staticmethod
    def in_range(values, low: float, high: float, low_open: bool = False, high_open: bool = False) -> bool:
        """All values finite and inside the interval with the requested open ends"""
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            return False
        lower = values > low if low_open else values >= low
        upper = values < high if high_open else values <= high
        return bool(np.all(lower & upper))
