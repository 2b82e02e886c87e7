"""Represent a closed range of numerical values"""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import numpy as np

from .exceptions import ParameterError


class ValueRange:
    """Represent a closed range [lower, upper] of real values.

    Attributes:
        _lower: Lower bound of range.
        _upper: Upper bound of range.

    Methods:
        lower: Return lower bound.
        upper: Return upper bound.
        diameter: Return difference between upper and lower bounds.
        center: Return the midpoint of the range.
        contains: Returns True where the range contains value (arrays allowed).
        uniform: Draw values uniformly from the range.
    """

    def __init__(self, lower: float, upper: float):
        if not (np.isfinite(lower) and np.isfinite(upper)):
            raise ParameterError(f"Range bounds must be finite: [{lower}, {upper}]")
        if not lower < upper:
            raise ParameterError(f"Empty range: [{lower}, {upper}]")
        self._lower = float(lower)
        self._upper = float(upper)

    def lower(self) -> float:
        return self._lower

    def upper(self) -> float:
        return self._upper

    def diameter(self) -> float:
        return self._upper - self._lower

    def center(self) -> float:
        return 0.5 * (self._lower + self._upper)

    def contains(self, value, tol: float = 0.0):
        value = np.asarray(value)
        return (value >= self._lower - tol) & (value <= self._upper + tol)

    def uniform(self, rng: np.random.Generator, size=None):
        return rng.uniform(self._lower, self._upper, size=size)

    def __repr__(self):
        return f"ValueRange: [{self._lower}, {self._upper}]"

    def tuple(self):
        return self._lower, self._upper
