"""
Utility module.
"""

import argparse
from fractions import Fraction

import numpy as np


class ConfigurationError(ValueError):
    '''Exception raised for an invalid configuration value; the message names the field.
    '''


def positive_int(value):
    """Convert *value* to an integer and make sure it is strictly positive."""
    result = int(value)
    if result <= 0:
        raise argparse.ArgumentTypeError('Only positive integers are allowed')
    return result


def nonnegative_int(value):
    """Convert *value* to an integer and make sure it is not negative."""
    result = int(value)
    if result < 0:
        raise argparse.ArgumentTypeError('Only non-negative integers are allowed')
    return result


def restricted_float(x):

    x = float(x)
    if x < 0.0 or x > 1.0:
        raise argparse.ArgumentTypeError("%r not in range [0.0, 1.0]"%(x,))
    return x


def ceil_div(a, b):
    """Integer ceiling of a / b for b > 0."""
    return -(-a // b)


def quartiles(samples):
    """Return (q1, median, q3) with linear interpolation.

    Parameters
    ----------
    samples : sequence of numbers
        Must not be empty.

    Returns
    -------
    tuple of float
    """
    q1, q2, q3 = np.percentile(np.asarray(samples, dtype=np.float64), [25, 50, 75])
    return float(q1), float(q2), float(q3)


def summarize(samples):
    """min, quartiles and max of *samples* as a dict, empty dict when there are none."""
    if len(samples) == 0:
        return {}
    q1, q2, q3 = quartiles(samples)
    arr = np.asarray(samples)
    return {'min': float(arr.min()), 'q1': q1, 'median': q2, 'q3': q3, 'max': float(arr.max())}


def exact_slope(xs, ys):
    """Least-squares slope of integer points, as an exact Fraction.

    Returns Fraction(0) for fewer than two distinct x values.
    """
    n = len(xs)
    if n < 2:
        return Fraction(0)
    sx = sum(xs)
    sy = sum(ys)
    sxx = sum(x * x for x in xs)
    sxy = sum(x * y for x, y in zip(xs, ys))
    denom = n * sxx - sx * sx
    if denom == 0:
        return Fraction(0)
    return Fraction(n * sxy - sx * sy, denom)
