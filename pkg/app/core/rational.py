"""
Exact-rational helpers

Model data lives in numpy object arrays of ``fractions.Fraction`` so that
matrix products stay exact; solver data is plain float64.
"""

from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

Number = Union[int, float, str, Fraction]


def to_fraction(value: Number) -> Fraction:
    """Parse ints, floats, Fractions and "p/q" / decimal strings"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # shortest decimal that round-trips, so 1.0472 stays 1309/1250
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    # numpy scalars, sympy Rationals
    try:
        return Fraction(int(value.p), int(value.q))  # type: ignore[union-attr]
    except AttributeError:
        return Fraction(str(value))


def qvector(values: Iterable[Number]) -> np.ndarray:
    return np.array([to_fraction(v) for v in values], dtype=object)


def qmatrix(rows: Sequence[Sequence[Number]], cols: int = 0) -> np.ndarray:
    """2-D object array of Fractions; ``cols`` fixes the width of an empty matrix"""
    rows = list(rows)
    if not rows:
        return np.zeros((0, cols), dtype=object)
    out = np.array([[to_fraction(v) for v in row] for row in rows], dtype=object)
    if out.ndim != 2:
        raise ValueError("ragged matrix rows")
    return out


def qzeros(shape) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out.fill(Fraction(0))
    return out


def qeye(n: int) -> np.ndarray:
    out = qzeros((n, n))
    for i in range(n):
        out[i, i] = Fraction(1)
    return out


def as_float(a) -> np.ndarray:
    return np.asarray(a, dtype=object).astype(float)


def rationalize(a, max_denominator: int) -> np.ndarray:
    """Round a float array entrywise to Fractions with bounded denominator"""
    flat = [Fraction(float(v)).limit_denominator(max_denominator) for v in np.ravel(a)]
    return np.array(flat, dtype=object).reshape(np.shape(a))


def format_fraction(value: Fraction) -> str:
    value = to_fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def exact_equal(a, b) -> bool:
    a = np.asarray(a, dtype=object)
    b = np.asarray(b, dtype=object)
    if a.shape != b.shape:
        return False
    return all(to_fraction(x) == to_fraction(y) for x, y in zip(a.ravel(), b.ravel()))


def is_psd_exact(matrix) -> bool:
    """
    Exact positive-semidefiniteness of a rational symmetric matrix

    Symmetric Gaussian elimination: a negative pivot fails, a zero pivot
    requires its whole remaining row to vanish.
    """
    m = np.array([[to_fraction(v) for v in row] for row in np.asarray(matrix, dtype=object)], dtype=object)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError("matrix must be square")
    if any(m[i, j] != m[j, i] for i in range(n) for j in range(i + 1, n)):
        return False
    for k in range(n):
        pivot = m[k, k]
        if pivot < 0:
            return False
        if pivot == 0:
            if any(m[k, j] != 0 for j in range(k + 1, n)):
                return False
            continue
        for i in range(k + 1, n):
            if m[i, k] == 0:
                continue
            factor = m[i, k] / pivot
            for j in range(k + 1, n):
                m[i, j] -= factor * m[k, j]
            m[i, k] = Fraction(0)
    return True
