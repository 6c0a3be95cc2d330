"""Emulated floating-point formats.

Values of every format are carried in binary64 containers. Rounding into a
format is round-to-nearest with ties-to-even, with gradual underflow and an
overflow check against the largest finite value of the target format.

Because all formats here have at most 24 significand bits, performing an
operation in binary64 and then rounding the result to the target format is
free of double-rounding errors (53 >= 2p + 2), so ``fp_op`` returns the
correctly rounded result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._accel import njit

__all__ = [
    "FloatFormat",
    "FormatOverflowError",
    "Q43",
    "HALF",
    "SINGLE",
    "DOUBLE",
    "FORMATS",
    "get_format",
    "round_to",
    "fp_op",
    "representable_values",
]


class FormatOverflowError(OverflowError):
    """A rounded value exceeded the largest finite number of the format."""


@dataclass(frozen=True)
class FloatFormat:
    """Binary floating-point format with an IEEE-style exponent bias.

    ``sig_bits`` counts the stored significand bits, not the implicit one.
    """

    name: str
    exp_bits: int
    sig_bits: int
    bits: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "bits", 1 + self.exp_bits + self.sig_bits)

    @property
    def bias(self) -> int:
        return 2 ** (self.exp_bits - 1) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** -(self.sig_bits + 1)

    @property
    def max_abs(self) -> float:
        return (2.0 - 2.0 ** -self.sig_bits) * 2.0**self.emax

    @property
    def min_normal(self) -> float:
        return 2.0**self.emin

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (self.emin - self.sig_bits)

    @property
    def is_native(self) -> bool:
        """True for binary64, where rounding is the identity."""
        return self.sig_bits >= 52

    def kernel_args(self) -> tuple[int, int, float, bool]:
        """Scalars describing the format, in the order the kernels expect."""
        return self.sig_bits, self.emin, self.max_abs, self.is_native

    def __lt__(self, other: "FloatFormat") -> bool:
        # ordered by unit roundoff: coarser formats compare greater
        return self.unit_roundoff < other.unit_roundoff

    def __le__(self, other: "FloatFormat") -> bool:
        return self.unit_roundoff <= other.unit_roundoff

    def __str__(self) -> str:
        return self.name


Q43 = FloatFormat("q43", exp_bits=4, sig_bits=3)
HALF = FloatFormat("half", exp_bits=5, sig_bits=10)
SINGLE = FloatFormat("single", exp_bits=8, sig_bits=23)
DOUBLE = FloatFormat("double", exp_bits=11, sig_bits=52)

FORMATS = {f.name: f for f in (Q43, HALF, SINGLE, DOUBLE)}
_SHORT = {"q": Q43, "h": HALF, "s": SINGLE, "d": DOUBLE}


def get_format(name: Union[str, FloatFormat]) -> FloatFormat:
    """Look up a format by canonical name (``"half"``) or one-letter code (``"h"``)."""
    if isinstance(name, FloatFormat):
        return name
    key = name.strip().lower()
    if key in FORMATS:
        return FORMATS[key]
    if key in _SHORT:
        return _SHORT[key]
    raise ValueError(f"unknown floating-point format {name!r}; expected one of {sorted(FORMATS)}")


@njit
def round_scalar(x, sig_bits, emin, max_abs, native):
    """Round one binary64 value to the format; overflow yields +-inf."""
    if native or x == 0.0 or x != x:
        return x
    if math.isinf(x):
        return x
    _, e = math.frexp(x)
    ex = e - 1
    if ex < emin:
        ex = emin
    ulp = math.ldexp(1.0, ex - sig_bits)
    r = np.rint(x / ulp) * ulp
    if abs(r) > max_abs:
        return math.copysign(math.inf, x)
    return r


def round_array(x: np.ndarray, sig_bits: int, emin: int, max_abs: float, native: bool) -> np.ndarray:
    """Vectorised counterpart of :func:`round_scalar` (bitwise identical)."""
    x = np.asarray(x, dtype=np.float64)
    if native:
        return x.copy()
    _, e = np.frexp(x)
    ex = np.maximum(e - 1, emin)
    ulp = np.ldexp(1.0, ex - sig_bits)
    with np.errstate(over="ignore", invalid="ignore"):
        r = np.rint(x / ulp) * ulp
    r = np.where((x == 0.0) | ~np.isfinite(x), x, r)
    over = np.isfinite(x) & (np.abs(r) > max_abs)
    if over.any():
        r = np.where(over, np.copysign(np.inf, x), r)
    return r


def _check_overflow(r, fmt: FloatFormat, what: str = "value"):
    bad = np.isinf(r)
    if np.any(bad):
        raise FormatOverflowError(f"{what} overflows {fmt.name} (max {fmt.max_abs:g})")


def round_to(x, fmt: Union[str, FloatFormat]):
    """Round ``x`` (scalar or array) to the nearest value of ``fmt``, ties to even.

    Raises :class:`FormatOverflowError` when the rounded magnitude exceeds
    ``fmt.max_abs``. Underflow is gradual and silent.
    """
    fmt = get_format(fmt)
    if np.ndim(x) == 0:
        xf = float(x)
        if not math.isfinite(xf):
            raise ValueError("round_to expects a finite value")
        r = round_scalar(xf, *fmt.kernel_args())
        _check_overflow(r, fmt)
        return float(r)
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("round_to expects finite values")
    r = round_array(arr, *fmt.kernel_args())
    _check_overflow(r, fmt)
    return r


_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


def fp_op(a: float, b: float, op: str, fmt: Union[str, FloatFormat]) -> float:
    """Compute ``a op b`` in the emulated format.

    Inputs are rounded to ``fmt`` first (they are expected to be representable
    already, in which case that is a no-op).
    """
    fmt = get_format(fmt)
    if op not in _OPS:
        raise ValueError(f"unknown operation {op!r}")
    a = round_to(a, fmt)
    b = round_to(b, fmt)
    if op == "div" and b == 0.0:
        raise ZeroDivisionError("division by zero in emulated arithmetic")
    return round_to(_OPS[op](a, b), fmt)


def representable_values(fmt: Union[str, FloatFormat]) -> np.ndarray:
    """All non-negative finite values of a small format, sorted.

    Only meant for narrow formats (q43, half); used by brute-force checks.
    """
    fmt = get_format(fmt)
    if fmt.bits > 16:
        raise ValueError("enumeration is only supported for formats of at most 16 bits")
    vals = [0.0]
    scale = 2.0**fmt.sig_bits
    for frac in range(1, 2**fmt.sig_bits):
        vals.append(frac / scale * fmt.min_normal)
    for ex in range(fmt.emin, fmt.emax + 1):
        for frac in range(2**fmt.sig_bits):
            vals.append((1.0 + frac / scale) * 2.0**ex)
    return np.array(vals)
