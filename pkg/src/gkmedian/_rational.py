"""Exact rational arithmetic shim.

Prefers gmpy2.mpq (fast enough for simplex pivots on the hot path) and falls
back to fractions.Fraction, which exposes the same numerator/denominator API.
"""

from __future__ import annotations

from fractions import Fraction

try:
    from gmpy2 import mpq as R

    HAVE_GMPY2 = True
except ImportError:  # pragma: no cover
    R = Fraction
    HAVE_GMPY2 = False

ZERO = R(0)
ONE = R(1)


def is_rational(x) -> bool:
    return isinstance(x, type(ZERO)) or isinstance(x, (int, Fraction))


def parse_rational(s):
    """Parse "p/q" strings, integer literals, or pass through rationals."""
    if isinstance(s, bool):
        raise ValueError(f"not a rational: {s!r}")
    if isinstance(s, int):
        return R(s)
    if isinstance(s, str):
        txt = s.strip()
        if "/" in txt:
            p, q = txt.split("/", 1)
            den = int(q)
            if den <= 0:
                raise ValueError(f"non-positive denominator in {s!r}")
            return R(int(p), den)
        return R(int(txt))
    if is_rational(s):
        return R(s)
    raise ValueError(f"not a rational: {s!r}")


def format_rational(x) -> str:
    """Serialize as "p/q", or bare integer when the denominator is 1."""
    x = R(x)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def to_decimal_string(x, sig: int = 12) -> str:
    """Advisory decimal rendering with `sig` significant digits.

    Only for human-facing reports; never feeds back into the pipeline.
    """
    import decimal

    x = R(x)
    with decimal.localcontext() as ctx:
        ctx.prec = sig
        d = decimal.Decimal(int(x.numerator)) / decimal.Decimal(int(x.denominator))
    return str(d.normalize())
