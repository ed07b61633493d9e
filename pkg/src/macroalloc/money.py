"""Fixed-point money arithmetic on top of decimal.Decimal.

Prices carry exactly 4 decimal places; cash amounts stay unrounded
(Decimal +, -, * are exact) and are quantized to cents only for
display and CSV output. Never route money through float.
"""

from decimal import Decimal, ROUND_HALF_UP

from .errors import ValidationError

PRICE_EXP = Decimal("0.0001")
CENT = Decimal("0.01")

ZERO = Decimal("0")


def to_decimal(value) -> Decimal:
    """Convert via str() so float literals do not leak binary fractions."""
    if isinstance(value, Decimal):
        return value
    return Decimal(str(value))


def to_price(value) -> Decimal:
    """Parse a price into 4-decimal fixed point. Prices must be > 0."""
    try:
        price = to_decimal(value).quantize(PRICE_EXP, rounding=ROUND_HALF_UP)
    except Exception as exc:
        raise ValidationError(f"not a price: {value!r}") from exc
    if price <= 0:
        raise ValidationError(f"price must be > 0, got {value!r}")
    return price


def to_cents(amount: Decimal) -> Decimal:
    """Round an exact amount to cents for reporting."""
    return amount.quantize(CENT, rounding=ROUND_HALF_UP)


def bps(basis_points: int | Decimal) -> Decimal:
    """Basis points as an exact decimal fraction (10 bps -> 0.0010)."""
    return to_decimal(basis_points) / Decimal(10_000)
