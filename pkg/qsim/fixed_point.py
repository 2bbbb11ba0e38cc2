import math
from dataclasses import dataclass

import numpy as np

from risk_model.errors import GuardExceededError, ValidationError

# raw integers are carried in int64
MAX_TOTAL_BITS = 62


@dataclass(frozen=True)
class FixedPointFormat:
    """N_dig-bit two's complement numbers with `fraction_bits` bits after the point."""

    total_bits: int = 32
    fraction_bits: int = 24
    signed: bool = True

    def __post_init__(self):
        if not 1 <= self.fraction_bits < self.total_bits:
            raise ValidationError(
                f"need 1 <= fraction_bits < total_bits, got {self.fraction_bits}/{self.total_bits}"
            )
        if self.total_bits > MAX_TOTAL_BITS:
            raise ValidationError(f"total_bits above {MAX_TOTAL_BITS} is not supported")

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.fraction_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1 if self.signed else (1 << self.total_bits) - 1

    @property
    def min_value(self) -> float:
        return self.raw_min * self.resolution

    @property
    def max_value(self) -> float:
        return self.raw_max * self.resolution

    def check_range(self, raw):
        lo, hi = np.min(raw), np.max(raw)
        if lo < self.raw_min or hi > self.raw_max:
            raise GuardExceededError(
                f"value outside Q{self.total_bits}.{self.fraction_bits} range "
                f"[{self.min_value}, {self.max_value}]; widen the format"
            )

    def to_raw(self, x):
        """Nearest grid point as a raw integer (array in, int64 array out)."""
        arr = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("cannot represent a non-finite value in fixed point")
        raw = np.floor(arr * (1 << self.fraction_bits) + 0.5)
        self.check_range(raw)
        raw = raw.astype(np.int64)
        if raw.ndim == 0:
            return int(raw)
        return raw

    def from_raw(self, raw):
        return np.asarray(raw, dtype=float) * self.resolution if np.ndim(raw) else raw * self.resolution

    def quantize(self, x):
        return self.from_raw(self.to_raw(x))

    def sign_bit_of_difference(self, raw_x: int, raw_y: int) -> int:
        """Top bit of raw_x - raw_y computed as a two's complement addition."""
        diff = raw_x - raw_y
        if not self.signed:
            raise ValidationError("comparison needs a signed format")
        self.check_range(diff)
        mask = (1 << self.total_bits) - 1
        twos = (raw_x + ((~raw_y + 1) & mask)) & mask
        return (twos >> (self.total_bits - 1)) & 1

    def greater_equal(self, raw_x, raw_y):
        """1 where raw_x >= raw_y; works elementwise on int64 arrays."""
        return 1 - self.sign_bit_of_difference(raw_x, raw_y)


DEFAULT_FORMAT = FixedPointFormat(32, 24)


def bits_needed(max_abs_value: float, fraction_bits: int) -> int:
    """Smallest signed width holding +-max_abs_value at the given fraction."""
    integer_bits = max(1, math.ceil(math.log2(max_abs_value + 1.0)))
    return integer_bits + fraction_bits + 1
