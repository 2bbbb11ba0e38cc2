from dataclasses import dataclass, fields

from risk_model.errors import ValidationError


@dataclass
class QueryLedger:
    """Counts of oracle, arithmetic and sampling resources spent during a run."""

    usn_calls: int = 0
    arithmetic_calls: int = 0
    cry_calls: int = 0
    ugev_calls: int = 0
    uxi_calls: int = 0
    up_calls: int = 0
    inner_product_calls: int = 0
    classical_samples: int = 0
    normal_draws: int = 0
    bernoulli_draws: int = 0

    def charge(self, **counts):
        for name, amount in counts.items():
            if not hasattr(self, name):
                raise ValidationError(f"unknown ledger counter {name!r}")
            amount = int(amount)
            if amount < 0:
                raise ValidationError(f"ledger counters only grow; got {name}={amount}")
            setattr(self, name, getattr(self, name) + amount)

    def absorb(self, other: "QueryLedger", times: int = 1):
        self.charge(**{name: value * times for name, value in other.to_dict().items()})

    def snapshot(self) -> "QueryLedger":
        return QueryLedger(**self.to_dict())

    def since(self, earlier: "QueryLedger") -> "QueryLedger":
        return QueryLedger(**{f.name: getattr(self, f.name) - getattr(earlier, f.name) for f in fields(self)})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
