"""Privacy-loss bookkeeping: composition bounds, privacy filters, subsampling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dp import DpCost

# Budgets typed as decimals (0.2, 0.1, ...) are not exact binary fractions;
# a sum that meets the budget must not be read as an excess.
BUDGET_SLACK = 1e-12
ADVANCED_FILTER_H_CONSTANT = 28.04


class Decision(str, enum.Enum):
    CONT = "CONT"
    HALT = "HALT"


class FilterKind(str, enum.Enum):
    BASIC = "basic"
    ADVANCED = "advanced"


class FilterHaltedError(RuntimeError):
    """A halted privacy filter was asked to admit another mechanism."""


@dataclass(frozen=True)
class LedgerEntry:
    cost: DpCost
    mechanism: str = ""
    round: int | None = None
    client: int | None = None
    run: int | None = None
    spent: bool = True

    def to_dict(self) -> dict:
        return {
            "epsilon": self.cost.epsilon,
            "delta": self.cost.delta,
            "mechanism": self.mechanism,
            "round": self.round,
            "client": self.client,
            "run": self.run,
            "spent": self.spent,
        }


class PrivacySpend:
    """Append-only ledger of mechanism invocations.

    Entries marked ``spent=False`` record a charge that was refused (the one
    that tripped a filter); they are kept for reporting but excluded from
    totals.
    """

    def __init__(self):
        self._entries: list[LedgerEntry] = []

    def record(self, cost: DpCost, mechanism: str = "", *, round: int | None = None,
               client: int | None = None, run: int | None = None,
               spent: bool = True) -> LedgerEntry:
        entry = LedgerEntry(cost, mechanism, round, client, run, spent)
        self._entries.append(entry)
        return entry

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def spent_costs(self) -> list[DpCost]:
        return [e.cost for e in self._entries if e.spent]

    def total(self) -> DpCost:
        return basic_composition(self.spent_costs())

    def __len__(self) -> int:
        return len(self._entries)

    def to_dict(self) -> dict:
        total = self.total()
        return {
            "entries": [e.to_dict() for e in self._entries],
            "total": {"epsilon": total.epsilon, "delta": total.delta},
        }

    def summary(self) -> dict:
        total = self.total()
        return {
            "n_entries": len(self._entries),
            "n_spent": sum(e.spent for e in self._entries),
            "epsilon": total.epsilon,
            "delta": total.delta,
        }


def privacy_loss_laplace(output: float, fx: float, fy: float, b: float) -> float:
    """ln of the Lap(fx, b) over Lap(fy, b) density ratio at ``output``."""
    if not b > 0:
        raise ValueError(f"Laplace scale must be positive, got {b}")
    return (abs(output - fy) - abs(output - fx)) / b


def basic_composition(costs: Iterable[DpCost]) -> DpCost:
    costs = list(costs)
    return DpCost(math.fsum(c.epsilon for c in costs), math.fsum(c.delta for c in costs))


def advanced_composition(epsilon: float, delta: float, k: int, delta_prime: float) -> DpCost:
    """Bound for ``k`` adaptively composed (epsilon, delta)-DP mechanisms."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if epsilon < 0 or delta < 0:
        raise ValueError("epsilon and delta must be nonnegative")
    if not 0.0 < delta_prime < 1.0:
        raise ValueError(f"delta_prime must lie in (0, 1), got {delta_prime}")
    eps = epsilon * math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) + k * epsilon * math.expm1(epsilon)
    return DpCost(eps, k * delta + delta_prime)


def subsample_amplify(cost: DpCost, m: int, n: int) -> DpCost:
    """Amplified cost of running the mechanism on m of n records drawn without replacement."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= m <= n:
        raise ValueError(f"subsample size m={m} must lie in [0, n={n}]")
    if m == n:
        return cost
    q = m / n
    return DpCost(math.log1p(q * math.expm1(cost.epsilon)), q * cost.delta)


def advanced_filter_h(eps_g: float, delta_g: float) -> float:
    return eps_g**2 / (ADVANCED_FILTER_H_CONSTANT * math.log(1.0 / delta_g))


def advanced_filter_k(epsilons: Sequence[float], eps_g: float, delta_g: float) -> float:
    """The advanced filter's running privacy-loss bound over heterogeneous epsilons."""
    h = advanced_filter_h(eps_g, delta_g)
    sq = math.fsum(e * e for e in epsilons)
    root = math.sqrt((sq + h) * (2.0 + math.log(sq / h + 1.0)) * math.log(2.0 / delta_g))
    return root + math.fsum(e * math.expm1(e) / 2.0 for e in epsilons)


def _exceeds(total: float, budget: float) -> bool:
    return total > budget + BUDGET_SLACK * max(1.0, budget)


def comp(kind: FilterKind | str, eps_g: float, delta_g: float, costs: Sequence[DpCost]) -> Decision:
    """Evaluate the filter's HALT/CONT rule on a full sequence of costs."""
    kind = FilterKind(kind)
    delta_total = math.fsum(c.delta for c in costs)
    if kind is FilterKind.BASIC:
        eps_total = math.fsum(c.epsilon for c in costs)
        halt = _exceeds(delta_total, delta_g) or _exceeds(eps_total, eps_g)
    else:
        k = advanced_filter_k([c.epsilon for c in costs], eps_g, delta_g)
        halt = _exceeds(delta_total, delta_g / 2.0) or k > eps_g
    return Decision.HALT if halt else Decision.CONT


@dataclass
class FilterState:
    kind: FilterKind
    eps_g: float
    delta_g: float = 0.0
    spend: PrivacySpend = field(default_factory=PrivacySpend)
    halted: bool = False

    def __post_init__(self):
        self.kind = FilterKind(self.kind)
        if not self.eps_g > 0:
            raise ValueError(f"eps_g must be positive, got {self.eps_g}")
        if self.kind is FilterKind.BASIC:
            if self.delta_g < 0:
                raise ValueError("delta_g must be nonnegative")
        elif not 0.0 < self.delta_g < 1.0 / math.e:
            raise ValueError(f"the advanced filter requires delta_g in (0, 1/e), got {self.delta_g}")

    @classmethod
    def basic(cls, eps_g: float, delta_g: float = 0.0) -> FilterState:
        return cls(FilterKind.BASIC, eps_g, delta_g)

    @classmethod
    def advanced(cls, eps_g: float, delta_g: float) -> FilterState:
        return cls(FilterKind.ADVANCED, eps_g, delta_g)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "eps_g": self.eps_g,
            "delta_g": self.delta_g,
            "halted": self.halted,
        }


def filter_step(state: FilterState, cost: DpCost, mechanism: str = "", **labels) -> Decision:
    """Ask the filter to admit one more mechanism.

    On CONT the cost is recorded as spent. On HALT it is recorded unspent, the
    filter halts permanently and the caller must not run the mechanism.
    """
    if state.halted:
        raise FilterHaltedError("privacy filter has already halted")
    decision = comp(state.kind, state.eps_g, state.delta_g, state.spend.spent_costs() + [cost])
    if decision is Decision.HALT:
        state.halted = True
        state.spend.record(cost, mechanism, spent=False, **labels)
    else:
        state.spend.record(cost, mechanism, **labels)
    return decision
