"""Central stability fund that covers member shortfalls."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .contracts import ContingentContract, ContractKind
from .errors import InvalidInputError
from .network import FinancialNetwork


class FundMode(str, enum.Enum):
    PRE_COLLECTED = "PreCollected"
    IN_CLEARING = "InClearing"


@dataclass(frozen=True)
class StabilityFundConfig:
    """Contributions ``y`` (one per node, society's entry ignored) and how they are collected."""

    y: np.ndarray
    mode: FundMode = FundMode.PRE_COLLECTED

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mode", FundMode(self.mode))


def build_stability_fund(net: FinancialNetwork, cfg: StabilityFundConfig, name: str = "B") -> FinancialNetwork:
    """Append fund node ``B`` owing each bank its shortfall.

    Pre-collected contributions are moved out of the banks' assets before
    clearing; in-clearing contributions become ordinary obligations to ``B``.
    """
    y = cfg.y
    if y.size != net.size:
        raise InvalidInputError(f"contribution vector has {y.size} entries, expected {net.size}")
    if not np.isfinite(y).all() or (y < 0).any() or (y > net.x).any():
        raise InvalidInputError("contributions must lie within [0, x]")
    if net.has_society and y[0] != 0:
        raise InvalidInputError("society does not contribute to the fund")
    size = net.size + 1
    fund = net.size
    x = np.append(net.x, 0.0)
    L = np.zeros((size, size))
    L[:-1, :-1] = net.base_liabilities
    if cfg.mode is FundMode.PRE_COLLECTED:
        x[:-1] -= y
        x[fund] = y.sum()
    else:
        L[:-1, fund] = y
    claims = [ContingentContract(ContractKind.STABILITY_FUND_CLAIM, fund, int(i)) for i in net.banks]
    names = net.names + (name,)
    return FinancialNetwork(x, L, net.contracts + tuple(claims), net.has_society, names)
