"""Effectiveness accounting and the feedback rules driving selection.

Each judged model gets an effectiveness value; the delta against the
pre-mutation baseline is added to the contribution scores of everything
selected that round and decides whether the mutated backbone earns a place
in the repository.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import UnknownId
from .generator import ContributionLedger
from .graph import Tensor
from .oracle import Verdict
from .repository import Component, Repository, add_component

SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class EffRecord:
    """Effectiveness of one judged model against its pre-mutation baseline."""

    model_id: str
    eff: float
    eff_old: float

    @property
    def delta(self) -> float:
        return self.eff - self.eff_old


def compute_eff(verdict: Verdict, inputs: Mapping[str, Any]) -> float:
    """Effectiveness of a verdict given the tensors fed to the executors.

    No bug scores zero; crashes and NaN divergences score the mean element
    value over the concatenation of all input tensors; an inconsistency
    scores its own maximum divergence.
    """
    if verdict.kind == "none":
        return 0.0
    if verdict.kind == "inconsistency":
        return float(verdict.max_inconsistency_value)
    total = 0.0
    count = 0
    for val in inputs.values():
        arr = val.values if isinstance(val, Tensor) else np.asarray(val)
        total += float(np.asarray(arr, dtype=np.float64).sum())
        count += arr.size
    return total / count if count else 0.0


def update_contribution(ledger: ContributionLedger, key: str, delta: float) -> float:
    """Add a delta to one tracked score, clamped at the positive floor.

    The key may name a component id or an operator kind; anything untracked
    raises UnknownId so silent typos cannot skew selection.
    """
    if key in ledger.component_scores:
        table = ledger.component_scores
    elif key in ledger.operator_scores:
        table = ledger.operator_scores
    else:
        raise UnknownId(f"no tracked score for {key!r}")
    table[key] = max(table[key] + delta, SCORE_FLOOR)
    return table[key]


def maybe_add_component(
    repo: Repository, mutant: Component, verdict: Verdict, delta: float
) -> tuple[str, str | None]:
    """Grow the repository when the mutant earned it.

    A mutant is added when it participated in finding a bug, or when its
    effectiveness strictly improved on the baseline. Returns ("added", new
    id) or ("skipped", None); structural duplicates raise DuplicateStructure
    from add_component.
    """
    if verdict.kind != "none" or delta > 0:
        return "added", add_component(repo, mutant)
    return "skipped", None
