"""Per-unit discrepancy between real and synthetic summary sets.

The working signal is total variation distance with per-cell signed gaps
(real minus synth, so positive means under-generated). A unit whose
synthetic table is empty reports the conventional worst case 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingSummary, UnitMismatch
from .summaries import ContingencyTable, FrequencyTable, SummarySet


@dataclass(frozen=True)
class CellGap:
    label: str | tuple[str, ...]
    real: float
    synth: float
    gap: float


@dataclass(frozen=True)
class UnitDiscrepancy:
    """TVD of one unit plus its per-cell attribution."""

    unit: str
    value: float
    cells: tuple[CellGap, ...]
    empty_synth: bool = False


@dataclass(frozen=True, eq=False)
class DiscrepancyReport:
    marginals: dict[str, UnitDiscrepancy]
    joints: dict[str, UnitDiscrepancy]
    mean_tvd: float

    @property
    def units(self) -> dict[str, UnitDiscrepancy]:
        return {**self.marginals, **self.joints}


def tvd(p: FrequencyTable | ContingencyTable, q: FrequencyTable | ContingencyTable) -> float:
    """Total variation distance 0.5 * sum |p - q| over matching cells."""
    if isinstance(p, FrequencyTable) and isinstance(q, FrequencyTable):
        if p.unit != q.unit:
            raise UnitMismatch(f"cannot compare units {p.unit!r} and {q.unit!r}")
        if p.labels != q.labels:
            raise UnitMismatch(f"{p.unit!r}: cell labels disagree")
        return 0.5 * float(np.abs(p.as_array() - q.as_array()).sum())
    if isinstance(p, ContingencyTable) and isinstance(q, ContingencyTable):
        if p.component != q.component:
            raise UnitMismatch(
                f"cannot compare components {p.component.id!r} and {q.component.id!r}")
        keys = p.cells.keys() | q.cells.keys()
        return 0.5 * sum(abs(p.proportion(k) - q.proportion(k)) for k in keys)
    raise UnitMismatch("cannot compare tables of different shapes")


def _marginal_unit(real: FrequencyTable, synth: FrequencyTable) -> UnitDiscrepancy:
    if real.labels != synth.labels:
        raise UnitMismatch(f"{real.unit!r}: cell labels disagree")
    gaps = tuple(
        CellGap(l, r, s, r - s)
        for l, r, s in zip(real.labels, real.proportions, synth.proportions)
    )
    value = 1.0 if synth.empty else tvd(real, synth)
    return UnitDiscrepancy(real.unit, value, gaps, empty_synth=synth.empty)


def _joint_unit(real: ContingencyTable, synth: ContingencyTable) -> UnitDiscrepancy:
    keys = sorted(real.cells.keys() | synth.cells.keys())
    gaps = tuple(
        CellGap(k, real.proportion(k), synth.proportion(k), real.proportion(k) - synth.proportion(k))
        for k in keys
    )
    value = 1.0 if synth.empty else tvd(real, synth)
    return UnitDiscrepancy(real.component.id, value, gaps, empty_synth=synth.empty)


def compute_report(real: SummarySet, synth: SummarySet) -> DiscrepancyReport:
    """Compare every unit of the real summary set against the synth one."""
    marginals: dict[str, UnitDiscrepancy] = {}
    for name, table in real.marginals.items():
        if name not in synth.marginals:
            raise MissingSummary(f"synth summary lacks marginal {name!r}")
        marginals[name] = _marginal_unit(table, synth.marginals[name])
    joints: dict[str, UnitDiscrepancy] = {}
    for cid, table in real.joints.items():
        if cid not in synth.joints:
            raise MissingSummary(f"synth summary lacks joint {cid!r}")
        joints[cid] = _joint_unit(table, synth.joints[cid])
    values = [u.value for u in marginals.values()] + [u.value for u in joints.values()]
    mean = float(np.mean(values)) if values else 0.0
    return DiscrepancyReport(marginals, joints, mean)
