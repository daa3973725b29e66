"""Summary-statistics space: quantile bins, frequency and contingency tables.

Continuous variables are described by six main bins whose edges sit at the
0, 1/6, ..., 6/6 empirical quantiles of the real data (order statistics with
linear interpolation). One main bin may carry a refinement of eight
equal-width sub-bins; marginal tables then report the sub-bins in place of
the parent, scaled so they sum to the parent's share. Joint tables always
stay at main-bin resolution.

Bin intervals are half-open [e_i, e_{i+1}) with the final bin closed;
values outside the fitted range are clipped into the first or last bin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateBins,
    EmptyDataset,
    MissingBinSpec,
    NotContinuous,
    SchemaError,
    UnitMismatch,
)
from .schema import Continuous, Dataset, Discrete


@dataclass(frozen=True)
class RefinedBin:
    """Eight equal-width sub-bins inside main bin ``main_index``."""

    main_index: int
    sub_edges: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.sub_edges) != 9:
            raise SchemaError(f"expected 9 sub-edges, got {len(self.sub_edges)}")


@dataclass(frozen=True)
class BinCell:
    """One table cell of a binned continuous variable."""

    label: str
    lo: float
    hi: float
    closed_right: bool
    detail: bool
    main_index: int
    sub_index: int | None = None


def _interval_label(prefix: str, lo: float, hi: float, closed: bool) -> str:
    right = "]" if closed else ")"
    return f"{prefix}:[{float(lo)!r},{float(hi)!r}{right}"


@dataclass(frozen=True)
class BinSpec:
    """Binning of one continuous variable; edges strictly increasing."""

    variable: str
    edges: tuple[float, ...]
    requested: int = 6
    refined: RefinedBin | None = None

    def __post_init__(self) -> None:
        if len(self.edges) < 2:
            raise DegenerateBins(f"{self.variable!r}: need at least 2 edges")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise SchemaError(f"{self.variable!r}: edges must be strictly increasing")
        if self.refined is not None and not (0 <= self.refined.main_index < self.n_main):
            raise SchemaError(f"{self.variable!r}: refined index out of range")

    @property
    def n_main(self) -> int:
        return len(self.edges) - 1

    @property
    def merged(self) -> bool:
        """True when tied quantiles reduced the bin count below requested."""
        return self.n_main < self.requested

    def main_labels(self) -> tuple[str, ...]:
        out = []
        for i in range(self.n_main):
            closed = i == self.n_main - 1
            out.append(_interval_label(f"bin{i}", self.edges[i], self.edges[i + 1], closed))
        return tuple(out)

    def cells(self) -> tuple[BinCell, ...]:
        """Table cells in interval order; sub-bins replace the refined parent."""
        out: list[BinCell] = []
        for i in range(self.n_main):
            last_main = i == self.n_main - 1
            if self.refined is not None and i == self.refined.main_index:
                se = self.refined.sub_edges
                for j in range(8):
                    closed = last_main and j == 7
                    out.append(BinCell(
                        _interval_label(f"bin{i}.{j}", se[j], se[j + 1], closed),
                        float(se[j]), float(se[j + 1]), closed, True, i, j))
            else:
                out.append(BinCell(
                    _interval_label(f"bin{i}", self.edges[i], self.edges[i + 1], last_main),
                    float(self.edges[i]), float(self.edges[i + 1]), last_main, False, i))
        return tuple(out)

    def assign_main(self, values: np.ndarray) -> np.ndarray:
        """Main-bin index per value; out-of-range values clip into end bins."""
        edges = np.asarray(self.edges)
        idx = np.searchsorted(edges, values, side="right") - 1
        return np.clip(idx, 0, self.n_main - 1).astype(np.int64)

    def assign(self, values: np.ndarray) -> np.ndarray:
        """Cell index per value, aligned with cells() order."""
        main = self.assign_main(values)
        if self.refined is None:
            return main
        r = self.refined.main_index
        cell = np.where(main > r, main + 7, main)
        inside = main == r
        if inside.any():
            sub = np.searchsorted(np.asarray(self.refined.sub_edges), values[inside], side="right") - 1
            cell[inside] = r + np.clip(sub, 0, 7)
        return cell.astype(np.int64)

    @property
    def n_cells(self) -> int:
        return self.n_main + (7 if self.refined is not None else 0)


def fit_bins(real: Dataset, variable: str, bins: int = 6) -> BinSpec:
    """Fit main-bin edges at empirical quantiles of the real data."""
    if bins < 1:
        raise SchemaError(f"bins must be >= 1, got {bins}")
    if not isinstance(real.schema.kind(variable), Continuous):
        raise NotContinuous(f"{variable!r} is not continuous")
    if len(real) == 0:
        raise EmptyDataset(f"cannot fit bins for {variable!r} on an empty dataset")
    col = real.codes(variable)
    edges = np.quantile(col, np.linspace(0.0, 1.0, bins + 1))
    unique = np.unique(edges)
    if len(unique) < 2:
        raise DegenerateBins(f"{variable!r}: all quantile edges coincide at {unique[0]!r}")
    return BinSpec(variable, tuple(float(e) for e in unique), requested=bins)


@dataclass(frozen=True)
class FrequencyTable:
    """Proportions over the cells of one unit (a single variable)."""

    unit: str
    labels: tuple[str, ...]
    proportions: tuple[float, ...]
    detail: tuple[bool, ...] | None = None
    empty: bool = False

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.proportions):
            raise SchemaError(f"{self.unit!r}: labels and proportions disagree in length")
        if self.detail is not None and len(self.detail) != len(self.labels):
            raise SchemaError(f"{self.unit!r}: detail flags disagree in length")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaError(f"{self.unit!r}: duplicate cell labels")
        if any(p < 0 for p in self.proportions):
            raise SchemaError(f"{self.unit!r}: negative proportion")
        total = sum(self.proportions)
        if self.empty:
            if total != 0.0:
                raise SchemaError(f"{self.unit!r}: empty table must be all-zero")
        elif abs(total - 1.0) > 1e-9:
            raise SchemaError(f"{self.unit!r}: proportions sum to {total}, not 1")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.proportions, dtype=np.float64)


@dataclass(frozen=True)
class StructuralComponent:
    """A joint unit: 2 to 4 variables whose dependence is tracked together."""

    variables: tuple[str, ...]

    def __post_init__(self) -> None:
        if not 2 <= len(self.variables) <= 4:
            raise SchemaError(f"component needs 2..4 variables, got {len(self.variables)}")
        if len(set(self.variables)) != len(self.variables):
            raise SchemaError(f"component repeats a variable: {self.variables}")

    @property
    def id(self) -> str:
        return "+".join(self.variables)


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """Joint proportions over main-bin / category cells of a component.

    Only occupied cells are stored; absent cells mean proportion zero.
    """

    component: StructuralComponent
    axis_labels: tuple[tuple[str, ...], ...]
    cells: dict[tuple[str, ...], float]
    empty: bool = False

    def __post_init__(self) -> None:
        if len(self.axis_labels) != len(self.component.variables):
            raise SchemaError(f"{self.component.id!r}: one label axis per variable required")
        arity = len(self.component.variables)
        for key, value in self.cells.items():
            if len(key) != arity:
                raise SchemaError(f"{self.component.id!r}: cell key {key} has wrong arity")
            if value < 0:
                raise SchemaError(f"{self.component.id!r}: negative proportion at {key}")
        total = sum(self.cells.values())
        if self.empty:
            if total != 0.0:
                raise SchemaError(f"{self.component.id!r}: empty table must have no mass")
        elif abs(total - 1.0) > 1e-9:
            raise SchemaError(f"{self.component.id!r}: proportions sum to {total}, not 1")

    def proportion(self, key: tuple[str, ...]) -> float:
        return self.cells.get(key, 0.0)


def summarize_marginal(data: Dataset, variable: str, spec: BinSpec | None = None) -> FrequencyTable:
    """Frequency table of one variable; spec is required iff it is continuous."""
    kind = data.schema.kind(variable)
    n = len(data)
    if isinstance(kind, Discrete):
        labels = kind.categories
        detail = None
        if n == 0:
            return FrequencyTable(variable, labels, (0.0,) * len(labels), None, empty=True)
        counts = np.bincount(data.codes(variable), minlength=len(labels))
    else:
        if spec is None:
            raise MissingBinSpec(f"continuous variable {variable!r} needs a BinSpec")
        if spec.variable != variable:
            raise UnitMismatch(f"spec is for {spec.variable!r}, not {variable!r}")
        cells = spec.cells()
        labels = tuple(c.label for c in cells)
        detail = tuple(c.detail for c in cells)
        if not any(detail):
            detail = None
        if n == 0:
            return FrequencyTable(variable, labels, (0.0,) * len(labels), detail, empty=True)
        counts = np.bincount(spec.assign(data.codes(variable)), minlength=len(labels))
    props = tuple(float(c) / n for c in counts)
    return FrequencyTable(variable, labels, props, detail)


def summarize_joint(
    data: Dataset,
    component: StructuralComponent,
    specs: Mapping[str, BinSpec | None],
) -> ContingencyTable:
    """Contingency table over a component, at main-bin resolution."""
    axis_labels: list[tuple[str, ...]] = []
    index_cols: list[np.ndarray] = []
    for name in component.variables:
        kind = data.schema.kind(name)
        if isinstance(kind, Discrete):
            axis_labels.append(kind.categories)
            index_cols.append(data.codes(name))
        else:
            spec = specs.get(name)
            if spec is None:
                raise MissingBinSpec(f"continuous variable {name!r} needs a BinSpec")
            axis_labels.append(spec.main_labels())
            index_cols.append(spec.assign_main(data.codes(name)))
    if len(data) == 0:
        return ContingencyTable(component, tuple(axis_labels), {}, empty=True)
    shape = tuple(len(a) for a in axis_labels)
    flat = np.ravel_multi_index(tuple(index_cols), shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape)))
    n = len(data)
    cells: dict[tuple[str, ...], float] = {}
    for flat_idx in np.flatnonzero(counts):
        key = tuple(axis_labels[d][i] for d, i in enumerate(np.unravel_index(flat_idx, shape)))
        cells[key] = float(counts[flat_idx]) / n
    return ContingencyTable(component, tuple(axis_labels), cells)


def marginalize(table: ContingencyTable, variable: str) -> FrequencyTable:
    """Sum a contingency table over all axes but one (main bins only)."""
    if variable not in table.component.variables:
        raise UnitMismatch(f"{variable!r} is not part of component {table.component.id!r}")
    axis = table.component.variables.index(variable)
    labels = table.axis_labels[axis]
    sums = dict.fromkeys(labels, 0.0)
    for key, value in table.cells.items():
        sums[key[axis]] += value
    return FrequencyTable(variable, labels, tuple(sums[l] for l in labels), empty=table.empty)


def refine_bins(spec: BinSpec, real_table: FrequencyTable, synth_table: FrequencyTable) -> BinSpec:
    """Split the main bin with the largest positive real-synth gap.

    Both tables must be at main-bin resolution for spec's variable. When no
    main bin is under-generated (every gap non-positive) the spec is
    returned unchanged.
    """
    for table in (real_table, synth_table):
        if table.unit != spec.variable:
            raise UnitMismatch(f"table unit {table.unit!r} does not match {spec.variable!r}")
        if len(table.labels) != spec.n_main:
            raise UnitMismatch(
                f"{spec.variable!r}: expected {spec.n_main} main bins, table has {len(table.labels)}")
    gaps = real_table.as_array() - synth_table.as_array()
    if float(gaps.max()) <= 0.0:
        return spec
    i = int(np.argmax(gaps))
    sub_edges = np.linspace(spec.edges[i], spec.edges[i + 1], 9)
    return replace(spec, refined=RefinedBin(i, tuple(float(e) for e in sub_edges)))


def sub_detail(data: Dataset, spec: BinSpec) -> np.ndarray:
    """(n_main, 8) within-bin sub-proportions of data under spec's grid.

    Row i describes how data inside main bin i spreads over that bin's eight
    equal-width sub-intervals; rows with no members fall back to uniform.
    """
    col = data.codes(spec.variable)
    main = spec.assign_main(col)
    out = np.full((spec.n_main, 8), 1.0 / 8.0)
    for i in range(spec.n_main):
        members = col[main == i]
        if len(members) == 0:
            continue
        grid = np.linspace(spec.edges[i], spec.edges[i + 1], 9)
        sub = np.clip(np.searchsorted(grid, members, side="right") - 1, 0, 7)
        counts = np.bincount(sub, minlength=8)
        out[i] = counts / counts.sum()
    return out


# ---------------------------------------------------------------------------
# dataset-level summary sets


@dataclass(frozen=True, eq=False)
class SummarySet:
    """All tables of one dataset: marginals by variable, joints by component id."""

    marginals: dict[str, FrequencyTable]
    joints: dict[str, ContingencyTable]


def compute_summaries(
    data: Dataset,
    specs: Mapping[str, BinSpec | None],
    components: Sequence[StructuralComponent] = (),
) -> SummarySet:
    marginals = {
        v.name: summarize_marginal(data, v.name, specs.get(v.name))
        for v in data.schema
    }
    joints = {c.id: summarize_joint(data, c, specs) for c in components}
    return SummarySet(marginals, joints)


def fit_all_bins(real: Dataset, bins: int = 6) -> dict[str, BinSpec | None]:
    """Main-bin specs for every continuous variable (None for discrete)."""
    return {
        v.name: fit_bins(real, v.name, bins) if isinstance(v.kind, Continuous) else None
        for v in real.schema
    }


def refine_all_bins(
    base_specs: Mapping[str, BinSpec | None],
    real: Dataset,
    synth: Dataset,
) -> dict[str, BinSpec | None]:
    """Per-variable refinement of base (unrefined) specs against a synth pool."""
    out: dict[str, BinSpec | None] = {}
    for name, spec in base_specs.items():
        if spec is None:
            out[name] = None
            continue
        real_main = summarize_marginal(real, name, replace(spec, refined=None))
        synth_main = summarize_marginal(synth, name, replace(spec, refined=None))
        out[name] = refine_bins(replace(spec, refined=None), real_main, synth_main)
    return out


def evaluation_summaries(
    real: Dataset,
    synth: Dataset,
    components: Sequence[StructuralComponent] = (),
    bins: int = 6,
) -> tuple[SummarySet, SummarySet, dict[str, BinSpec | None]]:
    """Shared real/synth summary pipeline: fit on real, refine against synth.

    Used both by the loop's per-iteration reporting and by offline
    evaluation so the two agree to the last bit on identical inputs.
    """
    if real.schema != synth.schema:
        raise UnitMismatch("real and synth datasets have different schemas")
    base = fit_all_bins(real, bins)
    specs = refine_all_bins(base, real, synth)
    return (
        compute_summaries(real, specs, components),
        compute_summaries(synth, specs, components),
        specs,
    )


# ---------------------------------------------------------------------------
# JSON payloads (exactly what proposer prompts embed)


def table_payload(table: FrequencyTable, include_detail: bool = True) -> dict:
    cells = []
    for i, label in enumerate(table.labels):
        is_detail = bool(table.detail[i]) if table.detail is not None else False
        if is_detail and not include_detail:
            continue
        cell: dict = {"label": label, "proportion": table.proportions[i]}
        if is_detail:
            cell["detail"] = True
        cells.append(cell)
    out: dict = {"unit": table.unit, "cells": cells}
    if table.empty:
        out["empty"] = True
    return out


def joint_payload(table: ContingencyTable) -> dict:
    cells = [
        {"labels": list(key), "proportion": table.cells[key]}
        for key in sorted(table.cells)
    ]
    out: dict = {
        "unit": table.component.id,
        "variables": list(table.component.variables),
        "cells": cells,
    }
    if table.empty:
        out["empty"] = True
    return out


def summary_payload(summaries: SummarySet, include_detail: bool = True) -> dict:
    return {
        "marginals": [table_payload(t, include_detail) for t in summaries.marginals.values()],
        "joints": [joint_payload(t) for t in summaries.joints.values()],
    }
