"""Deterministic greedy proposer for hermetic runs.

Each call computes, for every report unit, the batch histogram that moves
the pooled mixture maximally toward the real table subject to feasibility
(proportions cannot go negative). A batch distribution satisfying all of
those unit targets at once is fitted by iterative proportional fitting
over the occupied cells of the real dataset at main-bin resolution; the
unit with the largest discrepancy is fitted last in every sweep so its
correction is exact. The fitted joint is then realized as integer counts
variable by variable, with each variable's batch-level label totals pinned
to the fitted marginal, so every marginal and every component joint (not
only the targeted unit) inherits the one-step descent bound. With the pool
matching the real data the fit is the real lattice itself and the batch
reduces to sampling the real distribution. Continuous mass is allocated at
eight-sub-bin resolution inside every main bin, matching the real
within-bin composition (or the corrective composition, for the currently
refined bin), so later refinement of any bin does not uncover fresh
mismatch.

Integerization uses randomized largest-remainder apportionment (unbiased)
and a transportation rounding that keeps group rows and label columns
exactly at their integer totals.
"""
from __future__ import annotations

import math

import numpy as np

from . import errors
from .discrepancy import DiscrepancyReport
from .proposals import ComponentContext, FixedCategory, Proposal, ProposerContext, Range
from .schema import Continuous, Dataset, Discrete, VariableSchema
from .summaries import (
    BinSpec,
    ContingencyTable,
    StructuralComponent,
    SummarySet,
    sub_detail,
    summarize_joint,
)


def ideal_batch_histogram(
    real: np.ndarray, synth: np.ndarray, pool_size: int, batch_size: int,
) -> tuple[np.ndarray, float]:
    """Feasible batch histogram moving the pooled mixture closest to real.

    Solving (m*synth + b*h) / (m+b) = real for h and clipping negatives
    gives the minimal-TVD reachable mixture; the clipped negative mass is
    returned so callers can verify the one-step descent bound
    new_tvd = b*neg/(m+b) <= m/(m+b) * old_tvd.
    """
    r = np.asarray(real, dtype=float)
    s = np.asarray(synth, dtype=float)
    m, b = float(pool_size), float(batch_size)
    raw = ((m + b) * r - m * s) / b
    neg = float(np.clip(-raw, 0.0, None).sum())
    h = np.clip(raw, 0.0, None)
    total = h.sum()
    if total <= 0.0:
        h, total = r.copy(), r.sum()
    return h / total, neg


def _apportion(weights: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    """Integer counts summing to total, E[count] proportional to weights."""
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    out = np.zeros(len(w), dtype=np.int64)
    if total == 0:
        return out
    s = w.sum()
    if s <= 0.0:
        w = np.ones_like(w)
        s = float(len(w))
    raw = w * (total / s)
    out = np.floor(raw).astype(np.int64)
    rem = int(total - out.sum())
    if rem > 0:
        p = raw - out
        if p.sum() <= 1e-12:
            p = np.ones_like(p)
        if np.count_nonzero(p) < rem:
            p = p + 1e-9
        p = p / p.sum()
        extra = rng.choice(len(w), size=rem, replace=False, p=p)
        out[extra] += 1
    return out


def _transport_round(
    raw: np.ndarray, row_sums: np.ndarray, col_sums: np.ndarray, rng: np.random.Generator,
) -> np.ndarray:
    """Round a non-negative matrix to integers with exact row and col sums.

    row_sums are the actual group sizes; col_sums the desired label totals
    (both integer, equal grand total). After flooring, leftover counts are
    placed by weighted random draws over the fractional remainders. A
    deterministic largest-remainder pass would break ties by position, and
    with many size-1 rows holding identical conditionals that position
    order correlates with already-assigned variables, skewing their joint;
    randomising the draws removes that pairing bias.
    """
    raw = np.asarray(raw, dtype=float)
    rows = np.asarray(row_sums, dtype=np.int64)
    cols = np.asarray(col_sums, dtype=np.int64)
    out = np.floor(raw).astype(np.int64)
    frac = raw - out
    # floor() can already overshoot a column target when the target was
    # derived from ideal (pre-rounding) masses; shave those columns first
    over = out.sum(axis=0) - cols
    for l in np.flatnonzero(over > 0):
        while over[l] > 0:
            holders = np.flatnonzero(out[:, l] > 0)
            g = holders[np.argmin(frac[holders, l])]
            out[g, l] -= 1
            frac[g, l] += 1.0
            over[l] -= 1
    row_def = rows - out.sum(axis=1)
    col_def = cols - out.sum(axis=0)
    score = frac.copy()
    while row_def.sum() > 0:
        open_cells = (row_def[:, None] > 0) & (col_def[None, :] > 0)
        weight = np.where(open_cells, np.clip(score, 0.0, None), 0.0)
        total = weight.sum()
        if total <= 0:
            weight = open_cells.astype(float)
            total = weight.sum()
        flat = int(rng.choice(weight.size, p=(weight / total).ravel()))
        g, l = np.unravel_index(flat, weight.shape)
        out[g, l] += 1
        score[g, l] -= 1.0
        row_def[g] -= 1
        col_def[l] -= 1
    return out


# ---------------------------------------------------------------------------
# dependency inference: pairwise mutual information on main-bin tables


def _grouped_mi(table: ContingencyTable, n_left: int) -> float:
    """MI between the first n_left axes (jointly) and the remaining axes."""
    left: dict[tuple, float] = {}
    right: dict[tuple, float] = {}
    for key, p in table.cells.items():
        left[key[:n_left]] = left.get(key[:n_left], 0.0) + p
        right[key[n_left:]] = right.get(key[n_left:], 0.0) + p
    mi = 0.0
    for key, p in table.cells.items():
        if p > 0.0:
            mi += p * math.log(p / (left[key[:n_left]] * right[key[n_left:]]))
    return max(0.0, mi)


def pairwise_mi(data: Dataset, a: str, b: str, specs) -> float:
    """Empirical mutual information of two variables at main-bin resolution."""
    table = summarize_joint(data, StructuralComponent((a, b)), specs)
    return _grouped_mi(table, 1)


def _table_cells(ctx: ComponentContext, variables) -> int:
    n = 1
    for name in variables:
        kind = ctx.schema.kind(name)
        if isinstance(kind, Discrete):
            n *= len(kind.categories)
        else:
            spec = ctx.bin_specs.get(name)
            if spec is None:
                raise errors.MissingBinSpec(f"continuous variable {name!r} has no bin spec")
            n *= spec.n_main
    return n


def infer_components(ctx: ComponentContext) -> list[StructuralComponent]:
    """Pick the n most dependent variable pairs and grow them greedily.

    Pairs are ranked by empirical MI; a pair already contained in a chosen
    component is skipped. Each seed pair grows by the variable with the
    highest MI against the component's joint, as long as that MI stays at
    least half the seed pair's, up to four variables. Components may share
    variables. When ctx.batch_size is set, components whose contingency
    table would exceed batch_size/2 cells are not formed: a batch that
    small cannot express a correction for them.
    """
    names = list(ctx.schema.names)
    if len(names) < 2:
        raise errors.TooFewVariables("need at least 2 variables to infer components")
    scored: list[tuple[float, str, StructuralComponent]] = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            comp = StructuralComponent((names[i], names[j]))
            mi = pairwise_mi(ctx.real_data, names[i], names[j], ctx.bin_specs)
            scored.append((mi, comp.id, comp))
    scored.sort(key=lambda t: (-t[0], t[1]))
    cap = ctx.batch_size // 2 if ctx.batch_size is not None else None
    if cap is not None and all(_table_cells(ctx, c.variables) > cap for _, _, c in scored):
        cap = None  # budget too small to steer any pair; rank unrestricted
    chosen: list[StructuralComponent] = []
    for mi, _, pair in scored:
        if len(chosen) >= ctx.n_components:
            break
        if cap is not None and _table_cells(ctx, pair.variables) > cap:
            continue
        if any(set(pair.variables) <= set(c.variables) for c in chosen):
            continue
        chosen.append(_grow(ctx, pair, mi, cap))
    return chosen


def _grow(
    ctx: ComponentContext, pair: StructuralComponent, pair_mi: float, cap: int | None = None,
) -> StructuralComponent:
    current = list(pair.variables)
    while len(current) < 4:
        best_var, best_mi = None, -1.0
        for x in ctx.schema.names:
            if x in current:
                continue
            if cap is not None and _table_cells(ctx, tuple(current) + (x,)) > cap:
                continue
            table = summarize_joint(
                ctx.real_data, StructuralComponent(tuple(current) + (x,)), ctx.bin_specs)
            mi = _grouped_mi(table, len(current))
            if mi >= 0.5 * pair_mi - 1e-12 and mi > best_mi + 1e-12:
                best_var, best_mi = x, mi
        if best_var is None:
            break
        current.append(best_var)
    return StructuralComponent(tuple(current))


# ---------------------------------------------------------------------------
# batch construction


class _Group:
    """A set of interchangeable batch slots sharing one partial assignment."""

    __slots__ = ("assigns", "labels", "codes", "count")

    def __init__(self, assigns, labels, codes, count):
        self.assigns: dict[str, object] = assigns
        self.labels: dict[str, str] = labels
        self.codes: dict[str, int] = codes
        self.count: int = count


class _Lattice:
    """Occupied cells of the real dataset at main-bin resolution."""

    __slots__ = ("codes", "weights", "labels", "pos")

    def __init__(self, codes, weights, labels, pos):
        self.codes: np.ndarray = codes          # (n_occupied, n_vars) int64
        self.weights: np.ndarray = weights      # (n_occupied,) sums to 1
        self.labels: tuple[tuple[str, ...], ...] = labels
        self.pos: dict[str, int] = pos


def _real_lattice(ctx: ProposerContext) -> _Lattice:
    data = ctx.real_data
    cols = []
    labels = []
    for v in data.schema:
        if isinstance(v.kind, Discrete):
            cols.append(np.asarray(data.codes(v.name), dtype=np.int64))
            labels.append(tuple(v.kind.categories))
        else:
            spec = ctx.bin_specs[v.name]
            if spec is None:
                raise errors.MissingBinSpec(f"continuous variable {v.name!r} has no bin spec")
            cols.append(np.asarray(spec.assign_main(data.column(v.name)), dtype=np.int64))
            labels.append(spec.main_labels())
    dims = tuple(len(l) for l in labels)
    flat = np.ravel_multi_index(tuple(cols), dims)
    uniq, counts = np.unique(flat, return_counts=True)
    codes = np.stack(np.unravel_index(uniq, dims), axis=1).astype(np.int64)
    weights = counts.astype(float) / float(len(data))
    return _Lattice(codes, weights, tuple(labels),
                    {name: i for i, name in enumerate(data.schema.names)})


def _pick_target(report: DiscrepancyReport) -> str:
    units = report.units
    top = max(u.value for u in units.values())
    if top <= 1e-12:
        return min(units)
    return min(name for name, u in units.items() if u.value == top)


def _unit_constraints(
    ctx: ProposerContext, lattice: _Lattice,
) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], dict[str, tuple[int, np.ndarray]]]:
    """Corrective target and lattice index array per unit.

    Marginal targets are folded to main-bin resolution; within the refined
    bin the corrective sub-bin composition is returned separately for the
    sub-split stage, so the refined-resolution correction is preserved.
    """
    cons: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    sub_rows: dict[str, tuple[int, np.ndarray]] = {}
    for name, unit in ctx.report.marginals.items():
        r = np.array([c.real for c in unit.cells])
        s = np.array([c.synth for c in unit.cells])
        h, _ = ideal_batch_histogram(r, s, ctx.pool_size, ctx.batch_size)
        idx = lattice.codes[:, lattice.pos[name]]
        if isinstance(ctx.schema.kind(name), Discrete):
            cons[name] = (h, idx)
            continue
        spec = ctx.bin_specs[name]
        cells = spec.cells()
        if len(cells) != len(h):
            raise errors.UnitMismatch(
                f"{name!r}: report has {len(h)} cells, spec has {len(cells)}")
        target = np.zeros(spec.n_main)
        for cell, p in zip(cells, h):
            target[cell.main_index] += p
        if spec.refined is not None:
            row = np.array([p for cell, p in zip(cells, h) if cell.detail])
            if row.sum() > 0.0:
                sub_rows[name] = (spec.refined.main_index, row / row.sum())
        cons[name] = (target, idx)
    for cid, unit in ctx.report.joints.items():
        comp = next(c for c in ctx.components if c.id == cid)
        r = np.array([c.real for c in unit.cells])
        s = np.array([c.synth for c in unit.cells])
        h, _ = ideal_batch_histogram(r, s, ctx.pool_size, ctx.batch_size)
        index = {tuple(c.label): i for i, c in enumerate(unit.cells)}
        vcols = [lattice.pos[v] for v in comp.variables]
        idx = np.empty(len(lattice.codes), dtype=np.int64)
        target = np.append(h, 0.0)  # spare slot for keys outside the report
        for i, row in enumerate(lattice.codes):
            key = tuple(lattice.labels[c][row[c]] for c in vcols)
            idx[i] = index.get(key, len(h))
        cons[cid] = (target, idx)
    return cons, sub_rows


def _ipf(lattice: _Lattice, cons, target: str, sweeps: int = 40) -> np.ndarray:
    """Fit lattice weights to all unit targets; the target unit goes last."""
    order = sorted(name for name in cons if name != target) + [target]
    w = lattice.weights.copy()
    for _ in range(sweeps):
        worst = 0.0
        for name in order:
            t, idx = cons[name]
            proj = np.bincount(idx, weights=w, minlength=len(t))
            worst = max(worst, 0.5 * float(np.abs(proj - t).sum()))
            ratio = np.divide(t, proj, out=np.zeros_like(t), where=proj > 0.0)
            w = w * ratio[idx]
        if worst <= 1e-12:
            break
    if w.sum() <= 0.0:
        return lattice.weights.copy()
    return w


def _var_order(ctx: ProposerContext, target: str) -> list[str]:
    """Variables of high-delta units first; the targeted unit leads.

    Early variables are realised over coarse group partitions where
    flooring captures most of the allocation, so the joints that most
    need correcting see the least rounding noise. Within a unit, and for
    anything left over, schema order applies.
    """
    names = list(ctx.schema.names)
    all_units = {**ctx.report.marginals, **ctx.report.joints}

    def unit_vars(name: str) -> list[str]:
        if name in ctx.report.joints:
            comp = next(c for c in ctx.components if c.id == name)
            return [n for n in names if n in comp.variables]
        return [name]

    ranked = sorted(all_units, key=lambda n: (n != target, -all_units[n].value, n))
    order: list[str] = []
    for name in ranked:
        for v in unit_vars(name):
            if v not in order:
                order.append(v)
    return order + [n for n in names if n not in order]


class OracleProposer:
    """Greedy deterministic proposer; ignores k and guidance by design."""

    name = "oracle"

    def infer_components(self, ctx: ComponentContext) -> list[StructuralComponent]:
        return infer_components(ctx)

    def propose(self, ctx: ProposerContext) -> list[Proposal]:
        if ctx.real_data is None:
            raise errors.ConfigError("oracle needs real_data for batch composition")
        rng = np.random.default_rng(ctx.seed)
        target = _pick_target(ctx.report)
        lattice = _real_lattice(ctx)
        cons, sub_rows = _unit_constraints(ctx, lattice)
        w = _ipf(lattice, cons, target)
        groups = [_Group({}, {}, {}, ctx.batch_size)]
        for var in _var_order(ctx, target):
            groups = self._fill_variable(ctx, lattice, w, groups, var, rng)
        for var in ctx.schema.names:
            if isinstance(ctx.schema.kind(var), Continuous):
                groups = self._sub_split(ctx, groups, var, sub_rows.get(var), rng)
        return _merge_groups(groups, target)

    # -- main-resolution fill ------------------------------------------------

    def _fill_variable(self, ctx, lattice: _Lattice, w, groups, var, rng) -> list[_Group]:
        col = lattice.pos[var]
        labels_v = lattice.labels[col]
        n_labels = len(labels_v)
        marg = np.bincount(lattice.codes[:, col], weights=w, minlength=n_labels)
        rows = np.array([g.count for g in groups], dtype=np.int64)
        cols = _apportion(marg, int(rows.sum()), rng)
        assigned = list(groups[0].codes)
        if assigned:
            acols = [lattice.pos[v] for v in assigned]
            dims = tuple(len(lattice.labels[c]) for c in acols)
            cell_keys = np.ravel_multi_index(tuple(lattice.codes[:, c] for c in acols), dims)
            sort_idx = np.argsort(cell_keys, kind="stable")
            sorted_keys = cell_keys[sort_idx]
            fallback = marg / marg.sum() if marg.sum() > 0 else np.full(n_labels, 1.0 / n_labels)
            p_rows = []
            for g in groups:
                key = int(np.ravel_multi_index(
                    tuple([g.codes[v]] for v in assigned), dims)[0])
                lo = np.searchsorted(sorted_keys, key, side="left")
                hi = np.searchsorted(sorted_keys, key, side="right")
                sel = sort_idx[lo:hi]
                row = np.bincount(lattice.codes[sel, col], weights=w[sel], minlength=n_labels)
                total = row.sum()
                p_rows.append(row / total if total > 0.0 else fallback)
            p_matrix = np.stack(p_rows)
        else:
            base = marg / marg.sum() if marg.sum() > 0 else np.full(n_labels, 1.0 / n_labels)
            p_matrix = np.tile(base, (len(groups), 1))
        alloc = _transport_round(p_matrix * rows[:, None], rows, cols, rng)
        ranges = None
        if isinstance(ctx.schema.kind(var), Continuous):
            spec = ctx.bin_specs[var]
            ranges = list(zip(spec.edges, spec.edges[1:]))
        out: list[_Group] = []
        for gi, g in enumerate(groups):
            for li in np.flatnonzero(alloc[gi]):
                if ranges is not None:
                    value: object = Range(float(ranges[li][0]), float(ranges[li][1]))
                else:
                    value = FixedCategory(labels_v[li])
                out.append(_Group({**g.assigns, var: value},
                                  {**g.labels, var: labels_v[li]},
                                  {**g.codes, var: int(li)},
                                  int(alloc[gi, li])))
        return out

    # -- sub-bin resolution ----------------------------------------------------

    def _sub_split(self, ctx, groups, var, corrective, rng) -> list[_Group]:
        spec = ctx.bin_specs[var]
        detail = np.array(sub_detail(ctx.real_data, spec), dtype=float)
        if corrective is not None:
            bin_i, row = corrective
            detail[bin_i] = row
        main_index = {label: i for i, label in enumerate(spec.main_labels())}
        by_bin: dict[int, list[_Group]] = {}
        for g in groups:
            by_bin.setdefault(main_index[g.labels[var]], []).append(g)
        out: list[_Group] = []
        for i in sorted(by_bin):
            members = by_bin[i]
            rows = np.array([g.count for g in members], dtype=np.int64)
            cols = _apportion(detail[i], int(rows.sum()), rng)
            p_matrix = np.tile(detail[i], (len(members), 1))
            alloc = _transport_round(p_matrix * rows[:, None], rows, cols, rng)
            edges = np.linspace(spec.edges[i], spec.edges[i + 1], 9)
            for gi, g in enumerate(members):
                for j in np.flatnonzero(alloc[gi]):
                    out.append(_Group(
                        {**g.assigns, var: Range(float(edges[j]), float(edges[j + 1]))},
                        g.labels, g.codes, int(alloc[gi, j])))
        return out


def _assignment_key(assigns: dict[str, object]) -> tuple:
    parts = []
    for var in sorted(assigns):
        v = assigns[var]
        if isinstance(v, FixedCategory):
            parts.append((var, "c", v.value))
        else:
            parts.append((var, "r", v.lo, v.hi))
    return tuple(parts)


def _merge_groups(groups: list[_Group], target: str) -> list[Proposal]:
    merged: dict[tuple, tuple[dict, int]] = {}
    for g in groups:
        if g.count <= 0:
            continue
        key = _assignment_key(g.assigns)
        if key in merged:
            assigns, count = merged[key]
            merged[key] = (assigns, count + g.count)
        else:
            merged[key] = (dict(g.assigns), g.count)
    rationale = f"close the largest gap ({target})"
    return [
        Proposal(assigns, count, rationale)
        for key, (assigns, count) in sorted(merged.items(), key=lambda kv: kv[0])
    ]


def oracle_allocate(
    report: DiscrepancyReport,
    real_summaries: SummarySet,
    batch_size: int,
    *,
    schema: VariableSchema,
    bin_specs: dict[str, BinSpec | None] | None = None,
    pool_size: int = 0,
    components: tuple[StructuralComponent, ...] = (),
    seed: int = 0,
    real_data: Dataset | None = None,
) -> list[Proposal]:
    """One oracle batch allocation outside the loop (mainly for tests)."""
    ctx = ProposerContext(
        schema=schema,
        real_summaries=real_summaries,
        report=report,
        components=tuple(components),
        k=1,
        batch_size=batch_size,
        pool_size=pool_size,
        bin_specs=bin_specs or {},
        seed=seed,
        real_data=real_data,
    )
    return OracleProposer().propose(ctx)
