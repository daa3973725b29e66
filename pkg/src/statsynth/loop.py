"""Iterative synthesis loop: component inference, discrepancy, sampling.

Each iteration infers structural components, summarizes the real data and
the cumulative pool, computes the per-unit discrepancy report against the
pool BEFORE the new batch, asks the proposer for a batch plan, samples it,
and accretes. Records are never removed. All randomness derives from
per-iteration seeds spawned as SeedSequence((seed, t, purpose)), so a
resumed run consumes exactly the streams an uninterrupted run would.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .discrepancy import DiscrepancyReport, compute_report
from .metrics import metric_suite
from .proposals import (
    ComponentContext,
    FixedCategory,
    Proposal,
    ProposerContext,
    validate_proposal,
)
from .schema import Dataset, Record, VariableSchema, concat, load_csv, save_csv
from .summaries import (
    SummarySet,
    compute_summaries,
    evaluation_summaries,
    fit_all_bins,
    refine_all_bins,
)


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 100
    proposals_per_iter: int = 5
    batch_size: int = 200
    n_components: int = 3
    seed: int = 0
    tolerance: float = 0.01
    threshold: float = 0.05
    n_bins: int = 6
    full_metrics_every: int = 10
    cache_components: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise errors.ConfigError("iterations must be >= 1")
        if self.proposals_per_iter < 1:
            raise errors.ConfigError("proposals_per_iter must be >= 1")
        if self.batch_size < self.proposals_per_iter:
            raise errors.ConfigError("batch_size must be >= proposals_per_iter")
        if not 0 < self.tolerance < self.threshold:
            raise errors.ConfigError("tolerance must lie in (0, threshold)")
        if self.n_components < 1:
            raise errors.ConfigError("n_components must be >= 1")
        if self.seed < 0:
            raise errors.ConfigError("seed must be >= 0")
        if self.n_bins < 2:
            raise errors.ConfigError("n_bins must be >= 2")
        if self.full_metrics_every < 0:
            raise errors.ConfigError("full_metrics_every must be >= 0")


@dataclass
class LoopState:
    """Mutable progress of one run; the checkpoint payload."""

    iteration: int
    pool: Dataset
    history: list[dict] = field(default_factory=list)
    report: DiscrepancyReport | None = None


def _iteration_seed(seed: int, t: int, purpose: int) -> int:
    return int(np.random.SeedSequence((seed, t, purpose)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# sampling


def sample_from_proposal(proposal: Proposal, schema: VariableSchema,
                         rng: np.random.Generator) -> list[Record]:
    """Exactly proposal.num records: categories verbatim, ranges uniform."""
    columns = []
    for name in schema.names:
        a = proposal.assignments[name]
        if isinstance(a, FixedCategory):
            columns.append([a.value] * proposal.num)
        elif a.lo == a.hi:
            columns.append([a.lo] * proposal.num)
        else:
            columns.append(rng.uniform(a.lo, a.hi, size=proposal.num).tolist())
    return [Record(tuple(col[i] for col in columns)) for i in range(proposal.num)]


def sample_batch(schema: VariableSchema, proposals: list[Proposal],
                 rng: np.random.Generator) -> Dataset:
    """All proposals realized in order (deterministic merge)."""
    records: list[Record] = []
    for p in proposals:
        records.extend(sample_from_proposal(p, schema, rng))
    return Dataset.from_records(schema, records)


def _check_batch(proposals: list[Proposal], schema: VariableSchema, batch_size: int) -> None:
    # last line of defense: nothing unvalidated reaches the pool
    for p in proposals:
        validate_proposal(p, schema)
    total = sum(p.num for p in proposals)
    if total != batch_size:
        raise errors.ProposerError(
            f"proposals allocate {total} records, batch needs {batch_size}")


# ---------------------------------------------------------------------------
# checkpointing


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


_ECHO_FIELDS = ("proposals_per_iter", "batch_size", "n_components", "seed",
                "tolerance", "threshold", "n_bins", "cache_components")


def checkpoint(state: LoopState, directory: str | Path, cfg: LoopConfig) -> None:
    """Write pool + state with a content-hash manifest; same state, same bytes."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        save_csv(state.pool, directory / "pool.csv")
        doc = {
            "iteration": state.iteration,
            "config": {name: getattr(cfg, name) for name in _ECHO_FIELDS},
            "history": state.history,
        }
        _atomic_write(directory / "state.json", json.dumps(doc, sort_keys=True))
        manifest = {"files": {name: _sha256(directory / name)
                              for name in ("pool.csv", "state.json")}}
        _atomic_write(directory / "manifest.json", json.dumps(manifest, sort_keys=True))
    except OSError as exc:
        raise errors.IoFailure(f"cannot write checkpoint to {directory}: {exc}") from exc


def resume(directory: str | Path, schema: VariableSchema, cfg: LoopConfig) -> LoopState:
    """Load and verify a checkpoint; the config must match the stored echo."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise errors.CorruptCheckpoint(f"no checkpoint manifest in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
        files = manifest["files"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise errors.CorruptCheckpoint(f"unreadable manifest in {directory}") from exc
    for name, expect in files.items():
        path = directory / name
        if not path.exists():
            raise errors.CorruptCheckpoint(f"checkpoint file missing: {name}")
        if _sha256(path) != expect:
            raise errors.CorruptCheckpoint(f"checkpoint hash mismatch for {name}")
    try:
        doc = json.loads((directory / "state.json").read_text())
        iteration = int(doc["iteration"])
        echo = doc["config"]
        history = doc["history"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise errors.CorruptCheckpoint(f"unreadable state in {directory}") from exc
    for name in _ECHO_FIELDS:
        if echo.get(name) != getattr(cfg, name):
            raise errors.ConfigError(
                f"checkpoint was written with {name}={echo.get(name)!r}, "
                f"resume requested {getattr(cfg, name)!r}")
    if cfg.iterations < iteration:
        raise errors.ConfigError(
            f"checkpoint is at iteration {iteration}, beyond iterations={cfg.iterations}")
    pool = load_csv(directory / "pool.csv", schema)
    if len(pool) != iteration * cfg.batch_size:
        raise errors.CorruptCheckpoint(
            f"pool has {len(pool)} records, expected {iteration * cfg.batch_size}")
    return LoopState(iteration=iteration, pool=pool, history=history)


# ---------------------------------------------------------------------------
# run outputs


class _Outputs:
    """Log writers for one output directory.

    metrics.jsonl and identity.jsonl are append-only; convergence.csv and
    components.json are derived from history and rewritten per iteration,
    which makes resume trivially consistent.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.checkpoint_dir = self.root / "checkpoint"

    def reset(self) -> None:
        for name in ("metrics.jsonl", "identity.jsonl", "convergence.csv",
                     "components.json", "pool.csv"):
            (self.root / name).unlink(missing_ok=True)
        if self.checkpoint_dir.exists():
            for p in self.checkpoint_dir.iterdir():
                p.unlink()

    def rewind(self, history: list[dict], iteration: int) -> None:
        """Reconstruct logs to the checkpointed iteration."""
        with open(self.root / "metrics.jsonl", "w") as fh:
            for row in history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        self.rewrite_derived(history)
        identity = self.root / "identity.jsonl"
        if identity.exists():
            kept = [line for line in identity.read_text().splitlines()
                    if line and json.loads(line)["iteration"] <= iteration]
            _atomic_write(identity, "".join(line + "\n" for line in kept))

    def append_metrics(self, row: dict) -> None:
        with open(self.root / "metrics.jsonl", "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    def append_identity(self, row: dict) -> None:
        with open(self.root / "identity.jsonl", "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    def rewrite_derived(self, history: list[dict]) -> None:
        if not history:
            return
        # sorted so the header survives a JSON round-trip through state.json
        units = sorted(history[0]["units"])
        lines = ["iteration,mean_tvd," + ",".join(units)]
        for row in history:
            cells = [str(row["iteration"]), repr(row["mean_tvd"])]
            cells += [repr(row["units"][u]) if u in row["units"] else "" for u in units]
            lines.append(",".join(cells))
        _atomic_write(self.root / "convergence.csv", "".join(l + "\n" for l in lines))
        comps = [{"iteration": row["iteration"], "components": row["components"]}
                 for row in history]
        _atomic_write(self.root / "components.json", json.dumps(comps, sort_keys=True))


def _identity_row(t: int, before: SummarySet, batch: SummarySet,
                  after: SummarySet) -> dict:
    units: dict[str, dict] = {}
    for name, table in after.marginals.items():
        units[name] = {
            "labels": list(table.labels),
            "pool_before": list(before.marginals[name].proportions),
            "batch": list(batch.marginals[name].proportions),
            "pool_after": list(table.proportions),
        }
    for cid, table in after.joints.items():
        keys = sorted(set(before.joints[cid].cells)
                      | set(batch.joints[cid].cells) | set(table.cells))
        units[cid] = {
            "labels": [list(k) for k in keys],
            "pool_before": [before.joints[cid].proportion(k) for k in keys],
            "batch": [batch.joints[cid].proportion(k) for k in keys],
            "pool_after": [table.proportion(k) for k in keys],
        }
    return {"iteration": t, "w": 1.0 / t, "units": units}


# ---------------------------------------------------------------------------
# the loop


def run(
    real: Dataset,
    cfg: LoopConfig,
    proposer,
    out_dir: str | Path | None = None,
    *,
    guidance: str = "",
    resume_from_checkpoint: bool = False,
) -> tuple[Dataset, list[dict]]:
    """Execute the synthesis loop; returns the final pool and metric history.

    With out_dir set, every iteration appends to the run logs and refreshes
    the checkpoint, so a proposer failure at iteration t leaves iteration
    t-1 fully recoverable.
    """
    if len(real) == 0:
        raise errors.EmptyDataset("need a non-empty real dataset")
    schema = real.schema
    outputs = _Outputs(out_dir) if out_dir is not None else None
    state = LoopState(iteration=0, pool=Dataset.empty(schema))
    if resume_from_checkpoint:
        if outputs is None:
            raise errors.ConfigError("resume needs an output directory")
        state = resume(outputs.checkpoint_dir, schema, cfg)
        outputs.rewind(state.history, state.iteration)
    elif outputs is not None:
        outputs.reset()

    base = fit_all_bins(real, cfg.n_bins)
    real_marginals = compute_summaries(real, base)
    components = None
    for t in range(state.iteration + 1, cfg.iterations + 1):
        if components is None or not cfg.cache_components:
            components = proposer.infer_components(ComponentContext(
                schema, real, real_marginals, base,
                n_components=cfg.n_components,
                seed=_iteration_seed(cfg.seed, t, 1),
                batch_size=cfg.batch_size,
            ))
        specs = refine_all_bins(base, real, state.pool)
        real_sum = compute_summaries(real, specs, components)
        pool_sum = compute_summaries(state.pool, specs, components)
        steering = compute_report(real_sum, pool_sum)
        proposals = proposer.propose(ProposerContext(
            schema=schema,
            real_summaries=real_sum,
            report=steering,
            components=tuple(components),
            k=cfg.proposals_per_iter,
            batch_size=cfg.batch_size,
            pool_size=len(state.pool),
            bin_specs=specs,
            seed=_iteration_seed(cfg.seed, t, 5),
            guidance=guidance,
            real_data=real,
        ))
        _check_batch(proposals, schema, cfg.batch_size)
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, t, 6)))
        batch = sample_batch(schema, proposals, rng)
        pool = concat(state.pool, batch)

        real_eval, pool_eval, _ = evaluation_summaries(real, pool, components, cfg.n_bins)
        reported = compute_report(real_eval, pool_eval)
        row: dict = {
            "iteration": t,
            "w": 1.0 / t,
            "mean_tvd": reported.mean_tvd,
            "units": {name: unit.value for name, unit in reported.units.items()},
            "components": [list(c.variables) for c in components],
        }
        # cadence-anchored (not horizon-anchored) so a resumed run logs the
        # same rows an uninterrupted one would
        if cfg.full_metrics_every and t % cfg.full_metrics_every == 0:
            row["full"] = metric_suite(real, pool, components, cfg.n_bins)
        state.history.append(row)
        state.report = reported

        if outputs is not None:
            batch_sum = compute_summaries(batch, specs, components)
            after_sum = compute_summaries(pool, specs, components)
            outputs.append_metrics(row)
            outputs.append_identity(_identity_row(t, pool_sum, batch_sum, after_sum))
            outputs.rewrite_derived(state.history)
        state.pool = pool
        state.iteration = t
        if outputs is not None:
            checkpoint(state, outputs.checkpoint_dir, cfg)

    if outputs is not None:
        save_csv(state.pool, outputs.root / "pool.csv")
    return state.pool, state.history
