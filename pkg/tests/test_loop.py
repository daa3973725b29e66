"""Loop mechanics: sampling, accretion, logging, checkpoint and resume."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest

from statsynth import errors
from statsynth.loop import (
    LoopConfig,
    LoopState,
    checkpoint,
    resume,
    run,
    sample_batch,
    sample_from_proposal,
)
from statsynth.oracle import OracleProposer
from statsynth.proposals import FixedCategory, Proposal, ProposerContext, Range
from statsynth.reference import EcommerceParams, generate
from statsynth.schema import Dataset, load_csv


@pytest.fixture(scope="module")
def real_small():
    return generate(EcommerceParams(), 400, seed=3)


def small_cfg(**overrides) -> LoopConfig:
    base = dict(iterations=4, proposals_per_iter=3, batch_size=40,
                n_components=2, seed=5)
    base.update(overrides)
    return LoopConfig(**base)


# ---------------------------------------------------------------------------
# sampling


def test_sample_all_fixed_yields_identical_records(tiny_schema):
    p = Proposal({"color": FixedCategory("red"), "size": Range(4.0, 4.0)}, num=3)
    rng = np.random.default_rng(0)
    records = sample_from_proposal(p, tiny_schema, rng)
    assert len(records) == 3
    assert all(r.values == ("red", 4.0) for r in records)


def test_sample_degenerate_range_is_constant(tiny_schema):
    p = Proposal({"color": FixedCategory("blue"), "size": Range(7.5, 7.5)}, num=10)
    records = sample_from_proposal(p, tiny_schema, np.random.default_rng(1))
    assert {r.values[1] for r in records} == {7.5}


def test_sample_uniform_range_mean(tiny_schema):
    # mean of U(0, 10) is 5; with 1e5 draws the error is ~0.01
    p = Proposal({"color": FixedCategory("red"), "size": Range(0.0, 10.0)},
                 num=100_000)
    records = sample_from_proposal(p, tiny_schema, np.random.default_rng(2))
    values = np.array([r.values[1] for r in records])
    assert abs(values.mean() - 5.0) < 0.1
    assert values.min() >= 0.0 and values.max() <= 10.0


def test_sample_batch_orders_proposals(tiny_schema):
    proposals = [
        Proposal({"color": FixedCategory("red"), "size": Range(1.0, 1.0)}, num=2),
        Proposal({"color": FixedCategory("blue"), "size": Range(2.0, 2.0)}, num=1),
    ]
    batch = sample_batch(tiny_schema, proposals, np.random.default_rng(3))
    assert list(batch.column("color")) == ["red", "red", "blue"]


# ---------------------------------------------------------------------------
# run basics


def test_pool_grows_by_batch_size_each_iteration(real_small):
    cfg = small_cfg()
    pool, history = run(real_small, cfg, OracleProposer())
    assert len(pool) == cfg.iterations * cfg.batch_size
    assert [row["iteration"] for row in history] == [1, 2, 3, 4]
    for row in history:
        assert row["w"] == 1.0 / row["iteration"]


def test_single_iteration_on_two_binary_schema(two_binary_schema):
    rng = np.random.default_rng(9)
    rows = [("A0" if rng.random() < 0.7 else "A1",
             "B0" if rng.random() < 0.4 else "B1") for _ in range(300)]
    real = Dataset.from_records(two_binary_schema, rows)
    cfg = LoopConfig(iterations=1, proposals_per_iter=2, batch_size=100,
                     n_components=1, seed=1)
    pool, history = run(real, cfg, OracleProposer())
    assert len(pool) == 100
    assert history[-1]["mean_tvd"] <= 0.1


def test_mean_tvd_decreases_over_run(real_small):
    _, history = run(real_small, small_cfg(iterations=6), OracleProposer())
    assert history[-1]["mean_tvd"] < history[0]["mean_tvd"]


def test_full_metrics_follow_cadence(real_small):
    _, history = run(real_small, small_cfg(iterations=4, full_metrics_every=2),
                     OracleProposer())
    assert ["full" in row for row in history] == [False, True, False, True]
    full = history[-1]["full"]
    # the full suite and the per-iteration row share one evaluation pipeline
    assert math.isclose(full["overall"]["mean_tvd"], history[-1]["mean_tvd"],
                        rel_tol=0, abs_tol=1e-12)


def test_config_validation():
    with pytest.raises(errors.ConfigError):
        LoopConfig(iterations=0)
    with pytest.raises(errors.ConfigError):
        LoopConfig(batch_size=3, proposals_per_iter=5)
    with pytest.raises(errors.ConfigError):
        LoopConfig(tolerance=0.2, threshold=0.05)
    with pytest.raises(errors.ConfigError):
        LoopConfig(seed=-1)


def test_batch_contract_enforced(real_small):
    class ShortchangingProposer(OracleProposer):
        def propose(self, ctx: ProposerContext):
            proposals = super().propose(ctx)
            trimmed = Proposal(proposals[0].assignments, proposals[0].num - 1)
            return [trimmed] + proposals[1:]

    with pytest.raises(errors.ProposerError):
        run(real_small, small_cfg(iterations=1), ShortchangingProposer())


# ---------------------------------------------------------------------------
# logs


def test_run_writes_logs(tmp_path, real_small):
    cfg = small_cfg(iterations=3, full_metrics_every=2)
    pool, history = run(real_small, cfg, OracleProposer(), tmp_path)
    disk_pool = load_csv(tmp_path / "pool.csv", real_small.schema)
    assert disk_pool.equals(pool)
    rows = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert rows == history
    conv = (tmp_path / "convergence.csv").read_text().splitlines()
    header = conv[0].split(",")
    assert header[:2] == ["iteration", "mean_tvd"]
    assert set(header[2:]) == set(history[0]["units"])
    assert len(conv) == 1 + cfg.iterations
    comps = json.loads((tmp_path / "components.json").read_text())
    assert [c["iteration"] for c in comps] == [1, 2, 3]


def test_identity_rows_mix_exactly(tmp_path, real_small):
    run(real_small, small_cfg(iterations=4), OracleProposer(), tmp_path)
    rows = [json.loads(l) for l in (tmp_path / "identity.jsonl").read_text().splitlines()]
    assert [r["iteration"] for r in rows] == [1, 2, 3, 4]
    for row in rows:
        w = row["w"]
        assert w == 1.0 / row["iteration"]
        for unit in row["units"].values():
            before = np.array(unit["pool_before"])
            batch = np.array(unit["batch"])
            after = np.array(unit["pool_after"])
            np.testing.assert_allclose((1 - w) * before + w * batch, after,
                                       rtol=0, atol=1e-9)


def test_deterministic_reruns_are_byte_identical(tmp_path, real_small):
    cfg = small_cfg(iterations=3)
    run(real_small, cfg, OracleProposer(), tmp_path / "a")
    run(real_small, cfg, OracleProposer(), tmp_path / "b")
    for name in ("pool.csv", "metrics.jsonl", "convergence.csv",
                 "identity.jsonl", "components.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_seed_changes_output(tmp_path, real_small):
    run(real_small, small_cfg(iterations=2, seed=5), OracleProposer(), tmp_path / "a")
    run(real_small, small_cfg(iterations=2, seed=6), OracleProposer(), tmp_path / "b")
    assert (tmp_path / "a" / "pool.csv").read_bytes() != \
        (tmp_path / "b" / "pool.csv").read_bytes()


# ---------------------------------------------------------------------------
# checkpointing


def test_checkpoint_twice_is_identical(tmp_path, real_small):
    cfg = small_cfg()
    state = LoopState(iteration=1, pool=real_small,
                      history=[{"iteration": 1, "mean_tvd": 0.5}])
    checkpoint(state, tmp_path, cfg)
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    checkpoint(state, tmp_path, cfg)
    second = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert first == second


def test_resume_reproduces_uninterrupted_run(tmp_path, real_small):
    cfg = small_cfg(iterations=6)
    run(real_small, cfg, OracleProposer(), tmp_path / "straight")

    half = small_cfg(iterations=3)
    run(real_small, half, OracleProposer(), tmp_path / "resumed")
    pool, history = run(real_small, cfg, OracleProposer(), tmp_path / "resumed",
                        resume_from_checkpoint=True)
    assert len(pool) == 6 * cfg.batch_size
    assert [r["iteration"] for r in history] == [1, 2, 3, 4, 5, 6]
    for name in ("pool.csv", "metrics.jsonl", "convergence.csv",
                 "identity.jsonl", "components.json"):
        assert (tmp_path / "straight" / name).read_bytes() == \
            (tmp_path / "resumed" / name).read_bytes(), name


def test_resume_from_empty_directory(tmp_path, real_small):
    (tmp_path / "checkpoint").mkdir()
    with pytest.raises(errors.CorruptCheckpoint):
        run(real_small, small_cfg(), OracleProposer(), tmp_path,
            resume_from_checkpoint=True)


def test_resume_detects_tampered_pool(tmp_path, real_small):
    run(real_small, small_cfg(iterations=2), OracleProposer(), tmp_path)
    target = tmp_path / "checkpoint" / "pool.csv"
    target.write_text(target.read_text().replace("Electronics", "Gadgets", 1))
    with pytest.raises(errors.CorruptCheckpoint):
        resume(tmp_path / "checkpoint", real_small.schema, small_cfg(iterations=2))


def test_resume_rejects_config_drift(tmp_path, real_small):
    run(real_small, small_cfg(iterations=2), OracleProposer(), tmp_path)
    with pytest.raises(errors.ConfigError):
        run(real_small, small_cfg(iterations=4, seed=99), OracleProposer(),
            tmp_path, resume_from_checkpoint=True)


def test_resume_rejects_shrunk_iteration_budget(tmp_path, real_small):
    run(real_small, small_cfg(iterations=3), OracleProposer(), tmp_path)
    with pytest.raises(errors.ConfigError):
        run(real_small, small_cfg(iterations=2), OracleProposer(), tmp_path,
            resume_from_checkpoint=True)


def test_proposer_failure_leaves_checkpoint_intact(tmp_path, real_small):
    class FailsAtFour(OracleProposer):
        def propose(self, ctx: ProposerContext):
            if ctx.pool_size >= 3 * 40:
                raise errors.LlmUnavailable("endpoint went away")
            return super().propose(ctx)

    cfg = small_cfg(iterations=6)
    with pytest.raises(errors.LlmUnavailable):
        run(real_small, cfg, FailsAtFour(), tmp_path)
    state = resume(tmp_path / "checkpoint", real_small.schema, cfg)
    assert state.iteration == 3
    assert len(state.pool) == 3 * cfg.batch_size
    # and the run is continuable once the proposer recovers
    pool, history = run(real_small, cfg, OracleProposer(), tmp_path,
                        resume_from_checkpoint=True)
    assert len(pool) == 6 * cfg.batch_size
