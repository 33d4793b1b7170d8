"""Shadow farm: build determinism, partition, oracle, binary round trips."""

import numpy as np
import pytest

from mialab.data import synthetic_mixture
from mialab.errors import FormatError, QueryBudgetError, UnsupportedVersionError
from mialab.farm import (
    ShadowFarm,
    TargetOracle,
    build_farm,
    farms_equal,
    hold_out_target,
    in_out_partition,
    load_farm,
    model_confidence,
    save_farm,
)
from mialab.nn import ArchDescriptor, forward_logits, softmax_conf
from mialab.training import ModelRecord, TrainConfig, record_accuracy


@pytest.fixture(scope="module")
def toy():
    # low-noise mixture: cleanly separable, so members fit their half exactly
    ds = synthetic_mixture(32, 4, 3, seed=0, noise=0.04, mean_low=0.15, mean_high=0.85)
    arch = ArchDescriptor(4, (6,), 3)
    cfg = TrainConfig(epochs=60, batch_size=8, lr=0.05, seed=0)
    farm = build_farm(ds, 8, arch, cfg, master_seed=77)
    return ds, arch, cfg, farm


class TestBuild:
    def test_sizes(self):
        ds = synthetic_mixture(8, 3, 2, seed=1, noise=0.1)
        arch = ArchDescriptor(3, (4,), 2)
        farm = build_farm(ds, 2, arch, TrainConfig(epochs=2, batch_size=4), master_seed=5)
        assert farm.n_models == 2
        assert list(farm.splits.sum(axis=1)) == [4, 4]

    def test_deterministic_per_master_seed(self, toy):
        ds, arch, cfg, farm = toy
        again = build_farm(ds, 8, arch, cfg, master_seed=77)
        assert farms_equal(farm, again)
        other = build_farm(ds, 8, arch, cfg, master_seed=78)
        assert not farms_equal(farm, other)

    def test_members_fit_training_half(self, toy):
        ds, _, _, farm = toy
        for i, rec in enumerate(farm.records):
            assert record_accuracy(rec, ds, np.flatnonzero(farm.splits[i])) == 1.0

    def test_needs_two_models(self, toy):
        ds, arch, cfg, _ = toy
        with pytest.raises(ValueError):
            build_farm(ds, 1, arch, cfg, master_seed=0)

    def test_parallel_build_matches_serial(self, toy):
        ds, arch, cfg, farm = toy
        parallel = build_farm(ds, 8, arch, cfg, master_seed=77, jobs=2)
        assert farms_equal(farm, parallel)


class TestPartition:
    def test_crafted_mask(self, toy):
        ds, arch, cfg, farm = toy
        crafted = ShadowFarm(
            fingerprint=farm.fingerprint,
            arch=farm.arch,
            splits=np.array([[True, False], [False, True]]),
            records=farm.records[:2],
            master_seed=0,
        )
        s_in, s_out = in_out_partition(crafted, 0)
        assert s_in == [farm.records[0]] and s_out == [farm.records[1]]

    def test_partition_is_exhaustive(self, toy):
        _, _, _, farm = toy
        for t in range(0, farm.n_points, 5):
            s_in, s_out = in_out_partition(farm, t)
            assert len(s_in) + len(s_out) == farm.n_models

    def test_index_bounds(self, toy):
        _, _, _, farm = toy
        with pytest.raises(IndexError):
            in_out_partition(farm, farm.n_points)

    def test_in_counts_binomial_range(self):
        ds = synthetic_mixture(400, 3, 2, seed=2, noise=0.2)
        arch = ArchDescriptor(3, (), 2)
        farm = build_farm(ds, 64, arch, TrainConfig(epochs=1, batch_size=64), master_seed=9)
        rng = np.random.default_rng(3)
        sizes = []
        for t in rng.integers(0, ds.n, 100):
            s_in, _ = in_out_partition(farm, int(t))
            sizes.append(len(s_in))
        assert 24 <= np.mean(sizes) <= 40


class TestOracle:
    def test_confidence_matches_direct_evaluation(self, toy):
        ds, _, _, farm = toy
        oracle, _ = hold_out_target(farm, 3)
        rec = farm.records[3]
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = rng.uniform(0, 1, ds.input_dim)
            y = int(rng.integers(3))
            direct = softmax_conf(forward_logits(rec.arch, rec._params, x), y)
            assert oracle.confidence(x, y) == direct

    def test_remaining_farm_excludes_target(self, toy):
        _, _, _, farm = toy
        _, rest = hold_out_target(farm, 3)
        assert rest.n_models == farm.n_models - 1
        assert farm.records[3] not in rest.records

    def test_query_counter(self, toy):
        ds, _, _, farm = toy
        oracle, _ = hold_out_target(farm, 0)
        x = ds.features[0]
        for i in range(5):
            oracle.confidence(x, 0)
        assert oracle.query_count == 5

    def test_budget_enforced(self, toy):
        ds, _, _, farm = toy
        oracle, _ = hold_out_target(farm, 0, budget=2)
        x = ds.features[0]
        oracle.confidence(x, 0)
        oracle.confidence(x, 0)
        with pytest.raises(QueryBudgetError):
            oracle.confidence(x, 0)

    def test_oracle_hides_parameters(self, toy):
        _, _, _, farm = toy
        oracle, _ = hold_out_target(farm, 0)
        assert not hasattr(oracle, "params")
        assert oracle.hidden_param_reads == 0

    def test_shadow_access_is_counted(self, toy):
        ds, _, _, farm = toy
        rec = farm.records[1]
        before = rec.access_count
        model_confidence(rec, ds.features[0], 0)
        assert rec.access_count == before + 1


class TestStore:
    def test_round_trip(self, toy, tmp_path):
        _, _, _, farm = toy
        path = tmp_path / "farm.bin"
        save_farm(farm, path)
        loaded = load_farm(path)
        assert farms_equal(farm, loaded)

    def test_truncated_file(self, toy, tmp_path):
        _, _, _, farm = toy
        path = tmp_path / "farm.bin"
        save_farm(farm, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError, match="truncated"):
            load_farm(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "farm.bin"
        path.write_bytes(b"NOTAFARM" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_farm(path)

    def test_version_mismatch(self, toy, tmp_path):
        _, _, _, farm = toy
        path = tmp_path / "farm.bin"
        save_farm(farm, path)
        blob = bytearray(path.read_bytes())
        blob[8] = 99  # version word
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersionError):
            load_farm(path)

    def test_trailing_garbage_rejected(self, toy, tmp_path):
        _, _, _, farm = toy
        path = tmp_path / "farm.bin"
        save_farm(farm, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load_farm(path)

    def test_byte_identical_saves(self, toy, tmp_path):
        _, _, _, farm = toy
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_farm(farm, a)
        save_farm(farm, b)
        assert a.read_bytes() == b.read_bytes()


class TestRecord:
    def test_params_frozen(self, toy):
        _, _, _, farm = toy
        rec = farm.records[0]
        with pytest.raises(ValueError):
            rec._params.weights[0][0, 0] = 1.0

    def test_equality(self, toy):
        _, _, _, farm = toy
        assert farm.records[0] == farm.records[0]
        assert farm.records[0] != farm.records[1]
