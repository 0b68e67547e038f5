import struct
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambada_lab import errors, lcf, scan
from lambada_lab.config import SimConfig
from lambada_lab.substrate import CloudSim

MIB = 1024 * 1024


def make_file(groups, names=("a", "b")):
    schema = lcf.Schema(tuple((n, lcf.INT64) for n in names))
    return lcf.write_file(schema, groups), schema


def run_scan(sim, paths, predicates, config=None, prune=True, bucket="data"):
    def main():
        return (
            yield from scan.execute_scan(
                sim, sim.driver(), bucket, paths, predicates, config, prune
            )
        )

    return sim.loop.run_task(main())


def seeded_sim(files):
    sim = CloudSim(SimConfig())
    for key, data in files.items():
        sim.store.seed_object("data", key, data)
    return sim


class TestPruning:
    def test_disjoint_interval_prunes_group(self):
        data, _ = make_file([[[10, 20], [0, 0]], [[25, 30], [0, 0]]])
        footer = lcf.read_footer(data)
        preds = scan.PredicateSet((("a", 25, 30),), ("a",))
        assert scan.prune_row_groups(footer, preds) == [1]

    def test_empty_predicates_keep_everything(self):
        data, _ = make_file([[[1], [2]], [[3], [4]]])
        footer = lcf.read_footer(data)
        preds = scan.PredicateSet((), ("a",))
        assert scan.prune_row_groups(footer, preds) == [0, 1]

    def test_unknown_predicate_column(self):
        data, _ = make_file([[[1], [2]]])
        footer = lcf.read_footer(data)
        with pytest.raises(errors.UnknownColumn):
            scan.prune_row_groups(footer, scan.PredicateSet((("z", 0, 1),), ("a",)))

    def test_boundary_touching_interval_survives(self):
        data, _ = make_file([[[10, 20], [0, 0]]])
        footer = lcf.read_footer(data)
        preds = scan.PredicateSet((("a", 20, 99),), ("a",))
        assert scan.prune_row_groups(footer, preds) == [0]


class TestPlanner:
    def _footer(self, n_groups, n_cols, rows=4):
        names = tuple(f"c{i}" for i in range(n_cols))
        groups = [
            [[g * 100 + i for i in range(rows)] for _ in names] for g in range(n_groups)
        ]
        data, _ = make_file(groups, names)
        return lcf.read_footer(data), names

    def test_pipelined_groups_are_level_three(self):
        footer, names = self._footer(8, 4)
        plan = scan.plan_downloads(footer, list(range(8)), names, scan.ScanConfig())
        assert len(plan) == 32
        assert {item.level for item in plan} == {3}

    def test_single_group_is_level_two_on_distinct_slots(self):
        footer, names = self._footer(1, 4)
        plan = scan.plan_downloads(footer, [0], names, scan.ScanConfig())
        assert {item.level for item in plan} == {2}
        assert sorted(item.slot for item in plan) == [0, 1, 2, 3]

    def test_idle_connections_trigger_chunk_splitting(self):
        chunk_len = MIB
        footer = lcf.FileFooter(
            lcf.Schema((("x", lcf.INT64),)),
            (
                lcf.RowGroupMeta(
                    chunk_len // 8,
                    (
                        lcf.ColumnChunkMeta(
                            0, chunk_len, chunk_len, lcf.ENC_PLAIN, lcf.ColumnStats(0, 0)
                        ),
                    ),
                ),
            ),
        )
        cfg = scan.ScanConfig(chunk_size_bytes=256 * 1024)
        plan = scan.plan_downloads(footer, [0], ("x",), cfg)
        assert len(plan) == 4
        assert {item.level for item in plan} == {1}
        assert [item.start for item in plan] == [0, 256 * 1024, 512 * 1024, 768 * 1024]

    def test_saturated_levels_suppress_splitting(self):
        footer, names = self._footer(8, 4)
        plan = scan.plan_downloads(
            footer, list(range(8)), names, scan.ScanConfig(chunk_size_bytes=64 * 1024)
        )
        assert all(item.level != 1 for item in plan)

    def test_plan_dump_is_json(self):
        import json

        footer, names = self._footer(2, 2)
        plan = scan.plan_downloads(footer, [0, 1], names, scan.ScanConfig())
        parsed = json.loads(scan.plan_dump(plan))
        assert len(parsed) == 4
        assert parsed[0]["level"] == 3


class TestExecute:
    def test_matches_direct_reader_without_predicates(self):
        groups = [[[1, 2, 3], [4, 5, 6]], [[7, 8], [9, 10]]]
        data, _ = make_file(groups)
        sim = seeded_sim({"f.lcf": data})
        preds = scan.PredicateSet((), ("a", "b"))
        batches, report = run_scan(sim, ["f.lcf"], preds)
        merged = [sum((b[i] for b in batches), []) for i in range(2)]
        assert merged == lcf.read_table(data)
        assert report.rows == 5
        assert report.requests == 1 + 4  # footer + 2 groups x 2 columns

    def test_residual_row_filter(self):
        data, _ = make_file([[[1, 5, 9], [10, 20, 30]]])
        sim = seeded_sim({"f.lcf": data})
        preds = scan.PredicateSet((("a", 4, 6),), ("b",))
        batches, report = run_scan(sim, ["f.lcf"], preds)
        assert batches == [[[20]]]
        assert report.rows == 1

    def test_fully_pruned_file_costs_footer_only(self):
        data, _ = make_file([[[10, 20], [0, 0]]])
        sim = seeded_sim({"f.lcf": data})
        preds = scan.PredicateSet((("a", 500, 600),), ("a",))
        batches, report = run_scan(sim, ["f.lcf"], preds)
        assert batches == []
        assert report.requests == 1
        assert report.groups_pruned == 1

    def test_request_cost_reconciles_with_ledger(self):
        groups = [[[i, i + 1], [i, i]] for i in range(0, 12, 2)]
        data, _ = make_file(groups)
        sim = seeded_sim({"f.lcf": data})
        before = sim.ledger.request_usd
        preds = scan.PredicateSet((("a", 0, 100),), ("a", "b"))
        _, report = run_scan(sim, ["f.lcf"], preds)
        assert sim.ledger.request_usd - before == report.request_usd
        assert report.worker_usd == 0  # driver context is not billed

    def test_thousand_chunk_request_cost(self):
        # 64 MiB single plain chunk of zeros scanned at the 64 KiB floor:
        # 1024 data requests at $0.4/M is $4.096e-4 on the nose.
        chunk_len = 64 * MIB
        footer = lcf.FileFooter(
            lcf.Schema((("x", lcf.INT64),)),
            (
                lcf.RowGroupMeta(
                    chunk_len // 8,
                    (
                        lcf.ColumnChunkMeta(
                            0, chunk_len, chunk_len, lcf.ENC_PLAIN, lcf.ColumnStats(0, 0)
                        ),
                    ),
                ),
            ),
        )
        raw_footer = lcf.encode_footer(footer)
        data = bytes(chunk_len) + raw_footer + struct.pack("<I", len(raw_footer)) + lcf.MAGIC
        sim = seeded_sim({"big.lcf": data})
        preds = scan.PredicateSet((), ("x",))
        cfg = scan.ScanConfig(chunk_size_bytes=64 * 1024)
        _, report = run_scan(sim, ["big.lcf"], preds, cfg)
        data_requests = report.requests - 1
        assert data_requests == 1024
        price = sim.prices.request_price("read")
        assert data_requests * price == Fraction("4.096e-4")

    def test_requests_monotone_in_chunk_size(self):
        chunk_len = MIB
        values = list(range(chunk_len // 8))
        data = lcf.write_file(lcf.Schema((("x", lcf.INT64),)), [[values]])
        counts = []
        for size in (64 * 1024, 128 * 1024, 256 * 1024):
            sim = seeded_sim({"f.lcf": data})
            preds = scan.PredicateSet((), ("x",))
            _, report = run_scan(sim, ["f.lcf"], preds, scan.ScanConfig(chunk_size_bytes=size))
            counts.append(report.requests)
        assert counts == sorted(counts, reverse=True)
        assert counts[0] > counts[-1]

    def test_duration_monotone_in_connections(self):
        groups = [[[g] * 4096 for _ in range(4)] for g in range(4)]
        names = ("c0", "c1", "c2", "c3")
        data, _ = make_file(groups, names)
        durations = []
        for conns in (1, 2, 4):
            sim = seeded_sim({"f.lcf": data})
            preds = scan.PredicateSet((), names)
            _, report = run_scan(
                sim, ["f.lcf"], preds, scan.ScanConfig(max_connections=conns)
            )
            durations.append(report.duration_us)
        assert durations == sorted(durations, reverse=True)

    def test_decode_cost_slows_scan(self):
        data, _ = make_file([[[1] * 1000, [2] * 1000]])
        preds = scan.PredicateSet((), ("a", "b"))
        fast = seeded_sim({"f.lcf": data})
        _, fast_report = run_scan(fast, ["f.lcf"], preds)
        slow = CloudSim(SimConfig(decode_cycles_per_byte=Fraction(100)))
        slow.store.seed_object("data", "f.lcf", data)
        _, slow_report = run_scan(slow, ["f.lcf"], preds)
        assert slow_report.duration_us > fast_report.duration_us

    @settings(max_examples=25, deadline=None)
    @given(
        groups=st.lists(
            st.lists(st.integers(min_value=0, max_value=20), min_size=1, max_size=8),
            min_size=1,
            max_size=3,
        ),
        lo=st.integers(min_value=0, max_value=20),
        width=st.integers(min_value=0, max_value=10),
    )
    def test_pruning_never_changes_output(self, groups, lo, width):
        data, _ = make_file([[g, [v * 2 for v in g]] for g in groups])
        preds = scan.PredicateSet((("a", lo, lo + width),), ("a", "b"))

        def rows(prune):
            sim = seeded_sim({"f.lcf": data})
            batches, _ = run_scan(sim, ["f.lcf"], preds, prune=prune)
            return sorted(zip(*[sum((b[i] for b in batches), []) for i in range(2)]))

        assert rows(True) == rows(False)
