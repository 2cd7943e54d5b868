"""Metric tests: average precision against hand computations, mAP plumbing."""

import numpy as np
import pytest

from hmpsearch import (
    ImageDescriptor,
    InvalidInputError,
    InvertedIndex,
    MissingQueryError,
    average_precision,
    evaluate,
    exhaustive_scan,
    index_add,
    l2_normalize,
    load_ground_truth,
    write_report,
)


def unit_descriptor(image_id, length, pairs):
    idx, val = zip(*sorted(pairs))
    return ImageDescriptor(
        image_id, length, np.array(idx), l2_normalize(np.array(val, dtype=float))
    )


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision(["r1", "r2", "r3", "x"], {"r1", "r2", "r3"}) == 1.0

    def test_single_relevant_at_rank_two(self):
        assert average_precision(["x", "r"], {"r"}) == 0.5

    def test_hand_computed_two_of_three(self):
        ap = average_precision(["x", "r1", "r2"], {"r1", "r2"})
        assert ap == pytest.approx(7.0 / 12.0, abs=1e-12)

    def test_missing_relevant_contributes_zero(self):
        ap = average_precision(["r1", "x"], {"r1", "never-retrieved"})
        assert ap == pytest.approx(0.5, abs=1e-12)

    def test_empty_relevant_rejected(self):
        with pytest.raises(InvalidInputError):
            average_precision(["a"], set())

    def test_duplicate_ranked_ids_rejected(self):
        with pytest.raises(InvalidInputError):
            average_precision(["a", "a"], {"a"})

    def test_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ids = [f"i{n}" for n in range(10)]
            rng.shuffle(ids)
            relevant = set(rng.choice(ids, size=3, replace=False))
            ap = average_precision(ids, relevant)
            assert 0.0 <= ap <= 1.0

    def test_swapping_relevant_upward_never_decreases(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            flags = rng.uniform(size=12) < 0.4
            ids = [f"i{n}" for n in range(12)]
            relevant = {i for i, f in zip(ids, flags) if f}
            if not relevant:
                continue
            before = average_precision(ids, relevant)
            # move one relevant id up past an irrelevant neighbor
            pos = [n for n, i in enumerate(ids) if i in relevant and n > 0 and ids[n - 1] not in relevant]
            if not pos:
                continue
            n = pos[0]
            swapped = list(ids)
            swapped[n - 1], swapped[n] = swapped[n], swapped[n - 1]
            assert average_precision(swapped, relevant) >= before - 1e-12


def planted_cluster_corpus():
    """Three groups of three near-identical descriptors plus distractors."""
    rng = np.random.default_rng(2)
    docs = {}
    gt = {}
    length = 24
    for g in range(3):
        dims = rng.choice(length, size=6, replace=False)
        vals = rng.standard_normal(6)
        members = [f"g{g}m{m}" for m in range(3)]
        for member in members:
            docs[member] = unit_descriptor(member, length, zip(dims, vals))
        for member in members:
            gt[member] = set(members) - {member}
    return docs, gt


class TestEvaluate:
    def test_planted_clusters_reach_perfect_map(self):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc in docs.values():
            index_add(idx, doc)
        report = evaluate(idx, docs, gt)
        assert report.mean_ap == pytest.approx(1.0, abs=1e-12)
        assert len(report.per_query) == 9

    def test_map_is_exact_mean_of_aps(self):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc in docs.values():
            index_add(idx, doc)
        report = evaluate(idx, docs, gt)
        aps = [ap for _, ap, _ in report.per_query]
        assert report.mean_ap == sum(aps) / len(aps)

    def test_missing_query_descriptor_reported(self):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc in docs.values():
            index_add(idx, doc)
        del docs["g0m0"]
        with pytest.raises(MissingQueryError) as err:
            evaluate(idx, docs, gt)
        assert "g0m0" in str(err.value)

    def test_unindexed_relevant_item_scores_zero(self):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc_id, doc in docs.items():
            if doc_id != "g1m2":
                index_add(idx, doc)
        report = evaluate(idx, docs, {"g1m0": {"g1m1", "g1m2"}})
        # one of two relevant items can never be retrieved
        assert report.per_query[0][1] == pytest.approx(0.5, abs=1e-12)

    def test_insertion_order_does_not_change_map(self):
        docs, gt = planted_cluster_corpus()
        ids = list(docs)
        rng = np.random.default_rng(3)
        maps = []
        for _ in range(3):
            rng.shuffle(ids)
            idx = InvertedIndex(24)
            for doc_id in ids:
                index_add(idx, docs[doc_id])
            maps.append(evaluate(idx, docs, gt).mean_ap)
        assert maps[0] == maps[1] == maps[2]

    def test_exhaustive_oracle_substitution_matches(self):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc in docs.values():
            index_add(idx, doc)
        via_index = evaluate(idx, docs, gt)

        def scanner(q, top_k, self_exclude):
            return exhaustive_scan(list(docs.values()), q, top_k, self_exclude)

        via_scan = evaluate(scanner, docs, gt)
        assert via_index.mean_ap == via_scan.mean_ap

    def test_self_exclusion_toggle(self):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc in docs.values():
            index_add(idx, doc)
        # with exclusion off the query outranks its group mates but is not
        # relevant, so precision at the hit ranks drops
        include_self = evaluate(idx, docs, gt, self_exclude=False)
        assert include_self.mean_ap < 1.0


class TestGroundTruthFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "gt.tsv"
        path.write_text("q1\ta,b\nq2\tc\n")
        gt = load_ground_truth(path)
        assert gt == {"q1": {"a", "b"}, "q2": {"c"}}

    def test_rejects_self_reference(self, tmp_path):
        path = tmp_path / "gt.tsv"
        path.write_text("q1\tq1,b\n")
        with pytest.raises(InvalidInputError):
            load_ground_truth(path)

    def test_rejects_empty_relevant(self, tmp_path):
        path = tmp_path / "gt.tsv"
        path.write_text("q1\t , \n")
        with pytest.raises(InvalidInputError):
            load_ground_truth(path)

    def test_rejects_duplicate_query(self, tmp_path):
        path = tmp_path / "gt.tsv"
        path.write_text("q1\ta\nq1\tb\n")
        with pytest.raises(InvalidInputError):
            load_ground_truth(path)


class TestReportFile:
    def test_written_lines(self, tmp_path):
        docs, gt = planted_cluster_corpus()
        idx = InvertedIndex(24)
        for doc in docs.values():
            index_add(idx, doc)
        report = evaluate(idx, docs, gt, config_fingerprint="abc123")
        path = tmp_path / "report.txt"
        write_report(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "# config abc123"
        assert len(lines) == 1 + 9 + 1
        assert lines[-1].startswith("mAP ")
        assert float(lines[-1].split()[1]) == pytest.approx(1.0, abs=1e-6)
