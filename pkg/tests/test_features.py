import math
import random

import numpy as np
import pytest

from persorank.contexts import Context, ItemKind, make_occurrence
from persorank.features import (
    HEADER,
    N_FEATURES,
    context_features,
    event_flags,
    extract_impression,
    extract_targets,
    read_features,
    similarity,
    write_features,
)
from persorank.logs import Grade, Impression, Session

from oracles import OracleEntry, oracle_block, oracle_sim


def make_occ(docs, grades, terms=(1, 2), domains=None, user=1, day=1, sid=1, t=0):
    imp = Impression(
        serp_id=0,
        query_id=5,
        terms=tuple(terms),
        documents=tuple(docs),
        domains=tuple(domains) if domains else tuple(d % 4 for d in docs),
        time_passed=t,
        labels=list(grades),
    )
    session = Session(session_id=sid, user_id=user, day=day, impressions=[imp])
    return make_occurrence(session, imp, rank=0)


def grades_for(docs, graded: dict):
    return [graded.get(d, Grade.NO_CLICK) for d in docs]


class TestSimilarity:
    def test_half_overlap(self):
        assert similarity({1, 2, 3}, {2, 3, 4}) == 0.5

    def test_identical(self):
        assert similarity((1, 2), (1, 2)) == 1.0

    def test_disjoint(self):
        assert similarity((1,), (2,)) == 0.0

    def test_both_empty(self):
        assert similarity((), ()) == 0.0


class TestEventFlags:
    def test_skipped_click_below(self):
        docs = list(range(10))
        occ = make_occ(docs, grades_for(docs, {4: Grade.R1}))
        flags = event_flags(2, occ, ItemKind.DOCUMENT)  # item at rank 3, click at 5
        assert flags.skipped and not flags.missed and not flags.clicked
        assert flags.r_skipped == 3 and flags.r_missed == 0

    def test_missed_click_above(self):
        docs = list(range(10))
        occ = make_occ(docs, grades_for(docs, {1: Grade.R0}))
        flags = event_flags(6, occ, ItemKind.DOCUMENT)  # item at rank 7, click at 2
        assert flags.missed and not flags.skipped
        assert flags.r_missed == 7

    def test_no_clicks_neither_skipped_nor_missed(self):
        docs = list(range(10))
        occ = make_occ(docs, grades_for(docs, {}))
        flags = event_flags(3, occ, ItemKind.DOCUMENT)
        assert flags.shown and not (flags.clicked or flags.skipped or flags.missed)
        assert flags.r_shown == 4

    def test_clicked(self):
        docs = list(range(10))
        occ = make_occ(docs, grades_for(docs, {3: Grade.R0}))
        flags = event_flags(3, occ, ItemKind.DOCUMENT)
        assert flags.clicked and flags.r_clicked == 4

    def test_absent_item(self):
        docs = list(range(10))
        occ = make_occ(docs, grades_for(docs, {}))
        assert event_flags(99, occ, ItemKind.DOCUMENT) == (
            False, False, False, False, 0, 0, 0, 0,
        )

    def test_multi_slot_domain_uses_topmost(self):
        docs = list(range(10))
        domains = [7, 3, 7, 3, 0, 0, 0, 0, 0, 0]
        occ = make_occ(docs, grades_for(docs, {4: Grade.R1}), domains=domains)
        flags = event_flags(3, occ, ItemKind.DOMAIN)  # slots 2 and 4; click at 5
        assert flags.skipped and flags.r_skipped == 2


class TestContextFeatures:
    def test_empty_context_is_all_zero(self):
        ctx = Context(ItemKind.DOCUMENT, [])
        assert context_features(7, (1, 2), ctx) == [0.0] * 20

    def test_worked_example_two_clicked_occurrences(self):
        # item 50 clicked at rank 1 with gain 2, then at rank 4 with gain 1
        docs_a = [50, 1, 2, 3, 4, 5, 6, 7, 8, 9]
        occ_a = make_occ(docs_a, grades_for(docs_a, {50: Grade.R2}), sid=1, t=0)
        docs_b = [1, 2, 3, 50, 4, 5, 6, 7, 8, 9]
        occ_b = make_occ(docs_b, grades_for(docs_b, {50: Grade.R1}), sid=2, t=5)
        ctx = Context(ItemKind.DOCUMENT, [occ_a, occ_b])
        g = context_features(50, (1, 2), ctx)
        assert g[0] == 3.0       # total gain
        assert g[1] == 1.5       # mean gain over slots
        assert g[2] == 2.0 and g[3] == 1.0
        assert g[10] == 2.0 and g[11] == 2.0      # shown, clicked counts
        assert g[14] == 1.25     # 1/1 + 1/4 shown discount
        assert g[15] == 1.25     # clicked discount
        assert g[16] == 4.0 and g[17] == 1.0      # max/min clicked rank
        assert g[4] == 1.0 and g[5] == 1.0        # same-query similarity

    def test_skipped_occurrence_features(self):
        # item 2 shown at rank 2, unclicked; single click at rank 5
        docs = [9, 2, 8, 7, 6, 1, 3, 4, 5, 0]
        occ = make_occ(
            docs, grades_for(docs, {6: Grade.R1}), terms=(1, 2, 3), sid=3
        )
        ctx = Context(ItemKind.DOCUMENT, [occ])
        g = context_features(2, (2, 3, 4), ctx)
        assert g[12] == 1.0                        # skipped count
        assert g[18] == 0.5                        # skipped discount 1/2
        assert g[6] == similarity((2, 3, 4), (1, 2, 3))
        assert g[6] == 0.5
        assert g[11] == 0.0 and g[13] == 0.0

    def test_domain_multi_slot_gains_use_all_slots(self):
        docs = list(range(10))
        domains = [3, 0, 3, 0, 0, 0, 0, 0, 0, 0]
        graded = {0: Grade.R2, 2: Grade.R1}  # domain 3 slots at ranks 1 and 3
        occ = make_occ(docs, grades_for(docs, graded), domains=domains)
        ctx = Context(ItemKind.DOMAIN, [occ])
        g = context_features(3, (1, 2), ctx)
        assert g[0] == 3.0        # gains 2 + 1 across both slots
        assert g[1] == 1.5        # two slots
        assert g[10] == 1.0       # but only one occurrence
        assert g[15] == 1.0       # clicked discount uses topmost clicked slot
        assert g[16] == 1.0 and g[17] == 1.0


def random_context(rng: random.Random, kind=ItemKind.DOCUMENT, same_query=False):
    occurrences = []
    for k in range(rng.randint(0, 6)):
        docs = rng.sample(range(12), 10)
        graded = {}
        for d in rng.sample(docs, rng.randint(0, 4)):
            graded[d] = rng.choice([Grade.R0, Grade.R1, Grade.R2])
        terms = (1, 2) if same_query else tuple(
            rng.sample(range(8), rng.randint(1, 3))
        )
        occurrences.append(
            make_occ(
                docs,
                grades_for(docs, graded),
                terms=terms,
                domains=[d % 5 for d in docs],
                sid=k + 1,
                t=k,
            )
        )
    return Context(kind, occurrences)


class TestInvariants:
    def test_feature_inequalities(self):
        rng = random.Random(0)
        for _ in range(2000):
            kind = rng.choice([ItemKind.DOCUMENT, ItemKind.DOMAIN])
            ctx = random_context(rng, kind)
            item = rng.randrange(12) if kind is ItemKind.DOCUMENT else rng.randrange(5)
            g = context_features(item, (1, 2), ctx)
            assert g[11] + g[12] + g[13] <= g[10]
            if g[10] > 0:
                assert g[3] <= g[1] <= g[2]
            assert g[15] <= g[11] + 1e-12
            assert g[14] <= g[10] + 1e-12
            assert g[18] <= g[12] + 1e-12
            assert g[19] <= g[13] + 1e-12
            if g[11] > 0:
                assert 1 <= g[17] <= g[16] <= 10

    def test_same_query_similarity_degeneracy(self):
        rng = random.Random(1)
        for _ in range(500):
            ctx = random_context(rng, same_query=True)
            item = rng.randrange(12)
            g = context_features(item, (1, 2), ctx)
            assert g[4] in (0.0, 1.0) and g[5] in (0.0, 1.0)
            assert (g[5] == 1.0) == (g[11] > 0)

    def test_permutation_invariance(self):
        rng = random.Random(2)
        for _ in range(200):
            ctx = random_context(rng)
            item = rng.randrange(12)
            before = context_features(item, (1, 2), ctx)
            shuffled = Context(ctx.kind, ctx.occurrences[:])
            rng.shuffle(shuffled.occurrences)
            after = context_features(item, (1, 2), shuffled)
            assert before == pytest.approx(after, abs=1e-12)

    def test_matches_naive_oracle_on_random_contexts(self):
        rng = random.Random(3)
        for _ in range(500):
            kind = rng.choice([ItemKind.DOCUMENT, ItemKind.DOMAIN])
            ctx = random_context(rng, kind)
            item = rng.randrange(12) if kind is ItemKind.DOCUMENT else rng.randrange(5)
            q_terms = (1, 3)
            got = context_features(item, q_terms, ctx)
            entries = [
                OracleEntry(
                    o.terms,
                    o.documents if kind is ItemKind.DOCUMENT else o.domains,
                    o.grades,
                    o.day,
                    o.session_id,
                    o.time_passed,
                )
                for o in ctx.occurrences
            ]
            expected = oracle_block(item, q_terms, entries)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_similarity_matches_oracle(self):
        rng = random.Random(4)
        for _ in range(300):
            a = tuple(rng.sample(range(10), rng.randint(0, 5)))
            b = tuple(rng.sample(range(10), rng.randint(0, 5)))
            assert similarity(a, b) == pytest.approx(oracle_sim(a, b), abs=1e-15)


class TestExtract:
    def test_unseen_everything_gives_zero_blocks_plus_base_rank(self):
        imp = Impression(
            serp_id=0,
            query_id=1,
            terms=(1,),
            documents=tuple(range(10)),
            domains=tuple(range(10)),
            time_passed=0,
            labels=[Grade.NO_CLICK] * 10,
        )
        empty = [
            Context(k, [])
            for k in (
                ItemKind.DOCUMENT, ItemKind.DOMAIN, ItemKind.DOCUMENT,
                ItemKind.DOMAIN, ItemKind.DOCUMENT, ItemKind.DOMAIN,
            )
        ]
        rows = extract_impression(9, imp, 4, empty)
        assert len(rows) == 10
        for pos, row in enumerate(rows):
            assert len(row.values) == N_FEATURES == 121
            assert row.values[:120] == [0.0] * 120
            assert row.values[120] == pos + 1
            assert row.gain == 0

    def test_vector_length_everywhere(self, small_corpus):
        extracted = extract_targets(
            small_corpus.sessions,
            small_corpus.targets,
            train_days=small_corpus.train_days,
            seed=small_corpus.partition_seed,
        )
        for role, rows in extracted.items():
            assert len(rows) % 10 == 0
            assert all(len(r.values) == 121 for r in rows)
            assert all(math.isfinite(v) for r in rows for v in r.values)

    def test_csv_round_trip(self, small_corpus, tmp_path):
        extracted = extract_targets(
            small_corpus.sessions,
            small_corpus.targets,
            train_days=small_corpus.train_days,
            seed=small_corpus.partition_seed,
        )
        path = tmp_path / "features.csv"
        write_features(extracted["train"], path)
        with open(path) as fh:
            assert fh.readline().strip() == ",".join(HEADER)
        table = read_features(path)
        assert table.n_targets == len(extracted["train"]) // 10
        flat_rows = extracted["train"]
        for t in range(table.n_targets):
            for j in range(10):
                row = flat_rows[t * 10 + j]
                assert table.doc_ids[t, j] == row.doc_id
                assert np.array_equal(table.x[t, j], np.asarray(row.values))
                assert table.gains[t, j] == row.gain
        assert table.base_ranks.tolist() == [[float(r) for r in range(1, 11)]] * table.n_targets

    def test_extract_is_deterministic(self, small_corpus, tmp_path):
        kwargs = dict(
            train_days=small_corpus.train_days, seed=small_corpus.partition_seed
        )
        a = extract_targets(small_corpus.sessions, small_corpus.targets, **kwargs)
        b = extract_targets(small_corpus.sessions, small_corpus.targets, **kwargs)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_features(a["validation"], pa)
        write_features(b["validation"], pb)
        assert pa.read_bytes() == pb.read_bytes()
