"""Context features for (user, query, document) targets.

Twenty features are computed per context and target item (a document id or
a domain id, depending on the context). They summarize how much relevance
the item accumulated, how often it was shown, clicked, skipped (not clicked
with some click below it) or missed (not clicked with every click above
it), at which ranks, and how similar the context queries are to the target
query. Concatenating the six context blocks and appending the original
engine rank yields the 121-value vector. Evidence that is absent always
contributes 0.
"""

from __future__ import annotations

import csv
import multiprocessing
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .contexts import Context, ItemKind, Occurrence, assemble_contexts, build
from .logs import DataError, Impression, Session
from .partition import TargetSet, order_sessions, session_ranks

N_CONTEXTS = 6
N_CONTEXT_FEATURES = 20
N_FEATURES = N_CONTEXTS * N_CONTEXT_FEATURES + 1

CONTEXT_COLUMNS = [
    f"c{k}_g{j}"
    for k in range(1, N_CONTEXTS + 1)
    for j in range(1, N_CONTEXT_FEATURES + 1)
]
ID_COLUMNS = ["user_id", "query_id", "session_id", "serp_id", "doc_id"]
HEADER = ID_COLUMNS + CONTEXT_COLUMNS + ["base_rank", "gain"]

# Column of the heuristic re-ranking signal: total historical relevance of
# the document over the user's earlier repetitions of the query.
HIST_RELEVANCE_COLUMN = "c1_g1"
HIST_RELEVANCE_INDEX = 0


def similarity(a_terms: Iterable[int], b_terms: Iterable[int]) -> float:
    """Intersection-over-union of two term sets; 0 when both are empty."""
    a, b = set(a_terms), set(b_terms)
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


class EventFlags(NamedTuple):
    shown: bool
    clicked: bool
    skipped: bool
    missed: bool
    r_shown: int
    r_clicked: int
    r_skipped: int
    r_missed: int


def event_flags(item: int, occurrence: Occurrence, kind: ItemKind) -> EventFlags:
    """How the item fared in one impression.

    An item occupying several positions (possible for domains) is located at
    its topmost position. Skipped means shown, not clicked, with at least
    one click strictly below; missed means shown, not clicked, with every
    click strictly above. Ranks are 1-based and 0 when the flag is off.
    """
    ranks = occurrence.item_ranks(kind, item)
    if not ranks:
        return EventFlags(False, False, False, False, 0, 0, 0, 0)
    clicked_ranks = [r for r in ranks if occurrence.grades[r - 1].clicked]
    if clicked_ranks:
        return EventFlags(True, True, False, False, ranks[0], clicked_ranks[0], 0, 0)
    top = ranks[0]
    clicks = occurrence.click_ranks
    if clicks and any(c > top for c in clicks):
        return EventFlags(True, False, True, False, top, 0, top, 0)
    if clicks:
        return EventFlags(True, False, False, True, top, 0, 0, top)
    return EventFlags(True, False, False, False, top, 0, 0, 0)


def context_features(
    item: int, query_terms: Sequence[int], context: Context
) -> list[float]:
    """The 20-value feature block for one item against one context."""
    gain_sum = 0.0
    slot_count = 0
    gain_max: float | None = None
    gain_min: float | None = None

    shown_n = clicked_n = skipped_n = missed_n = 0
    sim_clicked_sum = sim_skipped_sum = sim_missed_sum = 0.0
    sim_clicked_max = sim_skipped_max = sim_missed_max = 0.0
    shown_disc = clicked_disc = skipped_disc = missed_disc = 0.0
    clicked_rank_max = 0
    clicked_rank_min = 0

    kind = context.kind
    for occ in context.occurrences:
        ranks = occ.item_ranks(kind, item)
        if not ranks:
            continue
        for r in ranks:
            gain = occ.gains[r - 1]
            gain_sum += gain
            slot_count += 1
            if gain_max is None or gain > gain_max:
                gain_max = gain
            if gain_min is None or gain < gain_min:
                gain_min = gain

        flags = event_flags(item, occ, kind)
        shown_n += 1
        shown_disc += 1.0 / flags.r_shown
        if flags.clicked:
            sim = similarity(query_terms, occ.terms)
            clicked_n += 1
            clicked_disc += 1.0 / flags.r_clicked
            sim_clicked_sum += sim
            if sim > sim_clicked_max:
                sim_clicked_max = sim
            if flags.r_clicked > clicked_rank_max:
                clicked_rank_max = flags.r_clicked
            if clicked_rank_min == 0 or flags.r_clicked < clicked_rank_min:
                clicked_rank_min = flags.r_clicked
        elif flags.skipped:
            sim = similarity(query_terms, occ.terms)
            skipped_n += 1
            skipped_disc += 1.0 / flags.r_skipped
            sim_skipped_sum += sim
            if sim > sim_skipped_max:
                sim_skipped_max = sim
        elif flags.missed:
            sim = similarity(query_terms, occ.terms)
            missed_n += 1
            missed_disc += 1.0 / flags.r_missed
            sim_missed_sum += sim
            if sim > sim_missed_max:
                sim_missed_max = sim

    return [
        gain_sum,                                            # g1 total gain
        gain_sum / slot_count if slot_count else 0.0,        # g2 mean gain
        float(gain_max) if gain_max is not None else 0.0,    # g3 max gain
        float(gain_min) if gain_min is not None else 0.0,    # g4 min gain
        sim_clicked_sum / clicked_n if clicked_n else 0.0,   # g5
        sim_clicked_max,                                     # g6
        sim_skipped_sum / skipped_n if skipped_n else 0.0,   # g7
        sim_skipped_max,                                     # g8
        sim_missed_sum / missed_n if missed_n else 0.0,      # g9
        sim_missed_max,                                      # g10
        float(shown_n),                                      # g11
        float(clicked_n),                                    # g12
        float(skipped_n),                                    # g13
        float(missed_n),                                     # g14
        shown_disc,                                          # g15
        clicked_disc,                                        # g16
        float(clicked_rank_max),                             # g17
        float(clicked_rank_min),                             # g18
        skipped_disc,                                        # g19
        missed_disc,                                         # g20
    ]


@dataclass
class FeatureVector:
    user_id: int
    query_id: int
    session_id: int
    serp_id: int
    doc_id: int
    values: list[float]  # 120 context features + base rank
    gain: int | None = None


def extract_impression(
    user_id: int,
    imp: Impression,
    session_id: int,
    six_contexts: Sequence[Context],
) -> list[FeatureVector]:
    """One feature vector per document of the target impression.

    Document contexts (1, 3, 5) are probed with the document id; domain
    contexts (2, 4, 6) with the document's domain id.
    """
    if len(six_contexts) != N_CONTEXTS:
        raise ValueError(f"expected {N_CONTEXTS} contexts, got {len(six_contexts)}")
    gains = imp.gains() if imp.labels is not None else None
    rows = []
    for pos, (doc, domain) in enumerate(zip(imp.documents, imp.domains)):
        values: list[float] = []
        for context in six_contexts:
            item = doc if context.kind is ItemKind.DOCUMENT else domain
            values.extend(context_features(item, imp.terms, context))
        values.append(float(pos + 1))  # original engine rank
        rows.append(
            FeatureVector(
                user_id=user_id,
                query_id=imp.query_id,
                session_id=session_id,
                serp_id=imp.serp_id,
                doc_id=doc,
                values=values,
                gain=gains[pos] if gains is not None else None,
            )
        )
    return rows


_WORK_CONTEXT: dict | None = None


def _extract_ref(item: tuple[int, int, int]) -> list[FeatureVector]:
    ctx = _WORK_CONTEXT
    user_id, session_id, serp_id = item
    imp = ctx["impressions"].get((user_id, session_id, serp_id))
    if imp is None:
        raise DataError(
            f"target user={user_id} session={session_id} serp={serp_id} "
            "not found in the parsed sessions"
        )
    rank = ctx["ranks"][(user_id, session_id)]
    six = assemble_contexts(
        user_id,
        imp.query_id,
        (rank, imp.time_passed),
        ctx["query_index"],
        ctx["user_history"],
    )
    return extract_impression(user_id, imp, session_id, six)


def extract_targets(
    sessions: list[Session],
    targets: TargetSet,
    train_days: int = 27,
    seed: int = 0,
    threads: int = 1,
) -> dict[str, list[FeatureVector]]:
    """Feature vectors for every target, grouped by role.

    Within each role the targets are processed in (user_id, session_id,
    serp_id) order, so output is deterministic regardless of the worker
    count. The session order seed must match the one used for partitioning.
    """
    global _WORK_CONTEXT
    ordered = order_sessions(sessions, seed)
    query_index, user_history = build(ordered, train_days)
    impressions = {
        (s.user_id, s.session_id, imp.serp_id): imp
        for user_sessions in ordered.values()
        for s in user_sessions
        for imp in s.impressions
    }
    _WORK_CONTEXT = {
        "impressions": impressions,
        "ranks": session_ranks(ordered),
        "query_index": query_index,
        "user_history": user_history,
    }
    try:
        out: dict[str, list[FeatureVector]] = {}
        for role in ("train", "validation", "test"):
            refs = sorted(
                (ref.user_id, ref.session_id, ref.serp_id)
                for ref in targets.by_role(role)
            )
            if threads > 1 and len(refs) > 1:
                chunk = max(1, len(refs) // (threads * 4))
                ctx = multiprocessing.get_context("fork")
                with ctx.Pool(threads) as pool:
                    groups = pool.map(_extract_ref, refs, chunksize=chunk)
            else:
                groups = [_extract_ref(ref) for ref in refs]
            out[role] = [row for group in groups for row in group]
        return out
    finally:
        _WORK_CONTEXT = None


def write_features(rows: Iterable[FeatureVector], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for row in rows:
            writer.writerow(
                [row.user_id, row.query_id, row.session_id, row.serp_id, row.doc_id]
                + [repr(v) for v in row.values]
                + ["" if row.gain is None else row.gain]
            )


@dataclass
class FeatureTable:
    """Feature file contents as arrays grouped by target (10 rows each)."""

    user_ids: np.ndarray     # (T,)
    query_ids: np.ndarray    # (T,)
    session_ids: np.ndarray  # (T,)
    serp_ids: np.ndarray     # (T,)
    doc_ids: np.ndarray      # (T, 10)
    x: np.ndarray            # (T, 10, 121) float64
    base_ranks: np.ndarray   # (T, 10) float64
    gains: np.ndarray | None  # (T, 10) float64, None when unlabeled

    @property
    def n_targets(self) -> int:
        return self.x.shape[0]

    @property
    def n_docs(self) -> int:
        return self.x.shape[0] * self.x.shape[1]

    def flat_x(self) -> np.ndarray:
        return self.x.reshape(self.n_docs, self.x.shape[2])


def read_features(path: str | Path) -> FeatureTable:
    """Load a feature CSV, validating layout and 10-document grouping."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HEADER:
            raise DataError(f"unexpected feature header in {path}")
        raw = list(reader)
    if len(raw) % 10 != 0:
        raise DataError(f"{path}: row count {len(raw)} is not a multiple of 10")
    n_targets = len(raw) // 10
    n_ids = len(ID_COLUMNS)

    user_ids = np.empty(n_targets, dtype=np.int64)
    query_ids = np.empty(n_targets, dtype=np.int64)
    session_ids = np.empty(n_targets, dtype=np.int64)
    serp_ids = np.empty(n_targets, dtype=np.int64)
    doc_ids = np.empty((n_targets, 10), dtype=np.int64)
    x = np.empty((n_targets, 10, N_FEATURES), dtype=np.float64)
    gains = np.empty((n_targets, 10), dtype=np.float64)
    any_gain = True

    for t in range(n_targets):
        group = raw[t * 10 : (t + 1) * 10]
        first = group[0]
        user_ids[t] = int(first[0])
        query_ids[t] = int(first[1])
        session_ids[t] = int(first[2])
        serp_ids[t] = int(first[3])
        for j, row in enumerate(group):
            if (row[0], row[2], row[3]) != (first[0], first[2], first[3]):
                raise DataError(f"{path}: target group at row {t * 10 + j + 2} mixed")
            doc_ids[t, j] = int(row[4])
            x[t, j, :] = [float(v) for v in row[n_ids : n_ids + N_FEATURES]]
            gain_raw = row[n_ids + N_FEATURES]
            if gain_raw == "":
                any_gain = False
            else:
                gains[t, j] = float(gain_raw)

    return FeatureTable(
        user_ids=user_ids,
        query_ids=query_ids,
        session_ids=session_ids,
        serp_ids=serp_ids,
        doc_ids=doc_ids,
        x=x,
        base_ranks=x[:, :, N_FEATURES - 1].copy(),
        gains=gains if any_gain else None,
    )
