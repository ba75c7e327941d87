"""Deterministic synthetic click-log generator with planted preferences.

Each user holds latent preferences: a preferred document per query (drawn
from the query's candidate pool, biased toward the query's globally popular
document and toward the user's preferred domains) that the user tends to
click and read for a long time. The emitted base ranking is only weakly
correlated with those preferences, so re-ranking from history has headroom
to improve NDCG. With preference_strength 0 the clicks carry no planted
signal at all.

The same seed always produces byte-identical output. Per-user randomness
comes from independent streams keyed on (seed, user id), so generation
order cannot change the data.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .config import ConfigError
from .logs import (
    DWELL_LONG,
    SERP_SIZE,
    Grade,
    Impression,
    LogRecord,
    Session,
    format_record,
    label_impression,
)

POOL_SIZE = 20
TEST_WINDOW_DAYS = 3

# cascade simulation constants
BASE_CLICK_PROB = 0.08
PREF_CLICK_BOOST = 0.57
CONTINUE_AFTER_POSITION = 0.90
STOP_AFTER_SHORT_CLICK = 0.30
STOP_AFTER_LONG_CLICK = 0.80
SPLIT_DAY_PROB = 0.30
PREF_TOP_BIAS = 0.25


@dataclass(frozen=True)
class GenConfig:
    n_users: int = 100
    n_days: int = 30
    queries_per_user_per_day: int = 3
    n_queries: int = 500
    n_terms: int = 400
    n_documents: int = 3000
    n_domains: int = 300
    preference_strength: float = 0.9
    repeat_query_prob: float = 0.5
    rng_seed: int = 7

    def validate(self) -> None:
        counts = {
            "n_users": self.n_users,
            "n_days": self.n_days,
            "queries_per_user_per_day": self.queries_per_user_per_day,
            "n_queries": self.n_queries,
            "n_terms": self.n_terms,
            "n_documents": self.n_documents,
            "n_domains": self.n_domains,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not 0.0 <= self.preference_strength <= 1.0:
            raise ConfigError("preference_strength must be in [0, 1]")
        if not 0.0 <= self.repeat_query_prob <= 1.0:
            raise ConfigError("repeat_query_prob must be in [0, 1]")
        if self.n_days < 4:
            raise ConfigError("n_days must be >= 4")
        if self.n_documents < SERP_SIZE:
            raise ConfigError(f"n_documents must be >= {SERP_SIZE}")

    @property
    def train_days(self) -> int:
        """Days 1..train_days are the training period; the rest is test."""
        return self.n_days - TEST_WINDOW_DAYS


@dataclass(frozen=True)
class QueryInfo:
    terms: tuple[int, ...]
    pool: tuple[int, ...]
    popular_doc: int


@dataclass
class GenStats:
    """Ground-truth bookkeeping recorded while generating."""

    unique_queries: int = 0
    unique_documents: int = 0
    unique_users: int = 0
    training_sessions: int = 0
    test_sessions: int = 0
    training_clicks: int = 0
    total_records: int = 0
    grade_counts: dict = field(default_factory=dict)  # period -> grade name -> count

    def as_dict(self) -> dict:
        return {
            "unique_queries": self.unique_queries,
            "unique_documents": self.unique_documents,
            "unique_users": self.unique_users,
            "training_sessions": self.training_sessions,
            "test_sessions": self.test_sessions,
            "training_clicks": self.training_clicks,
            "total_records": self.total_records,
            "grade_counts": self.grade_counts,
        }


def _build_vocab(cfg: GenConfig) -> tuple[list[QueryInfo], list[int]]:
    rng = random.Random(f"{cfg.rng_seed}:vocab")
    doc_domains = [rng.randrange(cfg.n_domains) for _ in range(cfg.n_documents)]
    queries = []
    pool_size = min(POOL_SIZE, cfg.n_documents)
    for _ in range(cfg.n_queries):
        n_terms = rng.randint(1, min(4, cfg.n_terms))
        terms = tuple(sorted(rng.sample(range(cfg.n_terms), n_terms)))
        pool = tuple(rng.sample(range(cfg.n_documents), pool_size))
        queries.append(QueryInfo(terms=terms, pool=pool, popular_doc=rng.choice(pool)))
    return queries, doc_domains


def _noise_dwell(rng: random.Random) -> int:
    r = rng.random()
    if r < 0.25:
        return rng.randint(5, 49)
    if r < 0.90:
        return rng.randint(50, 399)
    return rng.randint(400, 800)


@dataclass
class _UserState:
    rng: random.Random
    preferred_domains: list[int]
    preferred_doc: dict[int, int] = field(default_factory=dict)
    seen_queries: list[int] = field(default_factory=list)


def _pick_query(state: _UserState, cfg: GenConfig) -> int:
    rng = state.rng
    if state.seen_queries and rng.random() < cfg.repeat_query_prob:
        return rng.choice(state.seen_queries)
    qid = rng.randrange(cfg.n_queries)
    if qid not in state.seen_queries:
        state.seen_queries.append(qid)
    return qid


def _preferred_doc(state: _UserState, qid: int, vocab: list[QueryInfo],
                   doc_domains: list[int]) -> int:
    doc = state.preferred_doc.get(qid)
    if doc is not None:
        return doc
    rng = state.rng
    info = vocab[qid]
    if rng.random() < 0.5:
        doc = info.popular_doc
    else:
        in_domain = [d for d in info.pool if doc_domains[d] in state.preferred_domains]
        if in_domain and rng.random() < 0.8:
            doc = rng.choice(in_domain)
        else:
            doc = rng.choice(info.pool)
    state.preferred_doc[qid] = doc
    return doc


def _make_serp(state: _UserState, qid: int, vocab: list[QueryInfo],
               doc_domains: list[int]) -> tuple[list[int], int]:
    """Ten pool documents with the preferred one at a weakly top-biased slot."""
    rng = state.rng
    preferred = _preferred_doc(state, qid, vocab, doc_domains)
    others = [d for d in vocab[qid].pool if d != preferred]
    docs = rng.sample(others, SERP_SIZE - 1)
    if rng.random() < PREF_TOP_BIAS:
        slot = rng.randrange(SERP_SIZE // 2)
    else:
        slot = rng.randrange(SERP_SIZE)
    docs.insert(slot, preferred)
    return docs, preferred


def _simulate_clicks(state: _UserState, docs: list[int], preferred: int,
                     p: float) -> list[tuple[int, int]]:
    """Cascade scan over the SERP; returns (doc, intended dwell) in click order."""
    rng = state.rng
    clicks = []
    for doc in docs:
        click_prob = BASE_CLICK_PROB
        if doc == preferred:
            click_prob += PREF_CLICK_BOOST * p
        if rng.random() < click_prob:
            if doc == preferred and rng.random() < p:
                dwell = rng.randint(DWELL_LONG, 900)
            else:
                dwell = _noise_dwell(rng)
            clicks.append((doc, dwell))
            stop_prob = (
                STOP_AFTER_LONG_CLICK if dwell >= DWELL_LONG else STOP_AFTER_SHORT_CLICK
            )
            if rng.random() < stop_prob:
                break
        if rng.random() >= CONTINUE_AFTER_POSITION:
            break
    return clicks


@dataclass
class _PlannedSession:
    user_id: int
    day: int
    user_seq: int
    impressions: list[tuple[int, list[int], list[tuple[int, int]], bool]]
    # (query_id, documents, clicks as (doc, dwell), is_test)


def _plan_user(cfg: GenConfig, user_id: int, vocab: list[QueryInfo],
               doc_domains: list[int]) -> list[_PlannedSession]:
    rng = random.Random(f"{cfg.rng_seed}:user:{user_id}")
    state = _UserState(
        rng=rng,
        preferred_domains=rng.sample(range(cfg.n_domains), min(2, cfg.n_domains)),
    )
    p = cfg.preference_strength
    sessions: list[_PlannedSession] = []
    seq = 0

    def plan_impressions(count: int, mark_last_test: bool):
        imps = []
        for i in range(count):
            qid = _pick_query(state, cfg)
            docs, preferred = _make_serp(state, qid, vocab, doc_domains)
            clicks = _simulate_clicks(state, docs, preferred, p)
            is_test = mark_last_test and i == count - 1
            imps.append((qid, docs, clicks, is_test))
        return imps

    for day in range(1, cfg.train_days + 1):
        count = cfg.queries_per_user_per_day
        if count >= 2 and rng.random() < SPLIT_DAY_PROB:
            first = rng.randint(1, count - 1)
            chunks = [first, count - first]
        else:
            chunks = [count]
        for chunk in chunks:
            sessions.append(
                _PlannedSession(user_id, day, seq, plan_impressions(chunk, False))
            )
            seq += 1

    test_day = rng.randint(cfg.train_days + 1, cfg.n_days)
    sessions.append(
        _PlannedSession(
            user_id, test_day, seq,
            plan_impressions(cfg.queries_per_user_per_day, True),
        )
    )
    return sessions


def _realize_session(plan: _PlannedSession, session_id: int,
                     rng: random.Random) -> Session:
    """Assign times so that each click's dwell is realized by the next action."""
    session = Session(session_id=session_id, user_id=plan.user_id, day=plan.day)
    t = 0
    for serp_id, (qid, docs, clicks, is_test) in enumerate(plan.impressions):
        imp = Impression(
            serp_id=serp_id,
            query_id=qid,
            terms=(),  # filled by caller from the vocab
            documents=tuple(docs),
            domains=(),
            time_passed=t,
            is_test=is_test,
        )
        if clicks:
            ct = t + rng.randint(3, 30)
            for doc, dwell in clicks:
                imp.clicks.append((doc, ct))
                ct += dwell
            t = ct
        else:
            t += rng.randint(30, 120)
        session.impressions.append(imp)
    return session


def generate_sessions(cfg: GenConfig) -> tuple[list[Session], GenStats]:
    """Build fully materialized sessions plus ground-truth bookkeeping."""
    cfg.validate()
    vocab, doc_domains = _build_vocab(cfg)

    plans: list[_PlannedSession] = []
    for user_id in range(1, cfg.n_users + 1):
        plans.extend(_plan_user(cfg, user_id, vocab, doc_domains))
    plans.sort(key=lambda pl: (pl.day, pl.user_id, pl.user_seq))

    sessions = []
    stats = GenStats()
    queries_seen: set[int] = set()
    docs_seen: set[int] = set()
    users_seen: set[int] = set()
    grade_counts: dict[str, dict[str, int]] = {
        "training": {g.value: 0 for g in Grade},
        "test": {g.value: 0 for g in Grade},
    }

    for session_id, plan in enumerate(plans, 1):
        timing_rng = random.Random(f"{cfg.rng_seed}:times:{plan.user_id}:{plan.user_seq}")
        session = _realize_session(plan, session_id, timing_rng)
        for imp in session.impressions:
            imp.terms = vocab[imp.query_id].terms
            imp.domains = tuple(doc_domains[d] for d in imp.documents)
        sessions.append(session)

        period = "training" if plan.day <= cfg.train_days else "test"
        if period == "training":
            stats.training_sessions += 1
            stats.training_clicks += sum(len(i.clicks) for i in session.impressions)
        else:
            stats.test_sessions += 1
        users_seen.add(plan.user_id)
        counts = grade_counts[period]
        for imp in session.impressions:
            queries_seen.add(imp.query_id)
            docs_seen.update(imp.documents)
            for grade in label_impression(imp, session):
                counts[grade.value] += 1
        stats.total_records += 1 + sum(
            1 + len(i.clicks) for i in session.impressions
        )

    stats.unique_queries = len(queries_seen)
    stats.unique_documents = len(docs_seen)
    stats.unique_users = len(users_seen)
    stats.grade_counts = grade_counts
    return sessions, stats


def session_records(session: Session) -> list[LogRecord]:
    """Records for one session in chronological order."""
    from .logs import ClickAction, QueryAction, SessionMeta

    records: list[LogRecord] = [
        SessionMeta(session.session_id, session.day, session.user_id)
    ]
    for imp in session.impressions:
        records.append(
            QueryAction(
                session_id=session.session_id,
                time_passed=imp.time_passed,
                serp_id=imp.serp_id,
                is_test=imp.is_test,
                query_id=imp.query_id,
                terms=imp.terms,
                results=tuple(zip(imp.documents, imp.domains)),
            )
        )
        for url_id, t in imp.clicks:
            records.append(ClickAction(session.session_id, t, imp.serp_id, url_id))
    return records


def generate_lines(cfg: GenConfig) -> tuple[list[str], GenStats]:
    """Generate the full log as serialized lines plus bookkeeping."""
    sessions, stats = generate_sessions(cfg)
    lines = []
    for session in sessions:
        lines.extend(format_record(r) for r in session_records(session))
    return lines, stats
