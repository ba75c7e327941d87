"""Click-log records: parsing, session assembly, and relevance labeling.

The on-disk format is the tab-separated challenge layout with four record
types: session metadata ("M"), query actions ("Q", or "T" for queries in
the test period), and click actions ("C"). Every query carries exactly ten
(url, domain) result pairs. Relevance grades are derived from click dwell
time: the time between a click and the next logged action in the same
session. Dwell below 50 units is an unsatisfied click, 50 to 399 is a
partially satisfied one, 400 or more is satisfied, and the final click of
a session is always treated as satisfied.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

SERP_SIZE = 10

DWELL_SHORT = 50
DWELL_LONG = 400


class LogParseError(ValueError):
    """A log line that cannot be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class StructuralError(LogParseError):
    """A parseable line violating a structural invariant (e.g. result count)."""


class DataError(ValueError):
    """Well-formed records that break referential integrity."""


class Grade(Enum):
    """Per-document relevance grade.

    NO_CLICK and R0 both carry gain 0; they stay distinct so click-count
    statistics can be reported separately from unsatisfied clicks.
    """

    NO_CLICK = "no_click"
    R0 = "r0"
    R1 = "r1"
    R2 = "r2"

    @property
    def gain(self) -> int:
        return _GAIN[self]

    @property
    def clicked(self) -> bool:
        return self is not Grade.NO_CLICK


_GAIN = {Grade.NO_CLICK: 0, Grade.R0: 0, Grade.R1: 1, Grade.R2: 2}


@dataclass(frozen=True)
class SessionMeta:
    session_id: int
    day: int
    user_id: int


@dataclass(frozen=True)
class QueryAction:
    session_id: int
    time_passed: int
    serp_id: int
    is_test: bool
    query_id: int
    terms: tuple[int, ...]
    results: tuple[tuple[int, int], ...]  # (url_id, domain_id) pairs


@dataclass(frozen=True)
class ClickAction:
    session_id: int
    time_passed: int
    serp_id: int
    url_id: int


LogRecord = SessionMeta | QueryAction | ClickAction


@dataclass
class Impression:
    """One SERP: a query with its ten results and any clicks on them."""

    serp_id: int
    query_id: int
    terms: tuple[int, ...]
    documents: tuple[int, ...]
    domains: tuple[int, ...]
    time_passed: int
    is_test: bool = False
    clicks: list[tuple[int, int]] = field(default_factory=list)  # (url_id, time)
    labels: list[Grade] | None = None

    @property
    def base_ranks(self) -> tuple[int, ...]:
        """Positions 1..10 of the engine's original ordering."""
        return tuple(range(1, len(self.documents) + 1))

    def gains(self) -> list[int]:
        if self.labels is None:
            raise DataError(f"impression serp={self.serp_id} has no labels")
        return [g.gain for g in self.labels]


@dataclass
class Session:
    session_id: int
    user_id: int
    day: int
    impressions: list[Impression] = field(default_factory=list)


def _int_field(value: str, line_no: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise LogParseError(line_no, f"bad integer for {name}: {value!r}") from None


def _parse_terms(value: str, line_no: int) -> tuple[int, ...]:
    if not value:
        return ()
    return tuple(_int_field(t, line_no, "term") for t in value.split(","))


def parse_line(line: str, line_no: int = 1) -> LogRecord:
    """Parse one tab-separated log line into a record.

    Metadata lines come in two accepted layouts: the plain challenge form
    ``sid  M  day  user`` and a padded form with an extra column before the
    type marker, ``sid  t  M  day  user``. Output always uses the plain form.
    """
    fields = line.rstrip("\n").split("\t")
    if len(fields) == 4 and fields[1] == "M":
        return SessionMeta(
            session_id=_int_field(fields[0], line_no, "session_id"),
            day=_int_field(fields[2], line_no, "day"),
            user_id=_int_field(fields[3], line_no, "user_id"),
        )
    if len(fields) == 5 and fields[2] == "M":
        return SessionMeta(
            session_id=_int_field(fields[0], line_no, "session_id"),
            day=_int_field(fields[3], line_no, "day"),
            user_id=_int_field(fields[4], line_no, "user_id"),
        )
    if len(fields) >= 3 and fields[2] in ("Q", "T"):
        if len(fields) < 6:
            raise LogParseError(line_no, "query record needs at least 6 fields")
        pairs = fields[6:]
        if len(pairs) != SERP_SIZE:
            raise StructuralError(
                line_no, f"expected {SERP_SIZE} results, got {len(pairs)}"
            )
        results = []
        for pair in pairs:
            url_s, sep, dom_s = pair.partition(",")
            if not sep:
                raise LogParseError(line_no, f"bad url,domain pair: {pair!r}")
            results.append(
                (
                    _int_field(url_s, line_no, "url_id"),
                    _int_field(dom_s, line_no, "domain_id"),
                )
            )
        return QueryAction(
            session_id=_int_field(fields[0], line_no, "session_id"),
            time_passed=_int_field(fields[1], line_no, "time_passed"),
            serp_id=_int_field(fields[3], line_no, "serp_id"),
            is_test=fields[2] == "T",
            query_id=_int_field(fields[4], line_no, "query_id"),
            terms=_parse_terms(fields[5], line_no),
            results=tuple(results),
        )
    if len(fields) == 5 and fields[2] == "C":
        return ClickAction(
            session_id=_int_field(fields[0], line_no, "session_id"),
            time_passed=_int_field(fields[1], line_no, "time_passed"),
            serp_id=_int_field(fields[3], line_no, "serp_id"),
            url_id=_int_field(fields[4], line_no, "url_id"),
        )
    raise LogParseError(line_no, f"unrecognized record: {line!r}")


def parse_log(lines: Iterable[str]) -> list[LogRecord]:
    """Parse a stream of log lines, in order. Blank lines are skipped."""
    records = []
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        records.append(parse_line(line, line_no))
    return records


def format_record(record: LogRecord) -> str:
    """Serialize a record to its canonical tab-separated line."""
    if isinstance(record, SessionMeta):
        return f"{record.session_id}\tM\t{record.day}\t{record.user_id}"
    if isinstance(record, QueryAction):
        kind = "T" if record.is_test else "Q"
        terms = ",".join(str(t) for t in record.terms)
        pairs = "\t".join(f"{u},{d}" for u, d in record.results)
        return (
            f"{record.session_id}\t{record.time_passed}\t{kind}\t"
            f"{record.serp_id}\t{record.query_id}\t{terms}\t{pairs}"
        )
    return (
        f"{record.session_id}\t{record.time_passed}\tC\t"
        f"{record.serp_id}\t{record.url_id}"
    )


def sessionize(records: Iterable[LogRecord]) -> list[Session]:
    """Group records into sessions, attaching clicks to their impressions.

    Raises DataError when an action references an unknown session or SERP,
    when a clicked url is not among the impression's documents, or when a
    serp_id repeats within a session.
    """
    sessions: dict[int, Session] = {}
    by_serp: dict[tuple[int, int], Impression] = {}
    for record in records:
        if isinstance(record, SessionMeta):
            if record.session_id in sessions:
                raise DataError(f"duplicate session metadata: {record.session_id}")
            sessions[record.session_id] = Session(
                session_id=record.session_id,
                user_id=record.user_id,
                day=record.day,
            )
        elif isinstance(record, QueryAction):
            session = sessions.get(record.session_id)
            if session is None:
                raise DataError(f"query for unknown session {record.session_id}")
            key = (record.session_id, record.serp_id)
            if key in by_serp:
                raise DataError(
                    f"duplicate serp {record.serp_id} in session {record.session_id}"
                )
            imp = Impression(
                serp_id=record.serp_id,
                query_id=record.query_id,
                terms=record.terms,
                documents=tuple(u for u, _ in record.results),
                domains=tuple(d for _, d in record.results),
                time_passed=record.time_passed,
                is_test=record.is_test,
            )
            session.impressions.append(imp)
            by_serp[key] = imp
        else:
            if record.session_id not in sessions:
                raise DataError(f"click for unknown session {record.session_id}")
            imp = by_serp.get((record.session_id, record.serp_id))
            if imp is None:
                raise DataError(
                    f"click references unknown serp {record.serp_id} "
                    f"in session {record.session_id}"
                )
            if record.url_id not in imp.documents:
                raise DataError(
                    f"click on url {record.url_id} not shown on serp "
                    f"{record.serp_id} of session {record.session_id}"
                )
            imp.clicks.append((record.url_id, record.time_passed))
    result = list(sessions.values())
    for session in result:
        session.impressions.sort(key=lambda imp: imp.time_passed)
        for imp in session.impressions:
            imp.clicks.sort(key=lambda c: c[1])
    return result


def _session_action_times(session: Session) -> list[int]:
    times = [imp.time_passed for imp in session.impressions]
    for imp in session.impressions:
        times.extend(t for _, t in imp.clicks)
    times.sort()
    return times


def _last_click(session: Session) -> tuple[int, int] | None:
    """(serp_id, url_id) of the chronologically last click, None if no clicks."""
    best: tuple[int, int, int] | None = None  # (time, serp_id, url_id)
    for imp in session.impressions:
        for url_id, t in imp.clicks:
            if best is None or t >= best[0]:
                best = (t, imp.serp_id, url_id)
    if best is None:
        return None
    return best[1], best[2]


def label_impression(imp: Impression, session: Session) -> list[Grade]:
    """Grade each of the impression's documents from its clicks.

    Dwell is measured to the next logged action of any kind in the session.
    A document clicked several times is graded by its longest dwell. The
    document that received the session's last click is graded R2 outright.
    """
    times = _session_action_times(session)
    last = _last_click(session)

    def dwell_of(t: int) -> int | None:
        idx = bisect.bisect_right(times, t)
        if idx == len(times):
            return None
        return times[idx] - t

    max_dwell: dict[int, int] = {}
    clicked: set[int] = set()
    for url_id, t in imp.clicks:
        clicked.add(url_id)
        d = dwell_of(t)
        if d is not None and d > max_dwell.get(url_id, -1):
            max_dwell[url_id] = d

    labels = []
    for doc in imp.documents:
        if doc not in clicked:
            labels.append(Grade.NO_CLICK)
        elif last == (imp.serp_id, doc):
            labels.append(Grade.R2)
        else:
            # Clicked, but every dwell unresolved (no later action): the
            # last-click rule did not apply, so fall back to grade R0.
            d = max_dwell.get(doc, 0)
            if d < DWELL_SHORT:
                labels.append(Grade.R0)
            elif d < DWELL_LONG:
                labels.append(Grade.R1)
            else:
                labels.append(Grade.R2)
    return labels


def label_sessions(sessions: Iterable[Session]) -> None:
    """Attach labels to every impression, in place."""
    for session in sessions:
        for imp in session.impressions:
            imp.labels = label_impression(imp, session)


def iter_impressions(sessions: Iterable[Session]) -> Iterator[tuple[Session, Impression]]:
    for session in sessions:
        for imp in session.impressions:
            yield session, imp
