"""Calendar-date parsing for residence and infection files.

Dates are carried as ``datetime.date`` objects and reduced to integer
day offsets only when survival times are derived.  Two formats are
accepted: ISO-8601 (``2009-07-15``) and day-first (``15/07/2009``).
"""

from __future__ import annotations

import datetime as dt

from .errors import DateParseError


def parse_date(text: str) -> dt.date:
    s = text.strip()
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        pass
    try:
        return dt.datetime.strptime(s, "%d/%m/%Y").date()
    except ValueError:
        raise DateParseError(f"unparseable date: {text!r}") from None


def parse_optional_date(text: str | None) -> dt.date | None:
    if text is None or not text.strip():
        return None
    return parse_date(text)


def format_date(d: dt.date | None) -> str:
    return "" if d is None else d.isoformat()
