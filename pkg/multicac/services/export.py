from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Mapping, Union

import pandas as pd

from multicac.constants import SERIES_COLUMNS, SERIES_FLOAT_FORMAT
from multicac.models import TimeSeriesRow

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class SeriesWriter:
    """Append-only series.csv; rows are buffered and flushed every ``flush_every`` rows."""

    def __init__(self, path: PathLike, flush_every: int = 1):
        self.path = Path(path)
        self.flush_every = max(1, int(flush_every))
        self.rows_written = 0
        self._pending: list[dict] = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        # header only, so the file is valid before the first flush
        pd.DataFrame(columns=list(SERIES_COLUMNS)).to_csv(self.path, index=False)

    def append(self, row: TimeSeriesRow) -> None:
        self._pending.append(row.as_dict())
        if len(self._pending) >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        if not self._pending:
            return
        frame = pd.DataFrame(self._pending, columns=list(SERIES_COLUMNS))
        frame.to_csv(self.path, mode="a", header=False, index=False, float_format=SERIES_FLOAT_FORMAT)
        self.rows_written += len(self._pending)
        self._pending.clear()

    def close(self) -> None:
        self.flush()
        logger.info("wrote %d rows to %s", self.rows_written, self.path)

    def __enter__(self) -> "SeriesWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_series(path: PathLike) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if tuple(frame.columns) != SERIES_COLUMNS:
        raise ValueError(f"unexpected series header {list(frame.columns)}")
    return frame


def _format(value) -> str:
    if isinstance(value, float):
        return SERIES_FLOAT_FORMAT % value
    return str(value)


def write_summary(path: PathLike, sections: Mapping[str, Mapping[str, object]]) -> Path:
    """summary.txt in the same [section] key = value layout as the config files."""
    lines: list[str] = []
    for name, entries in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {_format(value)}" for key, value in entries.items())
        lines.append("")
    path = Path(path)
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


def write_table(path: PathLike, rows: Iterable[Mapping[str, object]]) -> pd.DataFrame:
    frame = pd.DataFrame(list(rows))
    frame.to_csv(path, index=False, float_format=SERIES_FLOAT_FORMAT)
    return frame
