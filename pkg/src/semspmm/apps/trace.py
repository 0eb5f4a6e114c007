"""Per-iteration traces written as CSV ``iter,metric,value,wall_seconds``."""

from __future__ import annotations

import csv
import io
import time

FIELDS = ("iter", "metric", "value", "wall_seconds")


class Trace:
    def __init__(self):
        self.rows: list[tuple[int, str, float, float]] = []
        self._t0 = time.perf_counter()

    def add(self, it: int, metric: str, value: float) -> None:
        self.rows.append((it, metric, float(value), time.perf_counter() - self._t0))

    def values(self, metric: str) -> list[float]:
        return [v for _, m, v, _ in self.rows if m == metric]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for it, metric, value, sec in self.rows:
            w.writerow((it, metric, repr(value), f"{sec:.6f}"))
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())
