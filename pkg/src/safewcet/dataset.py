"""Labeled (WCET assignment, safe/unsafe) tuples produced by simulation runs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .simulator import SAFE, UNSAFE
from .timebase import DEFAULT_RESOLUTION, format_ms, to_units


@dataclass
class LabeledDataset:
    """WCETs of the range tasks (integer units) with labels and provenance.

    ``unsafe[r]`` is True when row ``r`` violated some (m, K) constraint.
    The same WCET point may appear with both labels.
    """

    columns: Tuple[str, ...]
    wcets: np.ndarray
    unsafe: np.ndarray
    test_case: List[str] = field(default_factory=list)
    seed: List[str] = field(default_factory=list)
    resolution: Decimal = DEFAULT_RESOLUTION

    def __post_init__(self) -> None:
        self.columns = tuple(self.columns)
        self.wcets = np.asarray(self.wcets, dtype=np.int64).reshape(-1, len(self.columns))
        self.unsafe = np.asarray(self.unsafe, dtype=bool).reshape(-1)
        n = len(self.unsafe)
        if self.wcets.shape[0] != n:
            raise ValueError("wcet rows and labels differ in length")
        if not self.test_case:
            self.test_case = [""] * n
        if not self.seed:
            self.seed = [""] * n
        if len(self.test_case) != n or len(self.seed) != n:
            raise ValueError("provenance columns differ in length")

    @classmethod
    def empty(cls, columns: Sequence[str], resolution: Decimal = DEFAULT_RESOLUTION) -> "LabeledDataset":
        return cls(tuple(columns), np.zeros((0, len(columns)), np.int64), np.zeros(0, bool), resolution=resolution)

    @classmethod
    def from_rows(
        cls,
        columns: Sequence[str],
        rows: Iterable[Tuple[Sequence[int], bool, str, str]],
        resolution: Decimal = DEFAULT_RESOLUTION,
    ) -> "LabeledDataset":
        rows = list(rows)
        if not rows:
            return cls.empty(columns, resolution)
        w, u, tc, sd = zip(*rows)
        return cls(tuple(columns), np.array(w, np.int64), np.array(u, bool), list(tc), list(sd), resolution)

    def __len__(self) -> int:
        return len(self.unsafe)

    @property
    def X(self) -> np.ndarray:
        """WCETs in milliseconds as floats."""
        return self.wcets.astype(float) * float(self.resolution)

    @property
    def y(self) -> np.ndarray:
        return self.unsafe.astype(float)

    @property
    def labels(self) -> List[str]:
        return [UNSAFE if x else SAFE for x in self.unsafe]

    def column(self, task_id: str) -> np.ndarray:
        return self.X[:, self.columns.index(task_id)]

    def subset(self, mask: np.ndarray) -> "LabeledDataset":
        idx = np.flatnonzero(mask)
        return LabeledDataset(
            self.columns,
            self.wcets[idx],
            self.unsafe[idx],
            [self.test_case[i] for i in idx],
            [self.seed[i] for i in idx],
            self.resolution,
        )

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if other.columns != self.columns:
            raise ValueError("datasets have different columns")
        return LabeledDataset(
            self.columns,
            np.vstack([self.wcets, other.wcets]),
            np.concatenate([self.unsafe, other.unsafe]),
            self.test_case + other.test_case,
            self.seed + other.seed,
            self.resolution,
        )

    def to_csv(self, path: "str | Path | None" = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([*self.columns, "label", "test_case", "seed"])
        for r in range(len(self)):
            writer.writerow(
                [*(format_ms(int(v), self.resolution) for v in self.wcets[r]),
                 UNSAFE if self.unsafe[r] else SAFE, self.test_case[r], self.seed[r]]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: "str | Path", resolution: Decimal = DEFAULT_RESOLUTION) -> "LabeledDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-3:] != ["label", "test_case", "seed"]:
                raise ValueError(f"{path}: unexpected dataset header {header!r}")
            columns = tuple(header[:-3])
            rows = []
            for rec in reader:
                lab = rec[-3]
                if lab not in (SAFE, UNSAFE):
                    raise ValueError(f"{path}: bad label {lab!r}")
                rows.append(
                    ([to_units(v, resolution) for v in rec[:-3]], lab == UNSAFE, rec[-2], rec[-1])
                )
        return cls.from_rows(columns, rows, resolution)
