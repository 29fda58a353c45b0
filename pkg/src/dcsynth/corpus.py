"""The benchmark corpus: sources, sampling shapes, expected outcomes.

Expectations marked ``table1`` reproduce the reference results this
suite tracks; ``derived`` entries carry values fixed by running the
sequential oracle on a reconstruction whose exact original source is
not available.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field


@dataclass
class CorpusEntry:
    name: str
    category: str           # '2d/2d' | '3d/3d' | '2d-loop/1d-input'
    expected_kind: str      # 'FullDC' | 'MapOnly' | 'Failed'
    expected_aux: int | None
    source: str             # 'table1' | 'derived'
    length_hints: dict
    values: tuple = (-2, -1, 0, 1, 2)
    ragged: tuple = ()
    notes: str = ""

    def path(self):
        return importlib.resources.files("dcsynth") / "corpus" / f"{self.name}.dsl"

    def text(self):
        return self.path().read_text()


_2D = {"n": ("A", 0), "m": ("A", 1)}
_3D = {"n": ("A", 0), "m": ("A", 1), "l": ("A", 2)}

ENTRIES = [
    CorpusEntry("sum", "2d/2d", "FullDC", 0, "table1", dict(_2D)),
    CorpusEntry("sorted", "2d/2d", "FullDC", 1, "table1", dict(_2D)),
    CorpusEntry("min_max", "2d/2d", "FullDC", 0, "table1", dict(_2D)),
    CorpusEntry("max_top_strip", "2d/2d", "FullDC", 0, "table1", dict(_2D)),
    CorpusEntry("max_bottom_strip", "2d/2d", "FullDC", 1, "table1", dict(_2D)),
    CorpusEntry("max_left_strip", "2d/2d", "FullDC", 0, "table1", dict(_2D),
                notes="column-major storage: A[j] is column j"),
    CorpusEntry("mtls", "2d/2d", "FullDC", 1, "table1", dict(_2D)),
    CorpusEntry("bp", "2d/2d", "MapOnly", 1, "table1", {"n": ("A", 0)},
                values=(-1, 1), ragged=("A",),
                notes="memoryless lift; summarized join is unsat"),
    CorpusEntry("balanced_substrings", "2d/2d", "FullDC", 0, "derived",
                {"n": ("A", 0)}, values=(-1, 1), ragged=("A",),
                notes="per-line balance count"),
    CorpusEntry("mbbs", "3d/3d", "FullDC", 1, "table1", dict(_3D)),
    CorpusEntry("max_top_box", "3d/3d", "FullDC", 0, "table1", dict(_3D)),
    CorpusEntry("max_left_box", "3d/3d", "FullDC", 0, "derived", dict(_3D),
                notes="per-slice row-prefix maximum"),
    CorpusEntry("mode", "2d-loop/1d-input", "FullDC", 0, "table1",
                {"n": ("x", 0), "w": ("x", 0)}, values=(0, 1, 2),
                notes="values drawn from the count-table domain"),
    CorpusEntry("max_dist", "2d-loop/1d-input", "FullDC", 0, "derived",
                {"n": ("x", 0)},
                notes="single-pass best-difference form (depth 1)"),
    CorpusEntry("lcs", "2d-loop/1d-input", "Failed", None, "table1",
                {"n": ("x", 0), "w": ("y", 0)}, values=(0, 1),
                notes="conditional accumulators are out of scope"),
    CorpusEntry("max_top_subarray", "2d/2d", "Failed", None, "table1",
                dict(_2D),
                notes="no efficient lifting exists"),
]

SMOKE = ("sum", "min_max", "mbbs", "bp", "lcs")


def by_name(name):
    for e in ENTRIES:
        if e.name == name:
            return e
    raise KeyError(name)


def names():
    return [e.name for e in ENTRIES]
