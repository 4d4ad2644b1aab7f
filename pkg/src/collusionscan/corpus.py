"""The fourteen-app fixture corpus and its expected filter matrix.

Four colluding sets (document extractor 1-2, botnet 3-6, contact
extractor 7-9, location stealer 12-13) plus three clean apps (10, 11,
14), realised as descriptor fixtures whose permissions and channels are
chosen so the rule filter reproduces the expected matrix exactly,
including its over-approximation false positives. Apps 12-14 carry IR
bodies for the model checker (sender, publishing receiver, and a
receiver that publishes something else).
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from .app_model import AppDescriptor, ThreatKind, parse_descriptor
from .app_model import THREAT_BY_CODE

CORPUS_IDS = tuple(str(i) for i in range(1, 15))


class Classification(enum.Enum):
    TruePositive = "tp"
    FalsePositive = "fp"


@dataclass(frozen=True)
class GoldenMatrix:
    """Transcription of the expected filter output with TP/FP labels."""

    cells: Mapping[tuple[str, str], frozenset[tuple[ThreatKind, Classification]]]

    def threat_cells(self) -> dict[tuple[str, str], frozenset[ThreatKind]]:
        return {
            pair: frozenset(threat for threat, _ in entries)
            for pair, entries in self.cells.items()
        }

    def true_positives(self) -> set[tuple[str, str, ThreatKind]]:
        return {
            (src, dst, threat)
            for (src, dst), entries in self.cells.items()
            for threat, cls in entries
            if cls is Classification.TruePositive
        }


def _data_text(name: str) -> str:
    return resources.files("collusionscan").joinpath("data", name).read_text("utf-8")


def load_corpus() -> list[AppDescriptor]:
    """The 14 fixture descriptors, ordered by app id."""
    out = []
    for app_id in CORPUS_IDS:
        name = f"corpus/app{int(app_id):02d}.json"
        out.append(parse_descriptor(_data_text(name), source=name))
    return out


def load_app(app_id: str) -> AppDescriptor:
    name = f"corpus/app{int(app_id):02d}.json"
    return parse_descriptor(_data_text(name), source=name)


def golden_matrix() -> GoldenMatrix:
    """Expected matrix, parsed from the checked-in long-form CSV."""
    reader = csv.DictReader(io.StringIO(_data_text("golden_matrix.csv")))
    cells: dict[tuple[str, str], set[tuple[ThreatKind, Classification]]] = {}
    for row in reader:
        key = (row["src"], row["dst"])
        entry = (THREAT_BY_CODE[row["threat"]], Classification(row["class"]))
        cells.setdefault(key, set()).add(entry)
    return GoldenMatrix({pair: frozenset(entries) for pair, entries in cells.items()})
