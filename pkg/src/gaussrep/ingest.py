"""DOTA v1.0 annotation text files.

One object per line::

    x1 y1 x2 y2 x3 y3 x4 y4 category difficult

``imagesource:`` and ``gsd:`` headers and blank lines are skipped. Bad lines
become :class:`DotaParseError` entries; parsing a file never aborts on them.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DegenerateCovarianceError, GaussRepError, InvalidInputError
from .geometry import Qbb, fit_gaussian_mle, gaussian_to_obb

log = logging.getLogger(__name__)

HEADER_PREFIXES = ("imagesource:", "gsd:")


class DotaParseError(GaussRepError):
    def __init__(self, line_no: int, message: str, source: str = ""):
        super().__init__(f"{source}:{line_no}: {message}" if source else f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message
        self.source = source

    def to_json(self) -> dict:
        return {"source": self.source, "line": self.line_no, "message": self.message}


@dataclass(frozen=True)
class AnnotationRecord:
    qbb: Qbb
    category: str
    difficult: bool = False
    source: str = field(default="", compare=False)
    line_no: int = field(default=0, compare=False)

    @property
    def coords(self) -> list[float]:
        return self.qbb.corners.reshape(-1).tolist()


def parse_dota_line(line: str, line_no: int = 0, source: str = "") -> AnnotationRecord | None:
    """Parse one line; ``None`` for headers and blanks, :class:`DotaParseError` otherwise."""
    text = line.strip()
    if not text or text.startswith(HEADER_PREFIXES):
        return None
    tokens = text.split()
    if len(tokens) not in (9, 10):
        raise DotaParseError(line_no, f"expected 9 or 10 tokens, got {len(tokens)}", source)
    coords = []
    for k, tok in enumerate(tokens[:8]):
        try:
            value = float(tok)
        except ValueError:
            raise DotaParseError(line_no, f"coordinate {k + 1} is not a number: {tok!r}", source) from None
        if not math.isfinite(value):
            raise DotaParseError(line_no, f"coordinate {k + 1} is not finite: {tok!r}", source)
        coords.append(value)
    category = tokens[8]
    if len(tokens) == 10:
        difficult = tokens[9] != "0"
    else:
        log.warning("%s:%d: missing difficult flag, assuming 0", source or "<line>", line_no)
        difficult = False
    qbb = Qbb(np.array(coords).reshape(4, 2))
    return AnnotationRecord(qbb, category, difficult, source, line_no)


def parse_dota_text(text: str, source: str = "") -> tuple[list[AnnotationRecord], list[DotaParseError]]:
    records, errors = [], []
    for n, line in enumerate(text.splitlines(), start=1):
        try:
            rec = parse_dota_line(line, n, source)
        except DotaParseError as exc:
            errors.append(exc)
            continue
        if rec is not None:
            records.append(rec)
    return records, errors


def parse_dota_file(path) -> tuple[list[AnnotationRecord], list[DotaParseError]]:
    path = Path(path)
    text = path.read_text(encoding="utf-8", errors="replace")
    return parse_dota_text(text, str(path))


def _num(v: float) -> str:
    return f"{v:.6g}"


def format_dota_line(rec: AnnotationRecord) -> str:
    coords = " ".join(_num(v) for v in rec.coords)
    return f"{coords} {rec.category} {1 if rec.difficult else 0}"


def write_dota(records: Iterable[AnnotationRecord], path) -> None:
    lines = [format_dota_line(r) + "\n" for r in records]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


@dataclass
class DatasetSummary:
    counts: dict[str, int]
    mean_aspect_ratio: dict[str, float]
    parse_errors: int = 0
    degenerate: int = 0
    errors: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "categories": [
                {"category": c, "count": self.counts[c], "mAR": self.mean_aspect_ratio.get(c)}
                for c in self.counts
            ],
            "parse_errors": self.parse_errors,
            "degenerate": self.degenerate,
            "errors": self.errors,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "count", "mAR"])
        for c, n in self.counts.items():
            mar = self.mean_aspect_ratio.get(c)
            writer.writerow([c, n, "" if mar is None else repr(mar)])
        return buf.getvalue()


def record_aspect_ratio(rec: AnnotationRecord) -> float:
    """Long/short side of the box decoded from the record's fitted Gaussian."""
    box = gaussian_to_obb(fit_gaussian_mle(rec.qbb))
    return box.w / box.h


def summarize_dataset(
    records: Iterable[AnnotationRecord], errors: Iterable[DotaParseError] = ()
) -> DatasetSummary:
    """Per-category counts and mean aspect ratio.

    Sums use ``math.fsum`` and categories are sorted, so the result does not
    depend on the order in which files or records arrive. Records whose
    corners collapse to a point are counted but left out of the mean.
    """
    counts: dict[str, int] = {}
    ratios: dict[str, list[float]] = {}
    degenerate = 0
    for rec in records:
        counts[rec.category] = counts.get(rec.category, 0) + 1
        try:
            ratios.setdefault(rec.category, []).append(record_aspect_ratio(rec))
        except (DegenerateCovarianceError, InvalidInputError):
            degenerate += 1
    errors = sorted((e.to_json() for e in errors), key=lambda e: (e["source"], e["line"]))
    cats = sorted(counts)
    return DatasetSummary(
        {c: counts[c] for c in cats},
        {c: math.fsum(ratios[c]) / len(ratios[c]) for c in cats if ratios.get(c)},
        len(errors),
        degenerate,
        errors,
    )
