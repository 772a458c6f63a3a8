"""Measurement stack: per-class and per-category precision/recall/F1,
micro-averaged F1 over positive classes, bootstrap percentile confidence
intervals, and distance-binned F1 curves.

All metrics are reported in percent.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .data import ConfigError, InputError
from .tensor import make_rng


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    gold: str
    pred: str
    distance: int


def _prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def micro_f1(records: Sequence[PredictionRecord], positive_classes: Iterable[str]) -> Tuple[float, float, float]:
    """Pooled precision/recall/F1 over the positive classes."""
    if not records:
        raise InputError("micro_f1 needs at least one record")
    positive = set(positive_classes)
    if not positive:
        raise InputError("positive class set is empty")
    tp = fp = fn = 0
    for rec in records:
        if rec.pred in positive:
            if rec.gold == rec.pred:
                tp += 1
            else:
                fp += 1
        if rec.gold in positive and rec.pred != rec.gold:
            fn += 1
    return _prf(tp, fp, fn)


def per_class_and_category(
    records: Sequence[PredictionRecord],
    class_to_category: Mapping[str, str],
    positive_classes: Iterable[str],
) -> Dict[str, dict]:
    """One-vs-rest rows per positive class plus micro aggregates per
    category."""
    if not records:
        raise InputError("per_class_and_category needs at least one record")
    positive = list(positive_classes)
    for cls in positive:
        if cls not in class_to_category:
            raise ConfigError(f"positive class '{cls}' missing from the category map")

    classes: Dict[str, dict] = {}
    for cls in positive:
        tp = sum(1 for r in records if r.gold == cls and r.pred == cls)
        fp = sum(1 for r in records if r.pred == cls and r.gold != cls)
        fn = sum(1 for r in records if r.gold == cls and r.pred != cls)
        p, r_, f1 = _prf(tp, fp, fn)
        classes[cls] = {"precision": p, "recall": r_, "f1": f1, "support": tp + fn}

    categories: Dict[str, dict] = {}
    for category in sorted({class_to_category[c] for c in positive}):
        members = [c for c in positive if class_to_category[c] == category]
        p, r_, f1 = micro_f1(records, members)
        support = sum(1 for r in records if r.gold in members)
        categories[category] = {"precision": p, "recall": r_, "f1": f1, "support": support, "classes": members}
    return {"classes": classes, "categories": categories}


def bootstrap_ci(
    records: Sequence[PredictionRecord],
    metric: Callable[[Sequence[PredictionRecord]], float],
    b: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> Tuple[float, float]:
    """Percentile interval from ``b`` full-size resamples with replacement.
    Replicate i draws from an rng seeded with seed XOR i, so serial and
    parallel evaluation orders agree."""
    if not records:
        raise InputError("bootstrap_ci needs at least one record")
    if b < 100:
        raise InputError("bootstrap needs b >= 100")
    if not (0.0 < level < 1.0):
        raise InputError("confidence level must lie in (0, 1)")
    n = len(records)
    stats = np.empty(b)
    for i in range(b):
        rng = make_rng(seed ^ i)
        idx = rng.integers(0, n, size=n)
        stats[i] = metric([records[j] for j in idx])
    lo = float(np.percentile(stats, 100.0 * (1.0 - level) / 2.0))
    hi = float(np.percentile(stats, 100.0 * (1.0 + level) / 2.0))
    return lo, hi


def distance_curve(
    records: Sequence[PredictionRecord],
    positive_classes: Iterable[str],
    window: int = 2,
    min_support: int = 20,
) -> List[Tuple[int, float]]:
    """F1 per concept distance d, computed over records whose distance
    falls in [d - window, d + window]. The curve is truncated at the
    largest d whose exact-distance count exceeds ``min_support``."""
    if not records:
        raise InputError("distance_curve needs at least one record")
    counts = Counter(r.distance for r in records)
    eligible = [d for d, c in counts.items() if c > min_support]
    if not eligible:
        warnings.warn(f"no distance has more than {min_support} records; curve is empty")
        return []
    d_max = max(eligible)
    points: List[Tuple[int, float]] = []
    for d in range(1, d_max + 1):
        subset = [r for r in records if d - window <= r.distance <= d + window]
        if not subset:
            continue
        _, _, f1 = micro_f1(subset, positive_classes)
        points.append((d, f1))
    return points


# ---------------------------------------------------------------------------
# report assembly and serialization
# ---------------------------------------------------------------------------


def build_report(
    records: Sequence[PredictionRecord],
    class_to_category: Mapping[str, str],
    positive_classes: Sequence[str],
    with_ci: bool = False,
    b: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    distance_window: int = 2,
    distance_min_support: int = 20,
) -> dict:
    p, r, f1 = micro_f1(records, positive_classes)
    tables = per_class_and_category(records, class_to_category, positive_classes)
    report = {
        "micro": {"precision": p, "recall": r, "f1": f1, "support": len(records)},
        "classes": tables["classes"],
        "categories": tables["categories"],
        "distance_curve": [
            {"distance": d, "f1": f}
            for d, f in distance_curve(records, positive_classes, distance_window, distance_min_support)
        ],
    }
    if with_ci:
        report["micro"]["f1_ci"] = bootstrap_ci(
            records, lambda rs: micro_f1(rs, positive_classes)[2], b=b, level=level, seed=seed
        )
        for cls, row in report["classes"].items():
            row["f1_ci"] = bootstrap_ci(
                records, lambda rs, c=cls: micro_f1(rs, [c])[2], b=b, level=level, seed=seed
            )
    return report


def format_report(report: dict) -> str:
    """Human-readable table; numbers in percent with one decimal."""
    lines = []

    def row(name: str, cells: dict) -> str:
        base = f"{name:<12} P={cells['precision']:5.1f}  R={cells['recall']:5.1f}  F1={cells['f1']:5.1f}  n={cells['support']}"
        if "f1_ci" in cells:
            lo, hi = cells["f1_ci"]
            base += f"  F1 95% CI [{lo:.1f}, {hi:.1f}]"
        return base

    lines.append("== per-class ==")
    for cls, cells in report["classes"].items():
        lines.append(row(cls, cells))
    lines.append("== per-category ==")
    for cat, cells in report["categories"].items():
        lines.append(row(cat, cells))
    lines.append("== micro (positive classes) ==")
    lines.append(row("micro", report["micro"]))
    if report.get("distance_curve"):
        lines.append("== distance curve ==")
        for pt in report["distance_curve"]:
            lines.append(f"d={pt['distance']:<4d} F1={pt['f1']:5.1f}")
    return "\n".join(lines) + "\n"


def write_predictions_tsv(path: str, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_id\tgold\tpred\tdistance\n")
        for rec in records:
            fh.write(f"{rec.sample_id}\t{rec.gold}\t{rec.pred}\t{rec.distance}\n")


def read_predictions_tsv(path: str) -> List[PredictionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["sample_id", "gold", "pred", "distance"]:
            raise InputError(f"{path}: unexpected predictions header {header!r}")
        for line in fh:
            sample_id, gold, pred, distance = line.rstrip("\n").split("\t")
            records.append(PredictionRecord(sample_id, gold, pred, int(distance)))
    return records


def write_report_json(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
