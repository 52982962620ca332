"""Metrics: accuracy, macro-F1, Pearson, all-in-one accuracy and Cohen's kappa."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .errors import DegenerateInput, EmptyInput, LengthMismatch, MissingGold
from .taxonomy import DIMENSIONS, LabelRecord

REPORT_SCHEMA = "threadattack.eval/1"

_ROW_NAMES = {
    "attack_or_not": "Attack_or_not",
    "attack_form": "Attack_form",
    "attack_target": "Attack_target",
    "attack_type": "Attack_type",
    "attack_intent": "Attack_intent",
}


def _check_pair(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")
    if not preds:
        raise EmptyInput("no items to score")


def _labels(items: Sequence, dimension: str | None) -> list:
    if dimension is None:
        return list(items)
    return [r.get(dimension) for r in items]


def accuracy(preds: Sequence, golds: Sequence, dimension: str | None = None) -> float:
    """Exact-match rate. With ``dimension``, items are records and that field is compared."""
    _check_pair(preds, golds)
    p, g = _labels(preds, dimension), _labels(golds, dimension)
    return sum(a == b for a, b in zip(p, g)) / len(g)


def macro_f1(preds: Sequence, golds: Sequence, dimension: str | None = None) -> float:
    """Unweighted mean of per-class F1 over every class seen in golds or predictions."""
    _check_pair(preds, golds)
    p, g = _labels(preds, dimension), _labels(golds, dimension)
    tp: Counter = Counter()
    pred_n = Counter(p)
    gold_n = Counter(g)
    for a, b in zip(p, g):
        if a == b:
            tp[a] += 1
    classes = set(pred_n) | set(gold_n)
    scores = []
    for c in classes:
        denom = pred_n[c] + gold_n[c]
        scores.append(2 * tp[c] / denom if denom else 0.0)
    return math.fsum(scores) / len(scores)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise LengthMismatch(f"series lengths differ: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise DegenerateInput("pearson needs at least two points")
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("pearson correlation is undefined for a constant series")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def all_in_one_accuracy(pred_records: Sequence[LabelRecord], gold_records: Sequence[LabelRecord]) -> float:
    """Share of items whose five categorical labels all match."""
    _check_pair(pred_records, gold_records)
    hits = sum(p.categorical() == g.categorical() for p, g in zip(pred_records, gold_records))
    return hits / len(gold_records)


# -- agreement --------------------------------------------------------------

@dataclass(frozen=True)
class AgreementTable:
    """Square contingency table; rows are source A, columns source B."""

    labels: tuple
    matrix: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        k = len(self.labels)
        if len(self.matrix) != k or any(len(row) != k for row in self.matrix):
            raise ValueError("agreement matrix must be square over the label vocabulary")
        if any(v < 0 for row in self.matrix for v in row):
            raise ValueError("agreement counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(map(sum, self.matrix))

    @classmethod
    def from_labels(cls, a_labels: Sequence[Hashable], b_labels: Sequence[Hashable]) -> "AgreementTable":
        if len(a_labels) != len(b_labels):
            raise LengthMismatch(f"{len(a_labels)} vs {len(b_labels)} labels")
        vocab = sorted(set(a_labels) | set(b_labels), key=lambda v: (type(v).__name__, str(v)))
        idx = {v: i for i, v in enumerate(vocab)}
        m = [[0] * len(vocab) for _ in vocab]
        for a, b in zip(a_labels, b_labels):
            m[idx[a]][idx[b]] += 1
        return cls(tuple(vocab), tuple(tuple(r) for r in m))


def kappa_from_table(table: AgreementTable) -> tuple[float, float]:
    """``(kappa, consistency_rate)``. Integer arithmetic until the final division."""
    n = table.total
    if n == 0:
        raise EmptyInput("agreement table is empty")
    k = len(table.labels)
    agree = sum(table.matrix[i][i] for i in range(k))
    rows = [sum(r) for r in table.matrix]
    cols = [sum(table.matrix[i][j] for i in range(k)) for j in range(k)]
    chance = sum(r * c for r, c in zip(rows, cols))  # p_e * n^2
    rate = agree / n
    if chance == n * n:
        return 1.0, rate
    return (agree * n - chance) / (n * n - chance), rate


def cohen_kappa(a_labels: Sequence[Hashable], b_labels: Sequence[Hashable]) -> tuple[float, float]:
    _check_pair(a_labels, b_labels)
    return kappa_from_table(AgreementTable.from_labels(a_labels, b_labels))


# -- reports ----------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: dict[str, float]
    f1: dict[str, float]
    harm_pearson: float | None
    conf_pearson: float | None
    all_in_one_acc: float
    evaluated: int
    diagnostics: int
    attack_only_pearson: bool = False

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA
        return d

    def rows(self) -> list[tuple[str, float | None]]:
        out: list[tuple[str, float | None]] = []
        for dim, name in _ROW_NAMES.items():
            out.append((f"{name}_Acc", self.accuracy[dim]))
            out.append((f"{name}_F1", self.f1[dim]))
        out.append(("Harm_Pearson", self.harm_pearson))
        out.append(("Conf_Pearson", self.conf_pearson))
        out.append(("All_in_One_Acc", self.all_in_one_acc))
        return out

    def format_table(self) -> str:
        rows = self.rows()
        width = max(len(name) for name, _ in rows)
        lines = [f"{'Metric'.ljust(width)}  Value"]
        for name, value in rows:
            lines.append(f"{name.ljust(width)}  {'n/a' if value is None else f'{value:.4f}'}")
        lines.append(f"{'Evaluated'.ljust(width)}  {self.evaluated}")
        lines.append(f"{'Diagnostics'.ljust(width)}  {self.diagnostics}")
        return "\n".join(lines)


def _safe_pearson(xs: list[float], ys: list[float]) -> float | None:
    try:
        return pearson(xs, ys)
    except DegenerateInput:
        return None


def evaluate(
    outcomes: Iterable,
    golds: Mapping[tuple, LabelRecord],
    attack_only_pearson: bool = False,
) -> EvalReport:
    """Score pipeline outcomes against gold records keyed by ``(block_id, coord)``.

    Diagnostic outcomes are counted but excluded. Pearson values are None
    when a series is constant.
    """
    outcomes = list(outcomes)
    scored = [o for o in outcomes if o.record is not None]
    diagnostics = len(outcomes) - len(scored)
    missing = [o.key for o in outcomes if o.key not in golds]
    if missing:
        raise MissingGold(missing)
    if not scored:
        raise EmptyInput("no successful outcomes to evaluate")
    preds = [o.record for o in scored]
    gold = [golds[o.key] for o in scored]

    acc = {dim: accuracy(preds, gold, dim) for dim in DIMENSIONS}
    f1 = {dim: macro_f1(preds, gold, dim) for dim in DIMENSIONS}

    pairs = list(zip(preds, gold))
    if attack_only_pearson:
        pairs = [(p, g) for p, g in pairs if g.is_attack]
    harm = _safe_pearson([p.hazard for p, _ in pairs], [g.hazard for _, g in pairs])
    conf = _safe_pearson([p.confidence for p, _ in pairs], [g.confidence for _, g in pairs])
    return EvalReport(acc, f1, harm, conf, all_in_one_accuracy(preds, gold), len(scored), diagnostics,
                      attack_only_pearson)
