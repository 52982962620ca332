"""Seven-dimension label schema: five categorical dimensions plus hazard and confidence."""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import EmptyInput, MalformedReply, RangeViolation, UnknownLabel
from .thread_model import Violation

SCALE_MIN = 0.0
SCALE_MAX = 100.0
NULL_CONFIDENCE = 100.0


class AttackPresence(str, Enum):
    EXPLICIT = "Explicit attack"
    IMPLICIT = "Implicit attack"
    NONE = "No attack"


class AttackForm(str, Enum):
    TARGETED = "Targeted"
    NON_TARGETED = "Non-targeted"
    NONE = "No attack"


class AttackTarget(str, Enum):
    INDIVIDUALS = "Individuals"
    GROUP = "Group"
    NONE = "No attack"


class AttackType(str, Enum):
    DISCRIMINATORY = "Discriminatory"
    SATIRICAL = "Satirical"
    ABUSIVE = "Abusive"
    THREAT = "Threat"
    DEMEANING = "Demeaning"
    OTHERS = "Others"
    NONE = "No attack"


class AttackIntent(str, Enum):
    RACISM = "Racism"
    GENDER_DICHOTOMY = "Gender dichotomy"
    HATE_SPEECH = "Hate speech"
    PERSONAL_ATTACKS = "Personal attacks"
    VERBAL_MOCKERY = "Verbal mockery"
    PERSONAL_INSULTS = "Personal insults"
    STEREOTYPES = "Stereotypes"
    SECURITY_THREAT = "Security threat"
    OTHERS = "Others"
    NONE = "No attack"


# external field name -> (record attribute, enum)
DIMENSIONS: dict[str, tuple[str, type[Enum]]] = {
    "attack_or_not": ("presence", AttackPresence),
    "attack_form": ("form", AttackForm),
    "attack_target": ("target", AttackTarget),
    "attack_type": ("type", AttackType),
    "attack_intent": ("intent", AttackIntent),
}
NUMERIC_FIELDS: dict[str, str] = {"hazard_level": "hazard", "confidence_level": "confidence"}
RECORD_FIELDS = (*DIMENSIONS, *NUMERIC_FIELDS)

_DIM_ALIASES = {
    "presence": "attack_or_not",
    "attackornot": "attack_or_not",
    "form": "attack_form",
    "target": "attack_target",
    "type": "attack_type",
    "intent": "attack_intent",
}


def _key(raw: str) -> str:
    return re.sub(r"[^0-9a-z\u0080-\uffff]+", "", raw.strip().lower())


# wording used in annotation guidelines, mapped onto the canonical vocabulary
_ALIASES: dict[str, dict[str, str]] = {
    "attack_or_not": {"explicit": "EXPLICIT", "implicit": "IMPLICIT", "none": "NONE", "null": "NONE",
                      "notattack": "NONE", "nonattack": "NONE"},
    "attack_form": {"untargeted": "NON_TARGETED", "nottargeted": "NON_TARGETED"},
    "attack_target": {"individual": "INDIVIDUALS", "groups": "GROUP"},
    "attack_type": {"other": "OTHERS", "discrimination": "DISCRIMINATORY", "satire": "SATIRICAL",
                    "threats": "THREAT"},
    "attack_intent": {
        "sexism": "GENDER_DICHOTOMY",
        "safetythreats": "SECURITY_THREAT",
        "safetythreat": "SECURITY_THREAT",
        "securitythreats": "SECURITY_THREAT",
        "other": "OTHERS",
        "personalattack": "PERSONAL_ATTACKS",
        "personalinsult": "PERSONAL_INSULTS",
        "stereotype": "STEREOTYPES",
        "racist": "RACISM",
    },
}
_COMMON_NONE = ("none", "null", "noattack", "na")


def _build_lookup() -> dict[str, dict[str, Enum]]:
    table: dict[str, dict[str, Enum]] = {}
    for dim, (_, enum) in DIMENSIONS.items():
        lut: dict[str, Enum] = {}
        for member in enum:
            lut[_key(member.value)] = member
            lut[_key(member.name)] = member
        for alias in _COMMON_NONE:
            lut.setdefault(alias, enum.NONE)
        for alias, name in _ALIASES.get(dim, {}).items():
            lut[alias] = enum[name]
        table[dim] = lut
    return table


_LOOKUP = _build_lookup()


def canonical_dimension(dimension: str) -> str:
    key = dimension.strip().lower()
    if key in DIMENSIONS:
        return key
    alias = _DIM_ALIASES.get(_key(dimension))
    if alias is None:
        raise KeyError(f"unknown label dimension {dimension!r}")
    return alias


def parse_label(dimension: str, raw: str | Enum) -> Enum:
    """Resolve a raw label string for ``dimension`` (case and punctuation insensitive)."""
    dim = canonical_dimension(dimension)
    enum = DIMENSIONS[dim][1]
    if isinstance(raw, enum):
        return raw
    if not isinstance(raw, str):
        raise UnknownLabel(dim, repr(raw))
    member = _LOOKUP[dim].get(_key(raw))
    if member is None:
        raise UnknownLabel(dim, raw)
    return member


@dataclass(frozen=True)
class LabelRecord:
    presence: AttackPresence
    form: AttackForm
    target: AttackTarget
    type: AttackType
    intent: AttackIntent
    hazard: float
    confidence: float

    @property
    def is_attack(self) -> bool:
        return self.presence is not AttackPresence.NONE

    def categorical(self) -> tuple[Enum, ...]:
        return (self.presence, self.form, self.target, self.type, self.intent)

    def get(self, dimension: str) -> Any:
        dim = dimension if dimension in NUMERIC_FIELDS else canonical_dimension(dimension)
        attr = DIMENSIONS[dim][0] if dim in DIMENSIONS else NUMERIC_FIELDS[dim]
        return getattr(self, attr)

    def with_presence(self, presence: AttackPresence) -> "LabelRecord":
        return replace(self, presence=presence)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {name: getattr(self, attr).value for name, (attr, _) in DIMENSIONS.items()}
        for name, attr in NUMERIC_FIELDS.items():
            out[name] = float(getattr(self, attr))
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, defaults: "LabelRecord | None" = None) -> "LabelRecord":
        """Build from external field names. Missing fields fall back to ``defaults`` if given."""
        kwargs: dict[str, Any] = {}
        for name, (attr, _) in DIMENSIONS.items():
            if name in data and data[name] is not None:
                kwargs[attr] = parse_label(name, data[name])
            elif defaults is not None:
                kwargs[attr] = getattr(defaults, attr)
            else:
                raise KeyError(name)
        for name, attr in NUMERIC_FIELDS.items():
            if name in data and data[name] is not None:
                kwargs[attr] = parse_scale(name, data[name])
            elif defaults is not None:
                kwargs[attr] = getattr(defaults, attr)
            else:
                raise KeyError(name)
        return cls(**kwargs)


def parse_scale(name: str, raw: Any) -> float:
    """Parse a hazard/confidence value and check it lies in [0, 100]."""
    if isinstance(raw, bool):
        raise MalformedReply(f"{name}: boolean is not a number")
    try:
        value = float(str(raw).strip().rstrip("%")) if isinstance(raw, str) else float(raw)
    except (TypeError, ValueError):
        raise MalformedReply(f"{name}: {raw!r} is not a number") from None
    if not math.isfinite(value) or not SCALE_MIN <= value <= SCALE_MAX:
        raise RangeViolation(f"{name}: {value} outside [{SCALE_MIN:g}, {SCALE_MAX:g}]")
    return value


def null_record(confidence: float = NULL_CONFIDENCE) -> LabelRecord:
    return LabelRecord(
        AttackPresence.NONE, AttackForm.NONE, AttackTarget.NONE, AttackType.NONE, AttackIntent.NONE,
        0.0, float(confidence),
    )


def validate_record(record: LabelRecord) -> list[Violation]:
    out: list[Violation] = []
    for name, (attr, enum) in DIMENSIONS.items():
        if not isinstance(getattr(record, attr), enum):
            out.append(Violation("TypeViolation", name, f"{getattr(record, attr)!r} is not a {enum.__name__}"))
    for name, attr in NUMERIC_FIELDS.items():
        v = getattr(record, attr)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            out.append(Violation("RangeViolation", name, f"{v!r} is not a finite number"))
        elif not SCALE_MIN <= v <= SCALE_MAX:
            out.append(Violation("RangeViolation", name, f"{v} outside [{SCALE_MIN:g}, {SCALE_MAX:g}]"))
    if record.presence is AttackPresence.NONE:
        for name, (attr, _) in DIMENSIONS.items():
            if attr == "presence":
                continue
            v = getattr(record, attr)
            if getattr(v, "name", None) != "NONE":
                out.append(Violation("Consistency", name, f"non-attack record carries {name}={v}"))
        if record.hazard != 0:
            out.append(Violation("Consistency", "hazard_level", f"non-attack record has hazard {record.hazard}"))
    return out


# -- distribution statistics -------------------------------------------------

@dataclass(frozen=True)
class NumericSummary:
    mean: float
    std: float
    max: float


@dataclass(frozen=True)
class LabelDistribution:
    total: int
    categorical: dict[str, dict[str, tuple[int, float]]]
    numeric: dict[str, NumericSummary]

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "categorical": {
                dim: {label: {"count": c, "percent": p} for label, (c, p) in values.items()}
                for dim, values in self.categorical.items()
            },
            "numeric": {k: {"mean": v.mean, "std": v.std, "max": v.max} for k, v in self.numeric.items()},
        }


def categorical_shares(counts: Mapping[Any, int], decimals: int = 1) -> dict[Any, tuple[int, float]]:
    """``value -> (count, percent of the total)``, rounded half-up to ``decimals`` places."""
    total = sum(counts.values())
    if total <= 0:
        raise EmptyInput("no counts to summarise")
    scale = 100 * 10**decimals
    out = {}
    for value, count in counts.items():
        units = (2 * scale * count + total) // (2 * total)
        out[value] = (count, units / 10**decimals)
    return out


def label_distribution(records: Iterable[LabelRecord]) -> LabelDistribution:
    records = list(records)
    if not records:
        raise EmptyInput("label_distribution needs at least one record")
    categorical = {}
    for name, (attr, enum) in DIMENSIONS.items():
        counts = {m: 0 for m in enum}
        for r in records:
            counts[getattr(r, attr)] += 1
        shares = categorical_shares({m: c for m, c in counts.items() if c})
        categorical[name] = {m.value: shares[m] for m in enum if m in shares}
    numeric = {}
    for name, attr in NUMERIC_FIELDS.items():
        vals = [float(getattr(r, attr)) for r in records]
        numeric[name] = NumericSummary(statistics.fmean(vals), statistics.pstdev(vals), max(vals))
    return LabelDistribution(len(records), categorical, numeric)


def format_distribution(dist: LabelDistribution) -> str:
    """Plain-text table: dimension, value, count, percent; numeric rows give mean/std/max."""
    titles = {
        "attack_or_not": "Attack or not",
        "attack_form": "Attack form",
        "attack_target": "Attack target",
        "attack_type": "Attack type",
        "attack_intent": "Attack intent",
        "hazard_level": "Hazard Level",
        "confidence_level": "Confidence Level",
    }
    rows = [("Label", "Type", "Distribution", "Count", "Percent")]
    for dim, values in dist.categorical.items():
        for i, (label, (count, pct)) in enumerate(values.items()):
            rows.append((titles[dim] if i == 0 else "", "Class." if i == 0 else "", label, f"{count:,}", f"{pct:.1f}%"))
    for name, s in dist.numeric.items():
        for i, (stat, v) in enumerate((("Average", s.mean), ("Std. dev.", s.std), ("Max", s.max))):
            rows.append((titles[name] if i == 0 else "", "Num." if i == 0 else "", stat, f"{v:.2f}", "-"))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = []
    for r in rows:
        lines.append("  ".join(
            cell.rjust(w) if i in (3, 4) else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))
        ).rstrip())
    return "\n".join(lines)

