"""Corpus loading, seeded splits, per-role partitions and flat-dataset import.

Split shuffling recipe (reproducible in any language): each block gets the key
``sha256(f"{seed}:{block_id}")`` as lowercase hex; blocks are ordered by
``(key, block_id)``. The first ``floor(n * r_val)`` shuffled blocks go to
validation, the next ``floor(n * r_test)`` to test and the rest to train.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .context import ContextPolicy, render_context, select_context
from .errors import (
    BadRatios,
    ConfigError,
    MissingGold,
    ParseError,
    ThreadAttackError,
    UnknownDesignatedBlock,
    UnmappedClass,
    ValidationError,
)
from .taxonomy import AttackPresence, LabelRecord, null_record, validate_record
from .thread_model import (
    SYNTHESIZED_TIMESTAMPS,
    CommentNode,
    Coordinate,
    RawComment,
    ThreadBlock,
    block_from_record,
    block_to_record,
    build_thread_block,
    check_limits,
    dumps_record,
)

PARTITION_SCHEMA = "threadattack.partition/1"
GoldKey = tuple  # (block_id, Coordinate)


@dataclass
class Corpus:
    blocks: list[ThreadBlock]
    gold: dict[GoldKey, LabelRecord] = field(default_factory=dict)
    provenance: str = ""
    import_report: dict[str, Any] | None = None

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def n_comments(self) -> int:
        return sum(len(b) for b in self.blocks)

    def block(self, block_id: str) -> ThreadBlock:
        for b in self.blocks:
            if b.block_id == block_id:
                return b
        raise KeyError(block_id)

    def labeled(self) -> Iterable[tuple[ThreadBlock, CommentNode, LabelRecord | None]]:
        for b in self.blocks:
            for n in b.nodes:
                yield b, n, self.gold.get((b.block_id, n.coord))

    def subset(self, block_ids: Iterable[str], provenance: str = "") -> "Corpus":
        keep = set(block_ids)
        blocks = [b for b in self.blocks if b.block_id in keep]
        gold = {k: v for k, v in self.gold.items() if k[0] in keep}
        return Corpus(blocks, gold, provenance or self.provenance)

    def validate(self) -> list[str]:
        problems = []
        seen = set()
        coords = {}
        for b in self.blocks:
            if b.block_id in seen:
                problems.append(f"duplicate block id {b.block_id!r}")
            seen.add(b.block_id)
            coords[b.block_id] = {n.coord for n in b.nodes}
        for (bid, coord), rec in self.gold.items():
            if coord not in coords.get(bid, ()):
                problems.append(f"gold label for {bid}:{tuple(coord)} has no comment")
            for v in validate_record(rec):
                problems.append(f"gold label for {bid}:{tuple(coord)}: {v}")
        return problems


# -- thread JSONL ----------------------------------------------------------------

def _gold_from_record(rec: dict, block: ThreadBlock, line: int | None) -> dict[GoldKey, LabelRecord]:
    raw = rec.get("gold")
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ParseError("gold must be an object keyed by comment id", line=line, field="gold")
    out = {}
    for cid, fields_ in raw.items():
        try:
            node = block.node_by_id(cid)
        except KeyError:
            raise ValidationError(f"block {block.block_id!r}: gold references unknown comment {cid!r}") from None
        if not isinstance(fields_, dict):
            raise ParseError("gold label must be an object", line=line, field=f"gold.{cid}")
        try:
            label = LabelRecord.from_dict(fields_)
        except KeyError as exc:
            raise ParseError("gold label is missing a field", line=line, field=f"gold.{cid}.{exc.args[0]}") from None
        except (ValueError, ThreadAttackError) as exc:
            raise ParseError(f"bad gold label: {exc}", line=line, field=f"gold.{cid}") from None
        problems = validate_record(label)
        if problems:
            raise ValidationError(f"block {block.block_id!r} gold for {cid!r}: {problems[0]}", problems)
        out[(block.block_id, node.coord)] = label
    return out


def read_thread_jsonl(
    lines: Iterable[str],
    *,
    max_depth: int | None = None,
    max_nodes: int | None = None,
    provenance: str = "",
) -> Corpus:
    blocks: list[ThreadBlock] = []
    gold: dict[GoldKey, LabelRecord] = {}
    for i, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=i) from None
        try:
            block = block_from_record(rec, line=i, require_coords=False)
        except (ParseError, ValidationError):
            raise
        except ThreadAttackError as exc:
            raise ValidationError(f"line {i}: {type(exc).__name__}: {exc}") from None
        check_limits(block, max_depth, max_nodes)
        blocks.append(block)
        gold.update(_gold_from_record(rec, block, i))
    corpus = Corpus(blocks, gold, provenance)
    problems = corpus.validate()
    if problems:
        raise ValidationError(f"{len(problems)} corpus problem(s): {problems[0]}", problems)
    return corpus


def serialize_corpus(corpus: Corpus) -> list[str]:
    """JSONL lines (no trailing newlines) in corpus block order."""
    by_block: dict[str, dict[Coordinate, LabelRecord]] = {}
    for (bid, coord), rec in corpus.gold.items():
        by_block.setdefault(bid, {})[coord] = rec
    out = []
    for b in corpus.blocks:
        rec = block_to_record(b)
        labels = by_block.get(b.block_id)
        if labels:
            rec["gold"] = {n.id: labels[n.coord].to_dict() for n in b.nodes if n.coord in labels}
        out.append(dumps_record(rec))
    return out


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in serialize_corpus(corpus)), encoding="utf-8")


def load_corpus(
    path: str | Path,
    format: str = "thread_jsonl",
    mapping: "FlatMapping | Mapping[str, Any] | str | Path | None" = None,
    *,
    max_depth: int | None = None,
    max_nodes: int | None = None,
) -> Corpus:
    path = Path(path)
    if format == "thread_jsonl":
        with path.open(encoding="utf-8") as fh:
            return read_thread_jsonl(fh, max_depth=max_depth, max_nodes=max_nodes, provenance=str(path))
    if format == "flat_csv":
        if mapping is None:
            raise ConfigError("flat_csv corpora need a mapping config")
        return import_flat(path, mapping)
    raise ConfigError(f"unknown corpus format {format!r}")


# -- splitting --------------------------------------------------------------

def shuffle_key(seed: int, block_id: str) -> str:
    return hashlib.sha256(f"{seed}:{block_id}".encode("utf-8")).hexdigest()


def seeded_order(block_ids: Iterable[str], seed: int) -> list[str]:
    return sorted(block_ids, key=lambda b: (shuffle_key(seed, b), b))


def check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise BadRatios(f"need three ratios (train, val, test), got {len(ratios)}")
    if any(not math.isfinite(r) or r <= 0 for r in ratios):
        raise BadRatios(f"ratios must be positive: {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1, got {sum(ratios):.12g}")
    return tuple(float(r) for r in ratios)  # type: ignore[return-value]


def _floor(x: float) -> int:
    # guards against 0.1 * 30 == 3.0000000000000004 style noise either way
    return math.floor(x + 1e-9)


def split_corpus(
    corpus: Corpus,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    designated_test: Iterable[str] | None = None,
) -> tuple[Corpus, Corpus, Corpus]:
    """Split at block granularity into (train, val, test).

    With ``designated_test`` those blocks form the test set and the remaining
    blocks are split train/val by the renormalised first two ratios.
    """
    r_train, r_val, r_test = check_ratios(ratios)
    ids = [b.block_id for b in corpus.blocks]
    order = seeded_order(ids, seed)
    n = len(order)
    if designated_test is not None:
        test_ids = list(dict.fromkeys(designated_test))
        unknown = sorted(set(test_ids) - set(ids))
        if unknown:
            raise UnknownDesignatedBlock(f"designated test blocks not in corpus: {unknown[:5]}")
        test_set = set(test_ids)
        rest = [b for b in order if b not in test_set]
        n_val = _floor(len(rest) * r_val / (r_train + r_val))
        val_ids, train_ids = rest[:n_val], rest[n_val:]
    else:
        n_val, n_test = _floor(n * r_val), _floor(n * r_test)
        val_ids = order[:n_val]
        test_ids = order[n_val:n_val + n_test]
        train_ids = order[n_val + n_test:]
    return (
        corpus.subset(train_ids, f"{corpus.provenance}#train"),
        corpus.subset(val_ids, f"{corpus.provenance}#val"),
        corpus.subset(test_ids, f"{corpus.provenance}#test"),
    )


# -- per-role partitions --------------------------------------------------------

@dataclass(frozen=True)
class PartitionItem:
    block_id: str
    coord: Coordinate
    comment: str
    context: str | None = None
    label: bool | None = None
    record: LabelRecord | None = None

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"block_id": self.block_id, "level": self.coord.level, "seq": self.coord.seq,
                             "comment": self.comment}
        if self.context is not None:
            d["context"] = self.context
        if self.label is not None:
            d["label"] = self.label
        if self.record is not None:
            d["record"] = self.record.to_dict()
        return d


@dataclass
class ModulePartition:
    explicit_detector_set: list[PartitionItem]
    explicit_analyzer_set: list[PartitionItem]
    implicit_detector_set: list[PartitionItem]
    implicit_analyzer_set: list[PartitionItem]
    policy: ContextPolicy = ContextPolicy.SAME_LEVEL

    def sets(self) -> dict[str, list[PartitionItem]]:
        return {
            "explicit_detector": self.explicit_detector_set,
            "explicit_analyzer": self.explicit_analyzer_set,
            "implicit_detector": self.implicit_detector_set,
            "implicit_analyzer": self.implicit_analyzer_set,
        }

    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.sets().items()}


def partition_for_modules(
    corpus: Corpus,
    policy: ContextPolicy | str = ContextPolicy.SAME_LEVEL,
    max_context_entries: int | None = None,
) -> ModulePartition:
    """Training sets for the four roles, ordered by (block_id, level, seq)."""
    policy = ContextPolicy.parse(policy)
    missing = [(b.block_id, n.coord) for b, n, rec in corpus.labeled() if rec is None]
    if missing:
        raise MissingGold(missing)
    exd, exa, imd, ima = [], [], [], []
    for block in sorted(corpus.blocks, key=lambda b: b.block_id):
        for node in block.nodes:
            rec = corpus.gold[(block.block_id, node.coord)]
            explicit = rec.presence is AttackPresence.EXPLICIT
            exd.append(PartitionItem(block.block_id, node.coord, node.text, label=explicit))
            if explicit:
                exa.append(PartitionItem(block.block_id, node.coord, node.text, record=rec))
                continue
            ctx = render_context(select_context(block, node.coord, policy, max_context_entries))
            implicit = rec.presence is AttackPresence.IMPLICIT
            imd.append(PartitionItem(block.block_id, node.coord, node.text, ctx, label=implicit))
            if implicit:
                ima.append(PartitionItem(block.block_id, node.coord, node.text, ctx, record=rec))
    return ModulePartition(exd, exa, imd, ima, policy)


def write_partition(partition: ModulePartition, out_dir: str | Path) -> dict[str, Any]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, items in partition.sets().items():
        body = "".join(json.dumps(it.to_json(), ensure_ascii=False, separators=(",", ":")) + "\n" for it in items)
        path = out / f"{name}.jsonl"
        path.write_text(body, encoding="utf-8")
        files[name] = {"path": path.name, "count": len(items),
                       "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest()}
    manifest = {"schema_version": PARTITION_SCHEMA, "context_policy": partition.policy.value, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


# -- flat datasets ----------------------------------------------------------

@dataclass(frozen=True)
class FlatRule:
    name: str
    when: dict[str, str]
    label: LabelRecord

    def matches(self, row: Mapping[str, str]) -> bool:
        return all((row.get(k) or "").strip() == v for k, v in self.when.items())


def _label_template(data: Mapping[str, Any], where: str) -> LabelRecord:
    try:
        rec = LabelRecord.from_dict(data, defaults=null_record())
    except (ValueError, ThreadAttackError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    problems = validate_record(rec)
    if problems:
        raise ConfigError(f"{where}: {problems[0]}")
    return rec


@dataclass(frozen=True)
class FlatMapping:
    """How rows of a flat CSV become single-comment blocks with gold labels.

    Either ``class_column`` + ``classes`` (value -> label template) or an
    ordered list of ``rules`` (first match wins). Label templates are partial
    records completed from the null record.
    """

    text_column: str
    class_column: str | None = None
    classes: dict[str, LabelRecord] = field(default_factory=dict)
    rules: tuple[FlatRule, ...] = ()
    id_column: str | None = None
    block_prefix: str = "row"
    count_flags: tuple[str, ...] = ()
    delimiter: str = ","

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FlatMapping":
        if "text_column" not in data:
            raise ConfigError("mapping config needs text_column")
        classes = {str(k): _label_template(v, f"classes[{k!r}]") for k, v in (data.get("classes") or {}).items()}
        rules = tuple(
            FlatRule(r.get("name") or f"rule{i}", {k: str(v) for k, v in r.get("when", {}).items()},
                     _label_template(r.get("label", {}), f"rules[{i}]"))
            for i, r in enumerate(data.get("rules") or [])
        )
        if bool(classes) == bool(rules):
            raise ConfigError("mapping config needs exactly one of classes (with class_column) or rules")
        if classes and not data.get("class_column"):
            raise ConfigError("classes mapping needs class_column")
        return cls(
            text_column=data["text_column"],
            class_column=data.get("class_column"),
            classes=classes,
            rules=rules,
            id_column=data.get("id_column"),
            block_prefix=data.get("block_prefix", "row"),
            count_flags=tuple(data.get("count_flags") or ()),
            delimiter=data.get("delimiter", ","),
        )

    def classify(self, row: Mapping[str, str], row_no: int) -> tuple[str, LabelRecord]:
        if self.classes:
            value = (row.get(self.class_column) or "").strip()
            if value not in self.classes:
                raise UnmappedClass(f"row {row_no}: class {value!r} has no mapping")
            return value, self.classes[value]
        for rule in self.rules:
            if rule.matches(row):
                return rule.name, rule.label
        raise UnmappedClass(f"row {row_no}: no mapping rule matches")


def _coerce_mapping(mapping) -> FlatMapping:
    if isinstance(mapping, FlatMapping):
        return mapping
    if isinstance(mapping, (str, Path)):
        mapping = json.loads(Path(mapping).read_text(encoding="utf-8"))
    return FlatMapping.from_dict(mapping)


def _truthy(v: str | None) -> bool:
    return (v or "").strip().lower() in ("1", "true", "yes", "y", "t")


def import_flat(path: str | Path, mapping) -> Corpus:
    """Each CSV row becomes a one-comment block at (1, 1) with timestamp = row index.

    The returned corpus carries an ``import_report`` with per-class counts and
    percentage shares over imported rows.
    """
    cfg = _coerce_mapping(mapping)
    blocks: list[ThreadBlock] = []
    gold: dict[GoldKey, LabelRecord] = {}
    class_counts: dict[str, int] = {}
    flag_counts = {f: 0 for f in cfg.count_flags}
    failures: list[int] = []
    seen: set[str] = set()
    rows = 0
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=cfg.delimiter)
        if reader.fieldnames is None or cfg.text_column not in reader.fieldnames:
            raise ParseError(f"CSV header lacks text column {cfg.text_column!r}", line=1, field=cfg.text_column)
        for idx, row in enumerate(reader):
            rows += 1
            line_no = reader.line_num
            text = row.get(cfg.text_column)
            if text is None or None in row:
                failures.append(line_no)
                continue
            name, label = cfg.classify(row, line_no)
            bid = (row.get(cfg.id_column) or "").strip() if cfg.id_column else ""
            bid = bid or f"{cfg.block_prefix}{idx}"
            if bid in seen:
                raise ValidationError(f"row {line_no}: duplicate id {bid!r}")
            seen.add(bid)
            block = build_thread_block(bid, [RawComment(bid, text, idx, None)], str(path), {SYNTHESIZED_TIMESTAMPS})
            blocks.append(block)
            gold[(bid, Coordinate(1, 1))] = label
            class_counts[name] = class_counts.get(name, 0) + 1
            for f in cfg.count_flags:
                flag_counts[f] += _truthy(row.get(f))
    imported = len(blocks)

    def shares(counts: dict[str, int]) -> dict[str, float]:
        return {k: (100.0 * c / imported if imported else 0.0) for k, c in counts.items()}

    report = {
        "rows": rows,
        "imported": imported,
        "parse_failures": failures,
        "class_counts": class_counts,
        "class_shares": shares(class_counts),
        "flag_counts": flag_counts,
        "flag_shares": shares(flag_counts),
    }
    return Corpus(blocks, gold, str(path), report)
