"""Comment threads as immutable trees with (level, seq) coordinates.

A block is one level-1 comment plus every reply beneath it. ``level`` is the
depth in the reply tree (root = 1) and ``seq`` is the chronological index of
a comment among all comments of the same level inside its block.
"""

from __future__ import annotations

import json
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

from .errors import (
    CoordNotFound,
    CycleDetected,
    DuplicateId,
    LimitExceeded,
    MissingParent,
    MultipleRoots,
    NoRoot,
    ParseError,
    ValidationError,
)

SYNTHESIZED_TIMESTAMPS = "synthesized_timestamps"


class Coordinate(NamedTuple):
    level: int
    seq: int

    def __str__(self) -> str:
        return f"L{self.level}.{self.seq}"


@dataclass(frozen=True)
class CommentNode:
    id: str
    text: str
    timestamp: int
    coord: Coordinate
    parent_id: str | None = None

    @property
    def level(self) -> int:
        return self.coord.level

    @property
    def seq(self) -> int:
        return self.coord.seq


@dataclass(frozen=True)
class RawComment:
    id: str
    text: str
    timestamp: int
    parent_id: str | None = None


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.rule}[{self.subject}]: {self.message}"


@dataclass(frozen=True)
class ThreadBlock:
    """An immutable comment block.

    The raw constructor does not check invariants; use
    :func:`build_thread_block` or :func:`parse_block` for checked construction
    and :func:`validate_block` to audit a hand-made block.
    """

    block_id: str
    nodes: tuple[CommentNode, ...]
    source: str | None = None
    flags: frozenset[str] = frozenset()
    _by_coord: dict = field(init=False, repr=False, compare=False, hash=False)
    _by_id: dict = field(init=False, repr=False, compare=False, hash=False)
    _by_level: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        nodes = tuple(sorted(self.nodes, key=lambda n: (n.coord, n.id)))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "flags", frozenset(self.flags))
        by_coord: dict[Coordinate, CommentNode] = {}
        by_id: dict[str, CommentNode] = {}
        by_level: dict[int, list[CommentNode]] = defaultdict(list)
        for n in nodes:
            by_coord.setdefault(n.coord, n)
            by_id.setdefault(n.id, n)
            by_level[n.coord.level].append(n)
        object.__setattr__(self, "_by_coord", by_coord)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_level", dict(by_level))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @property
    def anchor(self) -> CommentNode:
        return get_node(self, Coordinate(1, 1))

    @property
    def depth(self) -> int:
        return max(self._by_level, default=0)

    def node_by_id(self, node_id: str) -> CommentNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise CoordNotFound(f"block {self.block_id!r} has no comment {node_id!r}") from None

    def level_nodes(self, level: int) -> tuple[CommentNode, ...]:
        """Nodes of one level in ascending seq."""
        return tuple(self._by_level.get(level, ()))

    def parent(self, node: CommentNode) -> CommentNode | None:
        if node.parent_id is None:
            return None
        return self._by_id.get(node.parent_id)


def _as_raw(item: Any) -> RawComment:
    if isinstance(item, RawComment):
        return item
    if isinstance(item, dict):
        return RawComment(item["id"], item["text"], item["timestamp"], item.get("parent_id"))
    cid, text, ts, parent = item
    return RawComment(cid, text, ts, parent)


def build_thread_block(
    block_id: str,
    raw_comments: Iterable[RawComment | tuple | dict],
    source: str | None = None,
    flags: Iterable[str] = (),
) -> ThreadBlock:
    """Build a block from ``(id, text, timestamp, parent_id)`` records.

    Levels come from parent chains; seq orders each level by
    ``(timestamp, id)``. Input order does not matter.
    """
    raws = [_as_raw(r) for r in raw_comments]
    if not raws:
        raise NoRoot(f"block {block_id!r} has no comments")

    by_id: dict[str, RawComment] = {}
    for r in raws:
        if r.id in by_id:
            raise DuplicateId(f"block {block_id!r}: duplicate comment id {r.id!r}")
        by_id[r.id] = r

    roots = sorted(r.id for r in raws if r.parent_id is None)
    if not roots:
        # every node has a parent; either dangling or cyclic
        for r in raws:
            if r.parent_id not in by_id:
                raise MissingParent(f"block {block_id!r}: {r.id!r} replies to unknown {r.parent_id!r}")
        raise NoRoot(f"block {block_id!r} has no level-1 comment")
    if len(roots) > 1:
        raise MultipleRoots(f"block {block_id!r} has {len(roots)} level-1 comments: {roots[:5]}")
    for r in raws:
        if r.parent_id is not None and r.parent_id not in by_id:
            raise MissingParent(f"block {block_id!r}: {r.id!r} replies to unknown {r.parent_id!r}")

    level: dict[str, int] = {roots[0]: 1}
    for r in raws:
        chain = []
        cur = r.id
        seen = set()
        while cur not in level:
            if cur in seen:
                raise CycleDetected(f"block {block_id!r}: reply cycle through {cur!r}")
            seen.add(cur)
            chain.append(cur)
            cur = by_id[cur].parent_id
        base = level[cur]
        for depth, cid in enumerate(reversed(chain), start=1):
            level[cid] = base + depth

    per_level: dict[int, list[RawComment]] = defaultdict(list)
    for r in raws:
        per_level[level[r.id]].append(r)

    nodes = []
    for lvl, members in per_level.items():
        members.sort(key=lambda r: (r.timestamp, r.id))
        for seq, r in enumerate(members, start=1):
            nodes.append(CommentNode(r.id, r.text, r.timestamp, Coordinate(lvl, seq), r.parent_id))
    return ThreadBlock(block_id, tuple(nodes), source, frozenset(flags))


def get_node(block: ThreadBlock, coord: Coordinate | tuple[int, int]) -> CommentNode:
    try:
        return block._by_coord[Coordinate(*coord)]
    except (KeyError, TypeError):
        raise CoordNotFound(f"block {block.block_id!r} has no comment at {tuple(coord)}") from None


def validate_block(block: ThreadBlock) -> list[Violation]:
    """Audit every structural invariant; returns one violation per breach."""
    out: list[Violation] = []
    ids: dict[str, CommentNode] = {}
    for n in block.nodes:
        if n.id in ids:
            out.append(Violation("DuplicateId", n.id, "comment id appears more than once"))
        ids.setdefault(n.id, n)

    coords: dict[Coordinate, str] = {}
    for n in block.nodes:
        lvl, seq = n.coord
        if not (isinstance(lvl, int) and isinstance(seq, int)) or lvl < 1 or seq < 1:
            out.append(Violation("CoordRange", n.id, f"coordinate {tuple(n.coord)} must be positive"))
        if n.coord in coords:
            out.append(Violation("DuplicateCoord", n.id, f"{n.coord} already used by {coords[n.coord]!r}"))
        coords.setdefault(n.coord, n.id)

    roots = [n for n in block.nodes if n.parent_id is None]
    if len(roots) != 1:
        out.append(Violation("RootCount", block.block_id, f"expected one level-1 comment, found {len(roots)}"))
    for n in block.nodes:
        if (n.parent_id is None) != (n.coord.level == 1):
            out.append(Violation("RootParent", n.id, "parent_id must be absent exactly at level 1"))
        if n.parent_id is not None:
            parent = ids.get(n.parent_id)
            if parent is None:
                out.append(Violation("MissingParent", n.id, f"parent {n.parent_id!r} not in block"))
            elif parent.coord.level != n.coord.level - 1:
                out.append(Violation(
                    "LevelStep", n.id,
                    f"level {n.coord.level} under parent at level {parent.coord.level}",
                ))

    # reachability from the anchor
    if len(roots) == 1:
        children: dict[str, list[str]] = defaultdict(list)
        for n in block.nodes:
            if n.parent_id is not None:
                children[n.parent_id].append(n.id)
        reached = {roots[0].id}
        stack = [roots[0].id]
        while stack:
            for c in children.get(stack.pop(), ()):
                if c not in reached:
                    reached.add(c)
                    stack.append(c)
        for n in block.nodes:
            if n.id not in reached and (n.parent_id is None or n.parent_id in ids):
                out.append(Violation("Unreachable", n.id, "not connected to the level-1 comment"))

    by_level: dict[int, list[CommentNode]] = defaultdict(list)
    for n in block.nodes:
        by_level[n.coord.level].append(n)
    for lvl, members in sorted(by_level.items()):
        seqs = sorted(n.coord.seq for n in members)
        if seqs != list(range(1, len(seqs) + 1)):
            out.append(Violation("DenseSeq", f"{block.block_id}:L{lvl}", f"seq values {seqs} are not 1..{len(seqs)}"))
        by_seq = sorted(members, key=lambda n: n.coord.seq)
        for a, b in zip(by_seq, by_seq[1:]):
            if (a.timestamp, a.id) > (b.timestamp, b.id):
                out.append(Violation(
                    "ChronoOrder", b.id,
                    f"seq {b.coord.seq} is earlier than seq {a.coord.seq} ({a.id!r})",
                ))
    return out


def check_limits(block: ThreadBlock, max_depth: int | None = None, max_nodes: int | None = None) -> None:
    if max_nodes is not None and len(block) > max_nodes:
        raise LimitExceeded(f"block {block.block_id!r} has {len(block)} comments (limit {max_nodes})")
    if max_depth is not None and block.depth > max_depth:
        raise LimitExceeded(f"block {block.block_id!r} is {block.depth} levels deep (limit {max_depth})")


# -- serialization ----------------------------------------------------------

def block_to_record(block: ThreadBlock) -> dict[str, Any]:
    rec: dict[str, Any] = {"block_id": block.block_id, "source": block.source}
    if block.flags:
        rec["flags"] = sorted(block.flags)
    rec["comments"] = [
        {
            "id": n.id,
            "text": n.text,
            "timestamp_ms": n.timestamp,
            "parent_id": n.parent_id,
            "level": n.coord.level,
            "seq": n.coord.seq,
        }
        for n in block.nodes
    ]
    return rec


def dumps_record(rec: dict[str, Any]) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def serialize_block(block: ThreadBlock) -> str:
    """One JSONL line (without the trailing newline)."""
    return dumps_record(block_to_record(block))


def _req(obj: dict, key: str, kind, line: int | None, where: str = ""):
    if key not in obj:
        raise ParseError(f"missing required field{where}", line=line, field=key)
    val = obj[key]
    if kind is int and isinstance(val, bool):
        raise ParseError(f"expected integer{where}", line=line, field=key)
    if not isinstance(val, kind):
        raise ParseError(f"wrong type {type(val).__name__}{where}", line=line, field=key)
    return val


def _opt_str(obj: dict, key: str, line: int | None, where: str = "") -> str | None:
    val = obj.get(key)
    if val is not None and not isinstance(val, str):
        raise ParseError(f"expected string or null{where}", line=line, field=key)
    return val


def block_from_record(
    rec: Any,
    *,
    line: int | None = None,
    require_coords: bool = True,
) -> ThreadBlock:
    """Decode a thread-block record.

    With ``require_coords`` every comment must carry ``level`` and ``seq``
    (the lossless form written by :func:`serialize_block`). Without it,
    coordinates are recomputed from the reply tree; any coordinates present
    must agree with the recomputation. Comments lacking ``timestamp_ms`` get
    file-order timestamps and the block is flagged.
    """
    if not isinstance(rec, dict):
        raise ParseError("record must be a JSON object", line=line)
    block_id = _req(rec, "block_id", str, line)
    source = _opt_str(rec, "source", line)
    flags = rec.get("flags", [])
    if not isinstance(flags, list) or not all(isinstance(f, str) for f in flags):
        raise ParseError("flags must be a list of strings", line=line, field="flags")
    comments = _req(rec, "comments", list, line)
    if not comments:
        raise ParseError("block has no comments", line=line, field="comments")

    raws: list[RawComment] = []
    given: dict[str, tuple] = {}
    missing_ts = False
    for i, c in enumerate(comments):
        where = f" in comments[{i}]"
        if not isinstance(c, dict):
            raise ParseError(f"comment must be an object{where}", line=line, field="comments")
        cid = _req(c, "id", str, line, where)
        text = unicodedata.normalize("NFC", _req(c, "text", str, line, where))
        parent = _opt_str(c, "parent_id", line, where)
        ts = c.get("timestamp_ms")
        if ts is None:
            if require_coords:
                raise ParseError(f"missing required field{where}", line=line, field="timestamp_ms")
            missing_ts = True
        elif isinstance(ts, bool) or not isinstance(ts, int):
            raise ParseError(f"expected integer{where}", line=line, field="timestamp_ms")
        if require_coords:
            lvl = _req(c, "level", int, line, where)
            seq = _req(c, "seq", int, line, where)
            given[cid] = (lvl, seq)
        elif "level" in c or "seq" in c:
            given[cid] = (c.get("level"), c.get("seq"))
        raws.append(RawComment(cid, text, ts, parent))

    flags = set(flags)
    if missing_ts:
        raws = [RawComment(r.id, r.text, i, r.parent_id) for i, r in enumerate(raws)]
        flags.add(SYNTHESIZED_TIMESTAMPS)

    if require_coords:
        nodes = tuple(
            CommentNode(r.id, r.text, r.timestamp, Coordinate(*given[r.id]), r.parent_id) for r in raws
        )
        block = ThreadBlock(block_id, nodes, source, frozenset(flags))
        problems = validate_block(block)
        if problems:
            raise ValidationError(
                f"block {block_id!r}" + (f" (line {line})" if line else "") + f": {problems[0]}", problems
            )
        return block

    block = build_thread_block(block_id, raws, source, flags)
    for cid, (lvl, seq) in given.items():
        node = block.node_by_id(cid)
        if (lvl is not None and lvl != node.coord.level) or (seq is not None and seq != node.coord.seq):
            raise ValidationError(
                f"block {block_id!r}: comment {cid!r} declares ({lvl},{seq}) "
                f"but the reply tree gives {tuple(node.coord)}"
            )
    return block


def parse_block(text: str, *, line: int | None = None) -> ThreadBlock:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=line) from None
    return block_from_record(rec, line=line, require_coords=True)


def iter_block_lines(lines: Sequence[str] | Iterable[str]):
    """Yield ``(line_number, stripped_line)`` for non-blank JSONL lines."""
    for i, raw in enumerate(lines, start=1):
        s = raw.strip()
        if s:
            yield i, s
