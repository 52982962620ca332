"""Context selection for a target comment.

The context of a comment is its ancestor chain plus the comments that precede
it at the same level. Parallel branches and later replies are left out.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .thread_model import CommentNode, Coordinate, ThreadBlock, get_node


class ContextPolicy(str, Enum):
    SAME_LEVEL = "same-level"
    SAME_PARENT = "same-parent"

    @classmethod
    def parse(cls, value: "ContextPolicy | str") -> "ContextPolicy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for p in cls:
            if key in (p.value, p.name.lower().replace("_", "-"), p.value.replace("-", "")):
                return p
        raise ValueError(f"unknown context policy {value!r}")


@dataclass(frozen=True)
class ContextEntry:
    coord: Coordinate
    text: str
    timestamp: int


@dataclass(frozen=True)
class ContextWindow:
    target: Coordinate
    entries: tuple[ContextEntry, ...]
    policy: ContextPolicy = ContextPolicy.SAME_LEVEL
    truncated: int = 0  # peers dropped by the max-entries cap

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def coords(self) -> list[Coordinate]:
        return [e.coord for e in self.entries]


def ancestors(block: ThreadBlock, coord: Coordinate | tuple[int, int]) -> list[CommentNode]:
    """Ancestor chain, root first and direct parent last."""
    node = get_node(block, coord)
    chain = []
    cur = block.parent(node)
    while cur is not None:
        chain.append(cur)
        cur = block.parent(cur)
    chain.reverse()
    return chain


def preceding_peers(
    block: ThreadBlock,
    coord: Coordinate | tuple[int, int],
    policy: ContextPolicy | str = ContextPolicy.SAME_LEVEL,
) -> list[CommentNode]:
    node = get_node(block, coord)
    policy = ContextPolicy.parse(policy)
    peers = [p for p in block.level_nodes(node.coord.level) if p.coord.seq < node.coord.seq]
    if policy is ContextPolicy.SAME_PARENT:
        return [p for p in peers if p.parent_id == node.parent_id]
    return list(peers)


def select_context(
    block: ThreadBlock,
    coord: Coordinate | tuple[int, int],
    policy: ContextPolicy | str = ContextPolicy.SAME_LEVEL,
    max_entries: int | None = None,
) -> ContextWindow:
    """Ancestors (root to parent) followed by preceding peers in seq order.

    ``max_entries`` caps the window by dropping the oldest peers first;
    ancestors are never dropped.
    """
    policy = ContextPolicy.parse(policy)
    target = get_node(block, coord).coord
    anc = ancestors(block, target)
    peers = preceding_peers(block, target, policy)
    dropped = 0
    if max_entries is not None:
        if max_entries < 0:
            raise ValueError("max_entries must be non-negative")
        room = max(0, max_entries - len(anc))
        if len(peers) > room:
            dropped = len(peers) - room
            peers = peers[dropped:]
    entries = tuple(ContextEntry(n.coord, n.text, n.timestamp) for n in [*anc, *peers])
    return ContextWindow(target, entries, policy, dropped)


def _one_line(text: str) -> str:
    return " ".join(text.splitlines()) if ("\n" in text or "\r" in text) else text


def render_context(window: ContextWindow) -> str:
    """``[Lx.y] text`` per entry, in window order; line breaks inside a comment become spaces."""
    return "\n".join(f"[L{e.coord.level}.{e.coord.seq}] {_one_line(e.text)}" for e in window.entries)
