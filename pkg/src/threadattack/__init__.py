"""Fine-grained verbal-attack detection over tree-structured comment threads."""

__version__ = "0.1.0"

from .context import ContextPolicy, ContextWindow, ancestors, preceding_peers, render_context, select_context
from .taxonomy import (
    AttackForm,
    AttackIntent,
    AttackPresence,
    AttackTarget,
    AttackType,
    LabelRecord,
    label_distribution,
    null_record,
    parse_label,
    validate_record,
)
from .thread_model import (
    CommentNode,
    Coordinate,
    ThreadBlock,
    build_thread_block,
    get_node,
    parse_block,
    serialize_block,
    validate_block,
)

__all__ = [
    "AttackForm",
    "AttackIntent",
    "AttackPresence",
    "AttackTarget",
    "AttackType",
    "CommentNode",
    "ContextPolicy",
    "ContextWindow",
    "Coordinate",
    "LabelRecord",
    "ThreadBlock",
    "ancestors",
    "build_thread_block",
    "get_node",
    "label_distribution",
    "null_record",
    "parse_block",
    "parse_label",
    "preceding_peers",
    "render_context",
    "select_context",
    "serialize_block",
    "validate_block",
    "validate_record",
]
