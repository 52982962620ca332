"""Generators and brute-force oracles shared by the test modules."""

from __future__ import annotations

import csv
import random
from pathlib import Path
from dataclasses import dataclass, field

from threadattack.backend import BackendConfig, BackendKind, LexiconRules, ModelRole, PromptRequest
from threadattack.pipeline import PipelineConfig
from threadattack.taxonomy import (
    AttackForm,
    AttackIntent,
    AttackPresence,
    AttackTarget,
    AttackType,
    LabelRecord,
    null_record,
)
from threadattack.thread_model import RawComment, build_thread_block

LEXICON_RULES = {
    "explicit_tokens": ["idiot", "trash"],
    "implicit_triggers": ["scam"],
    "implicit_markers": ["them", "those people"],
    "explicit_record": {
        "attack_form": "Targeted",
        "attack_target": "Individuals",
        "attack_type": "Abusive",
        "attack_intent": "Personal insults",
        "hazard_level": 60,
        "confidence_level": 90,
    },
    "implicit_record": {
        "attack_form": "Targeted",
        "attack_target": "Group",
        "attack_type": "Satirical",
        "attack_intent": "Stereotypes",
        "hazard_level": 30,
        "confidence_level": 70,
    },
}


def random_raw_comments(rng: random.Random, max_depth: int = 6, max_nodes: int = 60, ts_range: int = 40):
    n = rng.randint(1, max_nodes)
    comments = [RawComment("c0", "root text", rng.randint(0, ts_range), None)]
    depth = {"c0": 1}
    for i in range(1, n):
        candidates = [c.id for c in comments if depth[c.id] < max_depth]
        parent = rng.choice(candidates)
        cid = f"c{i}"
        depth[cid] = depth[parent] + 1
        comments.append(RawComment(cid, f"comment {i} é", rng.randint(0, ts_range), parent))
    rng.shuffle(comments)
    return comments


def random_block(rng: random.Random, block_id: str = "b", **kw):
    return build_thread_block(block_id, random_raw_comments(rng, **kw), source="synthetic")


def oracle_levels(raw):
    parent = {c.id: c.parent_id for c in raw}
    out = {}
    for c in raw:
        steps, cur = 1, c.parent_id
        while cur is not None:
            steps += 1
            cur = parent[cur]
        out[c.id] = steps
    return out


def oracle_context_ids(raw, target_id: str, same_parent: bool = False) -> list[str]:
    """Context ids by exhaustive scan over raw comments (no coordinates used)."""
    by_id = {c.id: c for c in raw}
    levels = oracle_levels(raw)
    chain = []
    cur = by_id[target_id].parent_id
    while cur is not None:
        chain.append(cur)
        cur = by_id[cur].parent_id
    chain.sort(key=lambda i: levels[i])
    t = by_id[target_id]
    peers = [
        c for c in raw
        if c.id != target_id
        and levels[c.id] == levels[target_id]
        and (c.timestamp, c.id) < (t.timestamp, t.id)
        and (not same_parent or c.parent_id == t.parent_id)
    ]
    peers.sort(key=lambda c: (c.timestamp, c.id))
    return chain + [c.id for c in peers]


def random_record(rng: random.Random, attack_bias: float = 0.6) -> LabelRecord:
    if rng.random() > attack_bias:
        return null_record(float(rng.choice([100, 95.5, 80])))
    return LabelRecord(
        rng.choice([AttackPresence.EXPLICIT, AttackPresence.IMPLICIT]),
        rng.choice(list(AttackForm)),
        rng.choice(list(AttackTarget)),
        rng.choice(list(AttackType)),
        rng.choice(list(AttackIntent)),
        rng.choice([0.0, 12.5, 80.0, rng.uniform(0, 100)]),
        rng.choice([100.0, rng.uniform(0, 100)]),
    )


def synthetic_corpus_raw():
    """Five blocks, 30 comments, mixing explicit, implicit and benign comments.

    Returns ``{block_id: [RawComment, ...]}``.
    """
    R = RawComment
    return {
        "b1": [
            R("b1-r", "This new app is a scam if you ask me", 0, None),
            R("b1-a", "I agree, and those who sell it are idiots", 10, "b1-r"),
            R("b1-b", "Typical of them to push this", 20, "b1-r"),
            R("b1-c", "I use it daily, works fine", 30, "b1-r"),
            R("b1-d", "Sure, whatever them folks say", 40, "b1-a"),
            R("b1-e", "what trash argument", 50, "b1-b"),
        ],
        "b2": [
            R("b2-r", "Lovely weather today", 0, None),
            R("b2-a", "Yes, sunny here", 5, "b2-r"),
            R("b2-b", "Them clouds will come later", 8, "b2-r"),
            R("b2-c", "That forecast was a scam", 12, "b2-a"),
            R("b2-d", "Glad to hear", 15, "b2-a"),
            R("b2-e", "Ask them about it", 20, "b2-c"),
        ],
        "b3": [
            R("b3-r", "Anyone tried the new cafe?", 100, None),
            R("b3-a", "Great coffee", 90 + 20, "b3-r"),
            R("b3-b", "Prices are a SCAM", 120, "b3-r"),
            R("b3-c", "Those people never tip anyway", 130, "b3-r"),
            R("b3-d", "idiot take", 140, "b3-c"),
            R("b3-e", "them again", 150, "b3-a"),
        ],
        "b4": [
            R("b4-r", "Match tonight!", 0, None),
            R("b4-a", "Can't wait", 1, "b4-r"),
            R("b4-b", "Referee was a scam last time", 2, "b4-a"),
            R("b4-c", "them referees always", 3, "b4-a"),
            R("b4-d", "Go team", 4, "b4-r"),
            R("b4-e", "them fans are loud", 1, "b4-r"),
        ],
        "b5": [
            R("b5-r", "Book club picks?", 0, None),
            R("b5-a", "Something light", 3, "b5-r"),
            R("b5-b", "Anything but trash novels", 3, "b5-r"),
            R("b5-c", "A mystery maybe", 4, "b5-a"),
            R("b5-d", "scam thrillers are fun", 5, "b5-b"),
            R("b5-e", "Let them choose", 6, "b5-b"),
        ],
    }


def synthetic_blocks():
    return [build_thread_block(bid, raws, source="synthetic") for bid, raws in synthetic_corpus_raw().items()]


def expected_presence(raw, cid: str, rules=LEXICON_RULES, same_parent: bool = False) -> AttackPresence:
    """Routing oracle: lexicon semantics applied to the brute-force context."""
    by_id = {c.id: c for c in raw}
    text = by_id[cid].text.casefold()
    if any(t in text for t in rules["explicit_tokens"]):
        return AttackPresence.EXPLICIT
    ctx = " ".join(by_id[i].text.casefold() for i in oracle_context_ids(raw, cid, same_parent))
    if any(t in ctx for t in rules["implicit_triggers"]) and any(m in text for m in rules["implicit_markers"]):
        return AttackPresence.IMPLICIT
    return AttackPresence.NONE


CONFIGS = Path(__file__).resolve().parent.parent / "configs"

HATE_COUNTS = {"0": 1430, "1": 19190, "2": 4163}
INTOXICAT_COUNTS = {"explicit": 5597, "implicit": 450, "not_abusive": 23762}


def write_hate_fixture(path, counts=HATE_COUNTS, seed: int = 0) -> None:
    """Davidson-style CSV with the given class counts, rows shuffled."""
    rows = [cls for cls, n in counts.items() for _ in range(n)]
    random.Random(seed).shuffle(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["count", "class", "tweet"])
        for i, cls in enumerate(rows):
            w.writerow([3, cls, f"tweet {i}, with a comma"])


def write_intoxicat_fixture(path, counts=INTOXICAT_COUNTS, seed: int = 0) -> None:
    flags = {"explicit": (1, 1, 0), "implicit": (1, 0, 1), "not_abusive": (0, 0, 0)}
    rows = [kind for kind, n in counts.items() for _ in range(n)]
    random.Random(seed).shuffle(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "comment", "is_abusive", "is_explicit", "is_implicit"])
        for i, kind in enumerate(rows):
            w.writerow([f"ic{i}", f"comentari {i}", *flags[kind]])


def lexicon_config(**kw) -> PipelineConfig:
    cfg = BackendConfig(BackendKind.LEXICON, rules=LexiconRules.from_dict(LEXICON_RULES))
    return PipelineConfig({r: cfg for r in ModelRole}, **kw)


@dataclass
class Recorder:
    """Wraps a backend and keeps every request it sees."""

    inner: object
    seen: list = field(default_factory=list)

    def invoke(self, request: PromptRequest) -> str:
        self.seen.append(request)
        return self.inner.invoke(request)
