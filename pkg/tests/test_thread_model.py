import json
import random
from importlib import resources

import jsonschema
import pytest
from hypothesis import given, settings, strategies as st

from helpers import oracle_levels, random_block, random_raw_comments
from threadattack.errors import (
    CoordNotFound,
    CycleDetected,
    DuplicateId,
    MissingParent,
    MultipleRoots,
    NoRoot,
    ParseError,
    ValidationError,
)
from threadattack.thread_model import (
    SYNTHESIZED_TIMESTAMPS,
    CommentNode,
    Coordinate,
    RawComment,
    ThreadBlock,
    block_from_record,
    build_thread_block,
    get_node,
    parse_block,
    serialize_block,
    validate_block,
)


@pytest.fixture
def small_block():
    return build_thread_block("blk", [
        ("r", "root", 0, None),
        ("a", "first reply", 10, "r"),
        ("b", "earlier reply", 5, "r"),
        ("c", "reply to a", 20, "a"),
    ])


def test_single_root():
    block = build_thread_block("x", [{"id": "r", "text": "hi", "timestamp": 0, "parent_id": None}])
    assert [n.coord for n in block.nodes] == [Coordinate(1, 1)]


def test_coordinates_follow_level_then_timestamp(small_block):
    got = {n.id: tuple(n.coord) for n in small_block.nodes}
    assert got == {"r": (1, 1), "b": (2, 1), "a": (2, 2), "c": (3, 1)}


def test_timestamp_tie_broken_by_id():
    block = build_thread_block("t", [("r", "", 0, None), ("z", "", 5, "r"), ("m", "", 5, "r")])
    assert block.node_by_id("m").coord == (2, 1)
    assert block.node_by_id("z").coord == (2, 2)


@pytest.mark.parametrize("raw, exc", [
    ([("a", "", 0, "ghost")], MissingParent),
    ([("r", "", 0, None), ("a", "", 1, "ghost")], MissingParent),
    ([("r", "", 0, None), ("s", "", 0, None)], MultipleRoots),
    ([("a", "", 0, "b"), ("b", "", 0, "a")], NoRoot),
    ([("r", "", 0, None), ("a", "", 0, "b"), ("b", "", 0, "a")], CycleDetected),
    ([("r", "", 0, None), ("r", "", 1, "r")], DuplicateId),
    ([], NoRoot),
])
def test_build_errors(raw, exc):
    with pytest.raises(exc):
        build_thread_block("bad", raw)


def test_get_node(small_block):
    assert get_node(small_block, (1, 1)).id == "r"
    assert small_block.anchor.id == "r"
    assert get_node(small_block, Coordinate(2, 1)).id == "b"
    with pytest.raises(CoordNotFound):
        get_node(small_block, (9, 9))


def test_validate_clean(small_block):
    assert validate_block(small_block) == []


def test_validate_dense_seq():
    block = ThreadBlock("g", (
        CommentNode("r", "", 0, Coordinate(1, 1)),
        CommentNode("a", "", 1, Coordinate(2, 1), "r"),
        CommentNode("b", "", 2, Coordinate(2, 3), "r"),
    ))
    rules = [v.rule for v in validate_block(block)]
    assert rules == ["DenseSeq"]


def test_validate_level_step():
    block = ThreadBlock("g", (
        CommentNode("r", "", 0, Coordinate(1, 1)),
        CommentNode("a", "", 1, Coordinate(2, 1), "r"),
        CommentNode("b", "", 2, Coordinate(2, 2), "a"),
    ))
    violations = validate_block(block)
    assert [v.rule for v in violations] == ["LevelStep"]
    assert violations[0].subject == "b"


def test_validate_chronology():
    block = ThreadBlock("g", (
        CommentNode("r", "", 0, Coordinate(1, 1)),
        CommentNode("a", "", 9, Coordinate(2, 1), "r"),
        CommentNode("b", "", 2, Coordinate(2, 2), "r"),
    ))
    assert [v.rule for v in validate_block(block)] == ["ChronoOrder"]


def test_validate_unreachable_and_roots():
    block = ThreadBlock("g", (
        CommentNode("r", "", 0, Coordinate(1, 1)),
        CommentNode("s", "", 1, Coordinate(1, 2)),
    ))
    assert "RootCount" in {v.rule for v in validate_block(block)}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parent_chain_length_matches_level(seed):
    block = random_block(random.Random(seed))
    for node in block.nodes:
        steps, cur = 0, node
        while cur.parent_id is not None:
            cur = block.node_by_id(cur.parent_id)
            steps += 1
        assert steps == node.level - 1
        assert cur is block.anchor


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_permutation_invariant(seed, shuffler):
    raw = random_raw_comments(random.Random(seed))
    a = build_thread_block("p", raw)
    shuffled = list(raw)
    shuffler.shuffle(shuffled)
    assert build_thread_block("p", shuffled) == a
    assert validate_block(a) == []
    levels = oracle_levels(raw)
    assert {n.id: n.level for n in a.nodes} == levels


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_serialize_round_trip(seed):
    block = random_block(random.Random(seed), max_nodes=50)
    assert parse_block(serialize_block(block)) == block


def test_round_trip_single_root():
    block = build_thread_block("one", [("r", "只有一条", 7, None)], source="weibo")
    assert parse_block(serialize_block(block)) == block


def test_parse_missing_level():
    rec = json.loads(serialize_block(build_thread_block("one", [("r", "x", 0, None)])))
    del rec["comments"][0]["level"]
    with pytest.raises(ParseError) as err:
        parse_block(json.dumps(rec), line=3)
    assert err.value.field == "level" and err.value.line == 3


def test_parse_rejects_bad_json_and_inconsistent_coords():
    with pytest.raises(ParseError):
        parse_block("{not json")
    rec = json.loads(serialize_block(build_thread_block("one", [("r", "x", 0, None), ("a", "y", 1, "r")])))
    rec["comments"][1]["level"] = 3
    with pytest.raises(ValidationError):
        parse_block(json.dumps(rec))


def test_ingest_synthesizes_missing_timestamps():
    rec = {"block_id": "s", "source": None, "comments": [
        {"id": "r", "text": "root", "parent_id": None},
        {"id": "b", "text": "second", "parent_id": "r"},
        {"id": "a", "text": "first", "parent_id": "r"},
    ]}
    block = block_from_record(rec, require_coords=False)
    assert SYNTHESIZED_TIMESTAMPS in block.flags
    assert block.node_by_id("b").coord == (2, 1)  # file order wins
    assert block.node_by_id("a").coord == (2, 2)


def test_ingest_normalizes_to_nfc():
    decomposed = "e\u0301"
    rec = {"block_id": "n", "comments": [{"id": "r", "text": decomposed, "timestamp_ms": 0, "parent_id": None}]}
    assert block_from_record(rec, require_coords=False).anchor.text == "\u00e9"


def test_serialized_record_matches_schema():
    schema = json.loads((resources.files("threadattack") / "schemas" / "thread_block.schema.json").read_text())
    block = random_block(random.Random(3))
    jsonschema.validate(json.loads(serialize_block(block)), schema)


def test_blocks_are_immutable(small_block):
    with pytest.raises(AttributeError):
        small_block.block_id = "other"
    assert isinstance(small_block.nodes, tuple)
    assert hash(small_block) == hash(build_thread_block("blk", [
        RawComment(n.id, n.text, n.timestamp, n.parent_id) for n in small_block.nodes
    ]))
