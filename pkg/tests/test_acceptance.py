"""Acceptance gate. Each test prints one ``PASS``/``FAIL criterion N`` line."""

import itertools
import json
import math
import random
import time
from dataclasses import replace
from fractions import Fraction

from conftest import ACCEPTANCE_LINES
from helpers import (
    CONFIGS,
    LEXICON_RULES,
    Recorder,
    expected_presence,
    lexicon_config,
    oracle_context_ids,
    random_raw_comments,
    random_record,
    synthetic_blocks,
    synthetic_corpus_raw,
    write_hate_fixture,
    write_intoxicat_fixture,
)
from threadattack.backend import (
    ModelRole,
    extract_context_section,
    format_analyzer_reply,
    lexicon_backend,
    parse_analyzer_reply,
)
from threadattack.cli import run
from threadattack.context import ContextPolicy, render_context, select_context
from threadattack.dataset_io import Corpus, dump_corpus, import_flat, partition_for_modules
from threadattack.evaluation import (
    AgreementTable,
    accuracy,
    all_in_one_accuracy,
    cohen_kappa,
    kappa_from_table,
    pearson,
)
from threadattack.pipeline import Pipeline
from threadattack.taxonomy import (
    DIMENSIONS,
    AttackForm,
    AttackPresence,
    AttackTarget,
    label_distribution,
    null_record,
)
from threadattack.thread_model import build_thread_block, get_node, parse_block, serialize_block


def gate(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_context_oracle():
    rng = random.Random(20240601)
    start = time.perf_counter()
    mismatches = checked = 0
    for i in range(1000):
        raw = random_raw_comments(rng, max_depth=6, max_nodes=60)
        block = build_thread_block(f"b{i}", raw)
        for node in block.nodes:
            for policy, same_parent in ((ContextPolicy.SAME_LEVEL, False), (ContextPolicy.SAME_PARENT, True)):
                window = select_context(block, node.coord, policy)
                got = [get_node(block, e.coord).id for e in window.entries]
                checked += 1
                mismatches += got != oracle_context_ids(raw, node.id, same_parent)
    elapsed = time.perf_counter() - start
    gate(1, mismatches == 0 and elapsed < 5.0,
         f"context oracle, {checked} windows over 1000 blocks, {mismatches} mismatches, {elapsed:.2f}s (< 5s)")


def test_criterion_2_routing_soundness():
    raw = synthetic_corpus_raw()
    blocks = synthetic_blocks()
    rec = Recorder(lexicon_backend(LEXICON_RULES))
    start = time.perf_counter()
    run_ = Pipeline(lexicon_config(), backends={r: rec for r in ModelRole}).detect_corpus(blocks)
    by_block = {b.block_id: b for b in blocks}
    analyzer_reqs = {(r.role, r.comment_text): r for r in rec.seen if not r.role.is_detector}
    failures = []
    counts = {p: 0 for p in AttackPresence}
    for o in run_.outcomes:
        block = by_block[o.block_id]
        text = get_node(block, o.coord).text
        want = expected_presence(raw[o.block_id], o.comment_id)
        counts[want] += 1
        if want is AttackPresence.EXPLICIT:
            req = analyzer_reqs.get((ModelRole.EXPLICIT_ANALYZER, text))
            ok = (o.record is not None and o.record.presence is want and o.check2 is None
                  and req is not None and extract_context_section(req.text) is None)
        elif want is AttackPresence.IMPLICIT:
            req = analyzer_reqs.get((ModelRole.IMPLICIT_ANALYZER, text))
            expected_ctx = render_context(select_context(block, o.coord))
            ok = (o.record is not None and o.record.presence is want and req is not None
                  and extract_context_section(req.text) == expected_ctx)
        else:
            ok = o.record == null_record()
        if not ok:
            failures.append(o.comment_id)
    elapsed = time.perf_counter() - start
    gate(2, len(run_.outcomes) == 30 and not failures and elapsed < 1.0,
         f"routing on 30 comments ({counts[AttackPresence.EXPLICIT]} explicit, "
         f"{counts[AttackPresence.IMPLICIT]} implicit, {counts[AttackPresence.NONE]} none), "
         f"{len(failures)} failures, {elapsed:.3f}s (< 1s)")


def _records(attr, counts):
    base = null_record()
    out = []
    for value, n in counts.items():
        out.extend([replace(base, **{attr: value})] * n)
    return out


def test_criterion_3_label_shares():
    cases = {
        "attack_or_not": ("presence", {AttackPresence.EXPLICIT: 9275, AttackPresence.IMPLICIT: 4766,
                                       AttackPresence.NONE: 12382}, (35.1, 18.0, 46.9)),
        "attack_form": ("form", {AttackForm.TARGETED: 10775, AttackForm.NON_TARGETED: 6574,
                                 AttackForm.NONE: 9074}, (40.8, 24.9, 34.3)),
        "attack_target": ("target", {AttackTarget.INDIVIDUALS: 10258, AttackTarget.GROUP: 740,
                                     AttackTarget.NONE: 15425}, (38.8, 2.8, 58.4)),
    }
    worst = 0.0
    for dim, (attr, counts, expected) in cases.items():
        dist = label_distribution(_records(attr, counts))
        for value, want in zip(counts, expected):
            count, pct = dist.categorical[dim][value.value]
            assert count == counts[value]
            worst = max(worst, abs(pct - want))
    gate(3, worst <= 0.05, f"corpus label shares for attack-or-not/form/target, max deviation {worst:.3f} pp (<= 0.05)")


def test_criterion_4_kappa_oracle():
    worst = 0.0
    tables = 0
    for n in range(1, 21):
        for a, b, c in itertools.product(range(n + 1), repeat=3):
            d = n - a - b - c
            if d < 0:
                continue
            tables += 1
            p_o = Fraction(a + d, n)
            p_e = Fraction((a + b) * (a + c) + (c + d) * (b + d), n * n)
            direct = 1.0 if p_e == 1 else float((p_o - p_e) / (1 - p_e))
            kappa, _ = kappa_from_table(AgreementTable(("x", "y"), ((a, b), (c, d))))
            worst = max(worst, abs(kappa - direct))
    ident, ident_rate = cohen_kappa(list("xyyxz"), list("xyyxz"))
    k, rate = kappa_from_table(AgreementTable(("x", "y"), ((45, 5), (15, 35))))
    ok = worst <= 1e-12 and ident == 1.0 and ident_rate == 1.0 and abs(k - 0.6) <= 1e-12 and rate == 0.8
    gate(4, ok, f"kappa over {tables} 2x2 tables, max error {worst:.1e}; identical -> {ident}; "
                f"45/5/15/35 -> kappa {k:.12f}, rate {rate}")


def _cov_pearson(xs, ys):
    n = len(xs)
    sx, sy = sum(xs), sum(ys)
    cov = n * sum(x * y for x, y in zip(xs, ys)) - sx * sy
    vx = n * sum(x * x for x in xs) - sx * sx
    vy = n * sum(y * y for y in ys) - sy * sy
    return cov / math.sqrt(vx * vy)


def test_criterion_5_metric_properties():
    rng = random.Random(5)
    violations = 0
    preds, golds = [], []
    for _ in range(10_000):
        p, g = random_record(rng), random_record(rng)
        preds.append(p)
        golds.append(g)
        per_dim = min(accuracy([p], [g], d) for d in DIMENSIONS)
        violations += all_in_one_accuracy([p], [g]) > per_dim
    violations += all_in_one_accuracy(preds, golds) > min(accuracy(preds, golds, d) for d in DIMENSIONS)
    worst = 0.0
    for _ in range(500):
        n = rng.randint(2, 60)
        xs = [rng.randint(0, 100) for _ in range(n)]
        ys = [rng.randint(0, 100) for _ in range(n)]
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        worst = max(worst, abs(pearson(xs, ys) - _cov_pearson(xs, ys)))
    trivial = pearson([1, 2, 3, 4], [2, 4, 6, 8]) == 1.0 and pearson([1, 2, 3, 4], [8, 6, 4, 2]) == -1.0
    gate(5, violations == 0 and worst <= 1e-9 and trivial,
         f"all-in-one bound over 10000 pairs, {violations} violations; pearson max error {worst:.1e}; "
         f"trivial +/-1 {'ok' if trivial else 'wrong'}")


def test_criterion_6_round_trips():
    rng = random.Random(6)
    block_bad = record_bad = 0
    for i in range(1000):
        block = build_thread_block(f"rt{i}", random_raw_comments(rng, max_nodes=20))
        line = serialize_block(block)
        again = parse_block(line)
        block_bad += again != block or serialize_block(again) != line
        rec = random_record(rng)
        record_bad += parse_analyzer_reply(format_analyzer_reply(rec)) != rec
    gate(6, block_bad == 0 and record_bad == 0,
         f"round-trips over 1000 blocks and 1000 records, {block_bad} + {record_bad} mismatches")


def test_criterion_7_partitions():
    rng = random.Random(7)
    bad = 0
    corpora = 25
    for c in range(corpora):
        blocks = [build_thread_block(f"c{c}b{i}", random_raw_comments(rng, max_nodes=15)) for i in range(8)]
        gold = {(b.block_id, n.coord): random_record(rng, attack_bias=rng.random()) for b in blocks for n in b.nodes}
        part = partition_for_modules(Corpus(blocks, gold))
        total = len(gold)
        n_exp = sum(r.presence is AttackPresence.EXPLICIT for r in gold.values())
        n_imp = sum(r.presence is AttackPresence.IMPLICIT for r in gold.values())
        sizes_ok = part.sizes() == {"explicit_detector": total, "explicit_analyzer": n_exp,
                                    "implicit_detector": total - n_exp, "implicit_analyzer": n_imp}
        members = {name: {(it.block_id, it.coord) for it in items} for name, items in part.sets().items()}
        brute = {"explicit_detector": set(), "explicit_analyzer": set(),
                 "implicit_detector": set(), "implicit_analyzer": set()}
        for key, r in gold.items():
            brute["explicit_detector"].add(key)
            if r.presence is AttackPresence.EXPLICIT:
                brute["explicit_analyzer"].add(key)
            else:
                brute["implicit_detector"].add(key)
            if r.presence is AttackPresence.IMPLICIT:
                brute["implicit_analyzer"].add(key)
        labels_ok = all(it.label == (gold[(it.block_id, it.coord)].presence is AttackPresence.EXPLICIT)
                        for it in part.explicit_detector_set)
        bad += not (sizes_ok and members == brute and labels_ok)
    gate(7, bad == 0, f"partition sizes and membership on {corpora} random gold corpora, {bad} failures")


def test_criterion_8_determinism(tmp_path, capsys):
    corpus_path = tmp_path / "synthetic.jsonl"
    dump_corpus(Corpus(synthetic_blocks()), corpus_path)
    rules = tmp_path / "rules.json"
    rules.write_text(json.dumps(LEXICON_RULES))
    cfg = tmp_path / "lexicon.json"
    cfg.write_text(json.dumps({"kind": "lexicon", "rules_path": "rules.json"}))
    outputs = []
    for p in (1, 4, 16):
        out = tmp_path / f"detect_p{p}.jsonl"
        assert run(["detect", str(corpus_path), "--backend-config", str(cfg),
                    "--parallelism", str(p), "-o", str(out)]) == 0
        outputs.append(out.read_bytes())
    detect_ok = outputs[0] == outputs[1] == outputs[2] and outputs[0].count(b"\n") == 30

    splits = []
    for attempt in range(2):
        out_dir = tmp_path / f"split{attempt}"
        assert run(["split", str(corpus_path), "--seed", "7", "--out-dir", str(out_dir)]) == 0
        splits.append([(out_dir / f"{s}.jsonl").read_bytes() for s in ("train", "val", "test")])
    split_ok = splits[0] == splits[1]
    capsys.readouterr()
    gate(8, detect_ok and split_ok,
         f"detect byte-identical at parallelism 1/4/16: {detect_ok}; split --seed 7 stable: {split_ok}")


def test_criterion_9_flat_adapter(tmp_path):
    hate = tmp_path / "hate.csv"
    write_hate_fixture(hate)
    rep = import_flat(hate, CONFIGS / "mapping_hate_offensive.json").import_report
    expected = {"0": 5.77, "1": 77.43, "2": 16.80}
    worst = max(abs(rep["class_shares"][k] - v) for k, v in expected.items())

    ic = tmp_path / "intoxicat.csv"
    write_intoxicat_fixture(ic)
    corpus = import_flat(ic, CONFIGS / "mapping_intoxicat.json")
    irep = corpus.import_report
    n = irep["imported"]
    categories = {
        "is_abusive": irep["flag_counts"]["is_abusive"],
        "not_abusive": irep["class_counts"]["not_abusive"],
        "is_explicit": irep["class_counts"]["is_explicit"],
        "is_implicit": irep["class_counts"]["is_implicit"],
    }
    want = {"is_abusive": (6047, 20.29), "not_abusive": (23762, 79.71),
            "is_explicit": (5597, 18.78), "is_implicit": (450, 1.51)}
    ic_ok = n == 29809 and all(
        categories[k] == cnt and abs(100 * categories[k] / n - pct) <= 0.01 for k, (cnt, pct) in want.items()
    )
    presences = [r.presence for r in corpus.gold.values()]
    mapping_ok = (presences.count(AttackPresence.EXPLICIT) == 5597
                  and presences.count(AttackPresence.IMPLICIT) == 450
                  and presences.count(AttackPresence.NONE) == 23762)
    gate(9, rep["imported"] == 24783 and worst <= 0.01 and ic_ok and mapping_ok,
         f"hate/offensive fixture shares max deviation {worst:.4f} pp (<= 0.01); InToxiCat categories "
         f"{sorted(categories)} reproduced: {ic_ok and mapping_ok}")
