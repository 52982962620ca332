"""Divide-and-conquer routing of comments through the four model roles.

Stage 1 asks the explicit detector about the bare comment. A positive goes to
the explicit analyzer; a negative goes, with its thread context, to the
implicit detector. An implicit positive goes to the implicit analyzer and
everything else receives the null record.
"""

from __future__ import annotations

import logging
import time
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .backend import (
    Backend,
    BackendConfig,
    CheckResult,
    ModelRole,
    Template,
    Verdict,
    build_prompt,
    load_templates,
    make_backend,
    parse_analyzer_reply,
    parse_detector_reply,
    sha256_text,
)
from .context import ContextPolicy, select_context
from .errors import (
    BackendError,
    ConfigError,
    MalformedReply,
    RangeViolation,
    RoutingConflict,
    SizeOrderViolation,
    ThreadAttackError,
    UnknownLabel,
)
from .taxonomy import AttackPresence, LabelRecord, null_record
from .thread_model import Coordinate, ThreadBlock, get_node

log = logging.getLogger(__name__)

OUTCOME_SCHEMA = "threadattack.outcome/1"
_PARSE_ERRORS = (MalformedReply, UnknownLabel, RangeViolation)


@dataclass(frozen=True)
class PipelineConfig:
    backends: Mapping[ModelRole, BackendConfig]
    context_policy: ContextPolicy = ContextPolicy.SAME_LEVEL
    parallelism: int = 1
    enforce_size_order: bool = True
    strict: bool = False
    strict_json: bool = False
    max_context_entries: int | None = None
    templates_dir: str | None = None
    null_confidence: float = 100.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "context_policy", ContextPolicy.parse(self.context_policy))
        object.__setattr__(self, "backends", {ModelRole(k): v for k, v in self.backends.items()})
        missing = [r.value for r in ModelRole if r not in self.backends]
        if missing:
            raise ConfigError(f"no backend bound for roles: {missing}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be a positive integer")


def check_size_order(config: PipelineConfig) -> list[str]:
    """Explicit-role models must be no larger than their implicit counterparts.

    Returns the broken pairs. Only checked when every declared size is present.
    """
    sizes = {r: config.backends[r].declared_size for r in ModelRole}
    if any(s is None for s in sizes.values()):
        return []
    problems = []
    for small, big in ((ModelRole.EXPLICIT_DETECTOR, ModelRole.IMPLICIT_DETECTOR),
                       (ModelRole.EXPLICIT_ANALYZER, ModelRole.IMPLICIT_ANALYZER)):
        if sizes[small] > sizes[big]:
            problems.append(f"{small.value} ({sizes[small]:g}) is larger than {big.value} ({sizes[big]:g})")
    return problems


@dataclass(frozen=True)
class TraceStep:
    role: ModelRole
    request_digest: str
    reply_digest: str
    latency: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class PipelineOutcome:
    block_id: str
    coord: Coordinate
    comment_id: str
    check1: CheckResult | None
    check2: CheckResult | None
    record: LabelRecord | None
    trace: tuple[TraceStep, ...]
    diagnostic: str | None = None

    @property
    def ok(self) -> bool:
        return self.diagnostic is None

    @property
    def key(self) -> tuple[str, Coordinate]:
        return (self.block_id, self.coord)

    def to_json(self) -> dict[str, Any]:
        def check(c: CheckResult | None):
            return None if c is None else {"role": c.role.value, "verdict": c.verdict.value, "raw": c.raw}

        return {
            "schema_version": OUTCOME_SCHEMA,
            "block_id": self.block_id,
            "level": self.coord.level,
            "seq": self.coord.seq,
            "comment_id": self.comment_id,
            "check1": check(self.check1),
            "check2": check(self.check2),
            "record": None if self.record is None else self.record.to_dict(),
            "diagnostic": self.diagnostic,
            "trace": [
                {"role": s.role.value, "request_sha256": s.request_digest, "reply_sha256": s.reply_digest}
                for s in self.trace
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "PipelineOutcome":
        def check(c):
            return None if c is None else CheckResult(ModelRole(c["role"]), Verdict(c["verdict"]), c.get("raw", ""))

        return cls(
            block_id=data["block_id"],
            coord=Coordinate(int(data["level"]), int(data["seq"])),
            comment_id=data.get("comment_id", ""),
            check1=check(data.get("check1")),
            check2=check(data.get("check2")),
            record=None if data.get("record") is None else LabelRecord.from_dict(data["record"]),
            trace=tuple(
                TraceStep(ModelRole(s["role"]), s["request_sha256"], s["reply_sha256"])
                for s in data.get("trace", [])
            ),
            diagnostic=data.get("diagnostic"),
        )


@dataclass
class CorpusRun:
    outcomes: list[PipelineOutcome]
    summary: dict[str, int]

    @property
    def diagnostics(self) -> list[PipelineOutcome]:
        return [o for o in self.outcomes if not o.ok]


def summarize(outcomes: Iterable[PipelineOutcome]) -> dict[str, int]:
    counts = Counter({p.value: 0 for p in AttackPresence})
    counts["diagnostic"] = 0
    for o in outcomes:
        counts["diagnostic" if o.record is None else o.record.presence.value] += 1
    return dict(counts)


class Pipeline:
    """Bound backends and templates for one configuration."""

    def __init__(
        self,
        config: PipelineConfig,
        backends: Mapping[ModelRole, Backend] | None = None,
        templates: Mapping[ModelRole, Template] | None = None,
    ):
        self.config = config
        problems = check_size_order(config) if config.enforce_size_order else []
        if problems:
            msg = "model size ordering violated: " + "; ".join(problems)
            if config.strict:
                raise SizeOrderViolation(msg)
            warnings.warn(msg, stacklevel=2)
        if backends is None:
            cache: dict[int, Backend] = {}
            backends = {}
            for role, bc in config.backends.items():
                if id(bc) not in cache:
                    cache[id(bc)] = make_backend(bc)
                backends[role] = cache[id(bc)]
        self.backends = dict(backends)
        self.templates = dict(templates) if templates is not None else load_templates(config.templates_dir)

    def _call(self, role: ModelRole, request, trace: list[TraceStep]) -> str:
        t0 = time.perf_counter()
        try:
            reply = self.backends[role].invoke(request)
        except BackendError as exc:
            exc.role = role
            exc.args = (f"[{role.value}] {exc}",)
            raise
        trace.append(TraceStep(role, request.digest, sha256_text(reply), time.perf_counter() - t0))
        return reply

    def _analyze(self, role: ModelRole, reply: str) -> LabelRecord:
        expected = role.attack_class
        if not self.config.strict:
            return parse_analyzer_reply(reply, presence=expected, strict_json=self.config.strict_json)
        record = parse_analyzer_reply(reply, strict_json=self.config.strict_json)
        if record.presence is not expected:
            raise RoutingConflict(
                f"{role.value} labelled the comment {record.presence.value!r}, routing says {expected.value!r}"
            )
        return record

    def detect_comment(self, block: ThreadBlock, coord: Coordinate | tuple[int, int]) -> PipelineOutcome:
        node = get_node(block, coord)
        coord = node.coord
        cfg = self.config
        trace: list[TraceStep] = []
        check1 = check2 = None

        def failed(exc: Exception) -> PipelineOutcome:
            return PipelineOutcome(block.block_id, coord, node.id, check1, check2, None, tuple(trace),
                                   f"{type(exc).__name__}: {exc}")

        try:
            req = build_prompt(ModelRole.EXPLICIT_DETECTOR, node.text, templates=self.templates)
            reply = self._call(ModelRole.EXPLICIT_DETECTOR, req, trace)
            check1 = parse_detector_reply(ModelRole.EXPLICIT_DETECTOR, reply, strict=cfg.strict)
            if check1.positive:
                req = build_prompt(ModelRole.EXPLICIT_ANALYZER, node.text, prior_check=check1,
                                   templates=self.templates)
                record = self._analyze(ModelRole.EXPLICIT_ANALYZER,
                                       self._call(ModelRole.EXPLICIT_ANALYZER, req, trace))
                return PipelineOutcome(block.block_id, coord, node.id, check1, None, record, tuple(trace))

            window = select_context(block, coord, cfg.context_policy, cfg.max_context_entries)
            req = build_prompt(ModelRole.IMPLICIT_DETECTOR, node.text, window, check1, self.templates)
            reply = self._call(ModelRole.IMPLICIT_DETECTOR, req, trace)
            check2 = parse_detector_reply(ModelRole.IMPLICIT_DETECTOR, reply, strict=cfg.strict)
            if check2.positive:
                req = build_prompt(ModelRole.IMPLICIT_ANALYZER, node.text, window, check2, self.templates)
                record = self._analyze(ModelRole.IMPLICIT_ANALYZER,
                                       self._call(ModelRole.IMPLICIT_ANALYZER, req, trace))
            else:
                record = null_record(cfg.null_confidence)
            return PipelineOutcome(block.block_id, coord, node.id, check1, check2, record, tuple(trace))
        except _PARSE_ERRORS as exc:
            return failed(exc)

    def _safe_detect(self, block: ThreadBlock, coord: Coordinate) -> PipelineOutcome:
        try:
            return self.detect_comment(block, coord)
        except ThreadAttackError as exc:
            node = get_node(block, coord)
            log.warning("block %s %s failed: %s", block.block_id, coord, exc)
            return PipelineOutcome(block.block_id, coord, node.id, None, None, None, (),
                                   f"{type(exc).__name__}: {exc}")

    def _run(self, tasks: list[tuple[ThreadBlock, Coordinate]]) -> list[PipelineOutcome]:
        if self.config.parallelism == 1 or len(tasks) <= 1:
            results = [self._safe_detect(b, c) for b, c in tasks]
        else:
            with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
                results = list(pool.map(lambda t: self._safe_detect(*t), tasks))
        return sorted(results, key=lambda o: (o.block_id, o.coord))

    def detect_block(self, block: ThreadBlock) -> list[PipelineOutcome]:
        """One outcome per comment in (level, seq) order; failures become diagnostic outcomes."""
        return self._run([(block, n.coord) for n in block.nodes])

    def detect_corpus(self, blocks: Iterable[ThreadBlock]) -> CorpusRun:
        outcomes = self._run([(b, n.coord) for b in blocks for n in b.nodes])
        return CorpusRun(outcomes, summarize(outcomes))


def _pipeline(config: PipelineConfig | Pipeline) -> Pipeline:
    return config if isinstance(config, Pipeline) else Pipeline(config)


def detect_comment(config: PipelineConfig | Pipeline, block: ThreadBlock, coord) -> PipelineOutcome:
    return _pipeline(config).detect_comment(block, coord)


def detect_block(config: PipelineConfig | Pipeline, block: ThreadBlock) -> list[PipelineOutcome]:
    return _pipeline(config).detect_block(block)


def detect_corpus(config: PipelineConfig | Pipeline, blocks: Iterable[ThreadBlock]) -> CorpusRun:
    return _pipeline(config).detect_corpus(blocks)
