"""Model roles, prompt construction, backends and reply parsing.

Four roles share one backend interface: ``invoke(request) -> reply text``.
Two backends ship: an OpenAI-compatible chat-completions client and a
deterministic lexicon backend used for tests and dry runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx

from .context import ContextWindow, render_context
from .errors import (
    AuthMissing,
    BackendTimeout,
    BackendUnavailable,
    ConfigError,
    InvalidRuleSet,
    MalformedReply,
    MissingField,
    RoleInputMismatch,
    TemplateError,
)
from .taxonomy import (
    DIMENSIONS,
    NUMERIC_FIELDS,
    RECORD_FIELDS,
    AttackPresence,
    LabelRecord,
    null_record,
    parse_label,
    parse_scale,
    validate_record,
)

log = logging.getLogger(__name__)

CONTEXT_OPEN = "<context>"
CONTEXT_CLOSE = "</context>"


class ModelRole(str, Enum):
    EXPLICIT_DETECTOR = "explicit_detector"
    EXPLICIT_ANALYZER = "explicit_analyzer"
    IMPLICIT_DETECTOR = "implicit_detector"
    IMPLICIT_ANALYZER = "implicit_analyzer"

    @property
    def is_detector(self) -> bool:
        return self in (ModelRole.EXPLICIT_DETECTOR, ModelRole.IMPLICIT_DETECTOR)

    @property
    def is_implicit(self) -> bool:
        return self in (ModelRole.IMPLICIT_DETECTOR, ModelRole.IMPLICIT_ANALYZER)

    @property
    def attack_class(self) -> AttackPresence:
        return AttackPresence.IMPLICIT if self.is_implicit else AttackPresence.EXPLICIT


class Verdict(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class CheckResult:
    role: ModelRole
    verdict: Verdict
    raw: str = ""

    def __post_init__(self) -> None:
        if not self.role.is_detector:
            raise ValueError(f"CheckResult needs a detector role, got {self.role.value}")

    @property
    def positive(self) -> bool:
        return self.verdict is Verdict.POSITIVE

    def summary(self) -> str:
        kind = "implicit" if self.role.is_implicit else "explicit"
        outcome = f"{kind} attack" if self.positive else f"no {kind} attack"
        return f"{self.role.value.replace('_', ' ')} verdict: {self.verdict.value} ({outcome})"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptRequest:
    role: ModelRole
    comment_text: str
    context_transcript: str | None
    prior_check: str | None
    template_id: str
    text: str

    @property
    def digest(self) -> str:
        return sha256_text(self.text)


# -- templates --------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    id: str
    text: str


_PLACEHOLDER = re.compile(r"\{(comment|context|prior_check)\}")


def _check_template(role: ModelRole, tmpl: Template) -> None:
    names = set(_PLACEHOLDER.findall(tmpl.text))
    if "comment" not in names:
        raise TemplateError(f"template {tmpl.id!r} lacks a {{comment}} placeholder")
    if role.is_implicit:
        if "context" not in names or CONTEXT_OPEN not in tmpl.text or CONTEXT_CLOSE not in tmpl.text:
            raise TemplateError(
                f"template {tmpl.id!r} must wrap {{context}} in {CONTEXT_OPEN}...{CONTEXT_CLOSE}"
            )
    elif "context" in names or CONTEXT_OPEN in tmpl.text:
        raise TemplateError(f"explicit-role template {tmpl.id!r} must not carry a context section")
    if role is not ModelRole.EXPLICIT_DETECTOR and "prior_check" not in names:
        raise TemplateError(f"template {tmpl.id!r} lacks a {{prior_check}} placeholder")


def load_templates(directory: str | Path | None = None) -> dict[ModelRole, Template]:
    """Load ``<role>.txt`` templates; files missing from ``directory`` fall back to the packaged defaults."""
    out = {}
    pkg = resources.files("threadattack") / "templates"
    for role in ModelRole:
        name = f"{role.value}.txt"
        if directory is not None and (Path(directory) / name).is_file():
            path = Path(directory) / name
            tmpl = Template(str(path), path.read_text(encoding="utf-8"))
        else:
            tmpl = Template(f"default/{name}", (pkg / name).read_text(encoding="utf-8"))
        _check_template(role, tmpl)
        out[role] = tmpl
    return out


_DEFAULT_TEMPLATES: dict[ModelRole, Template] | None = None


def default_templates() -> dict[ModelRole, Template]:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


def build_prompt(
    role: ModelRole,
    comment: str,
    window: ContextWindow | None = None,
    prior_check: CheckResult | None = None,
    templates: Mapping[ModelRole, Template] | None = None,
) -> PromptRequest:
    role = ModelRole(role)
    if role.is_implicit != (window is not None):
        need = "requires" if role.is_implicit else "must not receive"
        raise RoleInputMismatch(f"{role.value} {need} a context window")
    if (role is ModelRole.EXPLICIT_DETECTOR) != (prior_check is None):
        need = "must not receive" if role is ModelRole.EXPLICIT_DETECTOR else "requires"
        raise RoleInputMismatch(f"{role.value} {need} a prior check result")

    tmpl = (templates or default_templates())[role]
    transcript = render_context(window) if window is not None else None
    prior = prior_check.summary() if prior_check is not None else None
    values = {"comment": comment, "context": transcript or "", "prior_check": prior or ""}
    text = _PLACEHOLDER.sub(lambda m: values[m.group(1)], tmpl.text)
    return PromptRequest(role, comment, transcript, prior, tmpl.id, text)


def extract_context_section(prompt: str) -> str | None:
    """Text between the context delimiters of a built prompt, or None if absent."""
    start = prompt.find(CONTEXT_OPEN + "\n")
    if start < 0:
        return None
    start += len(CONTEXT_OPEN) + 1
    end = prompt.find("\n" + CONTEXT_CLOSE, start - 1)
    if end < 0:
        return None
    return prompt[start:end] if end >= start else ""


# -- reply parsing ----------------------------------------------------------

_VERDICT_PHRASES = [
    (re.compile(
        r"\b(?:no|not|non)\b[\s-]*(?:an?\s+|any\s+)?(?:explicit\s+|implicit\s+)?attacks?\b"
        r"|\b(?:no|not)\s+(?:an?\s+)?(?:explicit|implicit)\b|\bnone\b"
    ), None),
    (re.compile(r"\bexplicit\b"), AttackPresence.EXPLICIT),
    (re.compile(r"\bimplicit\b"), AttackPresence.IMPLICIT),
]
_STRICT_VERDICTS = {
    "explicit attack": AttackPresence.EXPLICIT,
    "explicit": AttackPresence.EXPLICIT,
    "implicit attack": AttackPresence.IMPLICIT,
    "implicit": AttackPresence.IMPLICIT,
    "no attack": None,
}


def parse_detector_reply(role: ModelRole, reply: str, strict: bool = False) -> CheckResult:
    """Map a detector reply onto Positive/Negative for the role's attack class.

    Tolerant mode scans lines top-down; the first line naming a verdict
    decides. Strict mode requires the whole reply to be one verdict phrase.
    """
    role = ModelRole(role)
    if not role.is_detector:
        raise RoleInputMismatch(f"{role.value} is not a detector role")
    found: Any = ...
    if strict:
        key = " ".join(reply.strip().lower().split())
        if key in _STRICT_VERDICTS:
            found = _STRICT_VERDICTS[key]
    else:
        for line in reply.lower().splitlines():
            for pattern, cls in _VERDICT_PHRASES:
                if pattern.search(line):
                    found = cls
                    break
            if found is not ...:
                break
    if found is ...:
        raise MalformedReply(f"{role.value}: no verdict in reply {reply[:80]!r}")
    verdict = Verdict.POSITIVE if found is role.attack_class else Verdict.NEGATIVE
    return CheckResult(role, verdict, reply)


_FIELD_ALIASES = {
    "presence": "attack_or_not",
    "attack": "attack_or_not",
    "form": "attack_form",
    "target": "attack_target",
    "type": "attack_type",
    "intent": "attack_intent",
    "hazard": "hazard_level",
    "harm": "hazard_level",
    "harmfulness": "hazard_level",
    "confidence": "confidence_level",
}
_LINE = re.compile(r"^[\s\-*•>]*([A-Za-z][A-Za-z _\-]*?)\s*[:：=]\s*(.*?)\s*$")


def _field_name(raw: str) -> str | None:
    key = re.sub(r"[\s\-]+", "_", raw.strip().lower())
    if key in RECORD_FIELDS:
        return key
    return _FIELD_ALIASES.get(key)


def _record_from_values(values: Mapping[str, Any], presence: AttackPresence | None) -> LabelRecord:
    kwargs: dict[str, Any] = {}
    for name, (attr, _) in DIMENSIONS.items():
        if name not in values or values[name] in (None, ""):
            if name == "attack_or_not" and presence is not None:
                kwargs[attr] = presence
                continue
            raise MissingField(name)
        kwargs[attr] = parse_label(name, values[name])
    for name, attr in NUMERIC_FIELDS.items():
        if name not in values or values[name] in (None, ""):
            raise MissingField(name)
        kwargs[attr] = parse_scale(name, values[name])
    if presence is not None:
        kwargs["presence"] = presence
    record = LabelRecord(**kwargs)
    problems = validate_record(record)
    if problems:
        raise MalformedReply(f"inconsistent analyzer record: {problems[0]}")
    return record


def parse_analyzer_reply(
    reply: str,
    presence: AttackPresence | None = None,
    strict_json: bool = False,
) -> LabelRecord:
    """Parse a ``field: value`` (or JSON object) analyzer reply into a record.

    ``presence`` overrides the reply's attack_or_not before validation; the
    pipeline passes the class decided by routing.
    """
    body = reply.strip()
    if body.startswith("```"):
        body = re.sub(r"^```[a-zA-Z]*\n?|\n?```$", "", body).strip()
    values: dict[str, Any] = {}
    if strict_json or body.startswith("{"):
        try:
            obj = json.loads(body)
        except json.JSONDecodeError as exc:
            raise MalformedReply(f"analyzer reply is not valid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedReply("analyzer reply must be a JSON object")
        for k, v in obj.items():
            name = _field_name(str(k))
            if name is not None:
                values[name] = v
    else:
        for line in body.splitlines():
            m = _LINE.match(line)
            if not m:
                continue
            name = _field_name(m.group(1))
            if name is not None and name not in values:
                values[name] = m.group(2).strip().strip("\"'`").rstrip(".;,")
    if not values:
        raise MalformedReply(f"no label fields in analyzer reply {reply[:80]!r}")
    return _record_from_values(values, presence)


def format_analyzer_reply(record: LabelRecord) -> str:
    """Inverse of :func:`parse_analyzer_reply`; floats use repr so they survive exactly."""
    d = record.to_dict()
    return "\n".join(f"{k}: {d[k]!r}" if k in NUMERIC_FIELDS else f"{k}: {d[k]}" for k in RECORD_FIELDS)


# -- backend configuration ------------------------------------------------------

class BackendKind(str, Enum):
    REMOTE_LLM = "remote_llm"
    LEXICON = "lexicon"


_SIZE_SUFFIX = {"k": 1e3, "m": 1e6, "b": 1e9, "g": 1e9, "t": 1e12}


def parse_size(raw: Any) -> float | None:
    """Parameter count from a number or a string like ``"4B"`` / ``"0.5b"``."""
    if raw is None:
        return None
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*([kmbgtKMBGT]?)\s*", str(raw))
    if not m:
        raise ConfigError(f"cannot read model size {raw!r}")
    return float(m.group(1)) * _SIZE_SUFFIX.get(m.group(2).lower(), 1.0)


@dataclass(frozen=True)
class LexiconRules:
    explicit_tokens: frozenset[str]
    implicit_triggers: frozenset[str]
    implicit_markers: frozenset[str]
    explicit_record: LabelRecord
    implicit_record: LabelRecord

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LexiconRules":
        def tokens(key: str) -> frozenset[str]:
            vals = data.get(key) or []
            if isinstance(vals, str) or not all(isinstance(v, str) for v in vals):
                raise InvalidRuleSet(f"{key} must be a list of strings")
            out = frozenset(v.casefold() for v in vals if v.strip())
            if not out:
                raise InvalidRuleSet(f"lexicon rules need a non-empty {key}")
            return out

        def record(key: str, presence: AttackPresence) -> LabelRecord:
            base = replace(null_record(), presence=presence)
            try:
                rec = LabelRecord.from_dict(data.get(key) or {}, defaults=base).with_presence(presence)
            except (ValueError, MalformedReply) as exc:
                raise InvalidRuleSet(f"{key}: {exc}") from None
            return rec

        return cls(
            tokens("explicit_tokens"),
            tokens("implicit_triggers"),
            tokens("implicit_markers"),
            record("explicit_record", AttackPresence.EXPLICIT),
            record("implicit_record", AttackPresence.IMPLICIT),
        )


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint: str | None = None
    model_name: str | None = None
    auth_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    declared_size: float | None = None
    max_in_flight: int = 8
    backoff: float = 0.5
    temperature: float = 0.0
    rules: LexiconRules | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.kind is BackendKind.REMOTE_LLM and not (self.endpoint and self.model_name):
            raise ConfigError("remote_llm backend needs endpoint and model_name")
        if self.kind is BackendKind.LEXICON and self.rules is None:
            raise ConfigError("lexicon backend needs rules")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path | None = None) -> "BackendConfig":
        data = dict(data)
        kind = BackendKind(data.pop("kind", BackendKind.LEXICON.value))
        rules = None
        if kind is BackendKind.LEXICON:
            if "rules_path" in data:
                path = Path(data.pop("rules_path"))
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                rules = load_lexicon_rules(path)
            else:
                rules = LexiconRules.from_dict(data.pop("rules", None) or {})
        allowed = {"endpoint", "model_name", "auth_env", "timeout", "retries", "max_in_flight",
                   "backoff", "temperature"}
        unknown = set(data) - allowed - {"declared_size"}
        if unknown:
            raise ConfigError(f"unknown backend config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k in allowed}
        return cls(kind, declared_size=parse_size(data.get("declared_size")), rules=rules, **kwargs)


def load_lexicon_rules(path: str | Path) -> LexiconRules:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidRuleSet(f"{path}: invalid JSON ({exc.msg})") from None
    return LexiconRules.from_dict(data)


def load_backend_config(path: str | Path) -> dict[ModelRole, BackendConfig]:
    """Read a role -> backend map from JSON.

    Either one backend object used for every role, or
    ``{"default": {...}, "roles": {"explicit_detector": {...}, ...}}``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    return backend_map_from_dict(data, base_dir=path.parent)


def backend_map_from_dict(data: Mapping[str, Any], base_dir: str | Path | None = None) -> dict[ModelRole, BackendConfig]:
    if "roles" not in data:
        shared = BackendConfig.from_dict(data, base_dir)
        return {role: shared for role in ModelRole}
    default = data.get("default")
    roles = data["roles"]
    out = {}
    for role in ModelRole:
        spec = roles.get(role.value)
        if spec is None and default is None:
            raise ConfigError(f"no backend bound for role {role.value}")
        merged = {**(default or {}), **(spec or {})}
        out[role] = BackendConfig.from_dict(merged, base_dir)
    unknown = set(roles) - {r.value for r in ModelRole}
    if unknown:
        raise ConfigError(f"unknown roles in backend config: {sorted(unknown)}")
    return out


# -- backends ---------------------------------------------------------------

class Backend(Protocol):
    config: BackendConfig

    def invoke(self, request: PromptRequest) -> str: ...


@dataclass
class LexiconBackend:
    """Token rules standing in for the four models. Stateless and deterministic."""

    config: BackendConfig

    @property
    def rules(self) -> LexiconRules:
        assert self.config.rules is not None
        return self.config.rules

    def invoke(self, request: PromptRequest) -> str:
        rules = self.rules
        comment = request.comment_text.casefold()
        role = request.role
        if role is ModelRole.EXPLICIT_DETECTOR:
            hit = any(t in comment for t in rules.explicit_tokens)
            return "explicit" if hit else "no attack"
        if role is ModelRole.IMPLICIT_DETECTOR:
            context = (request.context_transcript or "").casefold()
            hit = any(t in context for t in rules.implicit_triggers) and any(
                t in comment for t in rules.implicit_markers
            )
            return "implicit" if hit else "no attack"
        record = rules.implicit_record if role.is_implicit else rules.explicit_record
        return format_analyzer_reply(record)


@dataclass
class RemoteLLMBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint."""

    config: BackendConfig
    transport: httpx.BaseTransport | None = None
    sleep: Any = time.sleep
    _gate: threading.BoundedSemaphore = field(init=False, repr=False)
    _client: httpx.Client | None = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self) -> None:
        self._gate = threading.BoundedSemaphore(self.config.max_in_flight)

    def _token(self) -> str:
        token = os.environ.get(self.config.auth_env, "").strip()
        if not token:
            raise AuthMissing(f"environment variable {self.config.auth_env} is not set")
        return token

    def _http(self) -> httpx.Client:
        with self._lock:
            if self._client is None:
                self._client = httpx.Client(timeout=self.config.timeout, transport=self.transport)
            return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def invoke(self, request: PromptRequest) -> str:
        token = self._token()
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": request.text}],
            "temperature": self.config.temperature,
        }
        headers = {"Authorization": f"Bearer {token}"}
        last: Exception | None = None
        timed_out = False
        for attempt in range(self.config.retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._http().post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last, timed_out = exc, True
                log.warning("%s: timeout on attempt %d", request.role.value, attempt + 1)
                continue
            except httpx.TransportError as exc:
                last, timed_out = exc, False
                log.warning("%s: transport error on attempt %d: %s", request.role.value, attempt + 1, exc)
                continue
            if resp.status_code in (408, 429) or resp.status_code >= 500:
                last, timed_out = BackendUnavailable(f"HTTP {resp.status_code}"), False
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise BackendUnavailable("unexpected chat-completions response shape") from None
            if not isinstance(content, str):
                raise BackendUnavailable("chat-completions content is not text")
            return content
        if timed_out:
            raise BackendTimeout(f"no reply after {self.config.retries + 1} attempts: {last}")
        raise BackendUnavailable(f"gave up after {self.config.retries + 1} attempts: {last}")


def make_backend(config: BackendConfig, **kwargs: Any) -> Backend:
    if config.kind is BackendKind.LEXICON:
        return LexiconBackend(config)
    return RemoteLLMBackend(config, **kwargs)


def lexicon_backend(rules: LexiconRules | Mapping[str, Any]) -> LexiconBackend:
    if not isinstance(rules, LexiconRules):
        rules = LexiconRules.from_dict(rules)
    return LexiconBackend(BackendConfig(BackendKind.LEXICON, rules=rules))


def invoke(backend: Backend, request: PromptRequest) -> str:
    return backend.invoke(request)
