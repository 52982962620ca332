"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ThreadAttackError(Exception):
    """Base class for every error raised by this package."""


# -- thread model -----------------------------------------------------------

class ThreadError(ThreadAttackError):
    pass


class MissingParent(ThreadError):
    pass


class MultipleRoots(ThreadError):
    pass


class NoRoot(ThreadError):
    pass


class CycleDetected(ThreadError):
    pass


class DuplicateId(ThreadError):
    pass


class CoordNotFound(ThreadError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class LimitExceeded(ThreadError):
    """Block exceeds a configured depth or node-count safety limit."""


class ParseError(ThreadAttackError):
    """Malformed input record. Carries an optional line number and field name."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(ThreadAttackError):
    def __init__(self, message: str, violations: list | None = None):
        self.violations = list(violations or [])
        super().__init__(message)


# -- taxonomy ---------------------------------------------------------------

class UnknownLabel(ThreadAttackError, ValueError):
    def __init__(self, dimension: str, raw: str):
        self.dimension = dimension
        self.raw = raw
        super().__init__(f"unknown label {raw!r} for dimension {dimension!r}")


class RangeViolation(ThreadAttackError, ValueError):
    pass


class EmptyInput(ThreadAttackError, ValueError):
    pass


# -- model backends ---------------------------------------------------------

class BackendError(ThreadAttackError):
    """Failure while talking to a model backend. ``role`` is set by the pipeline."""

    role = None


class BackendUnavailable(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class AuthMissing(BackendError):
    pass


class InvalidRuleSet(ThreadAttackError, ValueError):
    pass


class TemplateError(ThreadAttackError):
    pass


class RoleInputMismatch(ThreadAttackError, ValueError):
    pass


class MalformedReply(ThreadAttackError):
    pass


class MissingField(MalformedReply):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"reply is missing field {name!r}")


# -- pipeline / evaluation / datasets ----------------------------------------

class ConfigError(ThreadAttackError, ValueError):
    pass


class SizeOrderViolation(ConfigError):
    pass


class RoutingConflict(ThreadAttackError):
    """Analyzer output disagrees with the routing decision (strict mode only)."""


class LengthMismatch(ThreadAttackError, ValueError):
    pass


class DegenerateInput(ThreadAttackError, ValueError):
    pass


class MissingGold(ThreadAttackError, KeyError):
    def __init__(self, keys):
        self.keys = list(keys)
        shown = ", ".join(map(str, self.keys[:5]))
        more = "" if len(self.keys) <= 5 else f" (+{len(self.keys) - 5} more)"
        super().__init__(f"no gold label for {shown}{more}")

    def __str__(self) -> str:
        return Exception.__str__(self)


class BadRatios(ThreadAttackError, ValueError):
    pass


class UnknownDesignatedBlock(ThreadAttackError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class UnmappedClass(ThreadAttackError, ValueError):
    pass
