"""Scoped audit context for solver stages.

Every scope pushes one frame onto a ContextVar stack. A frame holds explicit
record fields (``stage``, ``regime``) and free-form data; events merge all
frames, inner ones winning, and store the data as JSON in ``context_data``.
"""

from collections.abc import Callable, Iterator, Mapping
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from functools import wraps
import inspect
import json
import logging
import time
from typing import Any, ParamSpec, TypeVar

from ..models.audit import EventSubtype, EventType
from .service import RunAudit, get_audit_service

logger = logging.getLogger(__name__)

P = ParamSpec("P")
T = TypeVar("T")

RECORD_FIELDS = frozenset({"stage", "regime"})
OUTCOME_FIELDS = frozenset({"success", "error_message", "execution_time_ms"})


@dataclass(frozen=True)
class ScopeFrame:
    fields: dict[str, Any] = field(default_factory=dict)
    data: dict[str, Any] = field(default_factory=dict)


_scope_stack: ContextVar[tuple[ScopeFrame, ...]] = ContextVar("sovdebt_audit_scope", default=())


def _json_safe(value: Any) -> Any:
    if isinstance(value, int | float | str | bool) or value is None:
        return value
    return repr(value)


def _frame(values: Mapping[str, Any]) -> ScopeFrame:
    fields = {k: v for k, v in values.items() if k in RECORD_FIELDS and v is not None}
    data = {k: _json_safe(v) for k, v in values.items() if k not in RECORD_FIELDS}
    return ScopeFrame(fields, data)


def current_scope() -> ScopeFrame:
    """All active frames merged, innermost last"""
    merged = ScopeFrame()
    for frame in _scope_stack.get():
        merged.fields.update(frame.fields)
        merged.data.update(frame.data)
    return merged


@contextmanager
def _pushed(frame: ScopeFrame) -> Iterator[None]:
    token = _scope_stack.set((*_scope_stack.get(), frame))
    try:
        yield
    finally:
        _scope_stack.reset(token)


def _active_service() -> RunAudit | None:
    try:
        return get_audit_service()
    except RuntimeError:
        return None


def _emit(
    service: RunAudit,
    event_type: EventType,
    event_subtype: EventSubtype,
    **extra: Any,
) -> None:
    scope = current_scope()
    outcome = {k: v for k, v in extra.items() if k in OUTCOME_FIELDS}
    fields = {**scope.fields, **{k: v for k, v in extra.items() if k in RECORD_FIELDS}}
    data = {
        **scope.data,
        **{
            k: _json_safe(v)
            for k, v in extra.items()
            if k not in RECORD_FIELDS and k not in OUTCOME_FIELDS
        },
    }
    service.log_event(
        event_type,
        event_subtype,
        context_data=json.dumps(data) if data else None,
        **fields,
        **outcome,
    )


def solver_scope(
    *,
    event_type: EventType | None = None,
    start_event: EventSubtype | None = None,
    end_event: EventSubtype | None = None,
    error_event: EventSubtype | None = None,
    stage: str | None = None,
    regime: str | None = None,
    **context: Any,
) -> Callable[[Callable[P, T]], Callable[P, T]]:
    """Run the decorated function inside an audit scope.

    Args:
        event_type: Category of the lifecycle events; needed when any event is set
        start_event: Recorded on entry
        end_event: Recorded on success, with the elapsed time
        error_event: Recorded when the function raises, with the message
        stage: Stage name stored on every record of the scope
        regime: ``stoch`` or ``det``
        **context: Names of function arguments (or literal values) copied into
            ``context_data``
    """
    if event_type is None and (start_event or end_event or error_event):
        raise ValueError("event_type is required when lifecycle events are specified")

    def decorator(func: Callable[P, T]) -> Callable[P, T]:
        signature = inspect.signature(func)

        @wraps(func)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
            bound = signature.bind(*args, **kwargs)
            bound.apply_defaults()
            values: dict[str, Any] = {"stage": stage, "regime": regime}
            for key, source in context.items():
                if isinstance(source, str) and source in bound.arguments:
                    values[key] = bound.arguments[source]
                else:
                    values[key] = source

            service = _active_service()
            with _pushed(_frame(values)):
                started = time.perf_counter()
                if service and event_type and start_event:
                    _emit(service, event_type, start_event)
                try:
                    result = func(*args, **kwargs)
                except Exception as e:
                    if service and event_type and error_event:
                        _emit(
                            service,
                            event_type,
                            error_event,
                            success=False,
                            error_message=str(e),
                            execution_time_ms=(time.perf_counter() - started) * 1000,
                        )
                    raise
                if service and event_type and end_event:
                    _emit(
                        service,
                        event_type,
                        end_event,
                        success=True,
                        execution_time_ms=(time.perf_counter() - started) * 1000,
                    )
                return result

        return wrapper

    return decorator


def log_solver_event(event_type: EventType, event_subtype: EventSubtype, **context: Any) -> None:
    """Record one event carrying the enclosing scope plus ``context``.

    A no-op before the audit service is initialised; never raises.
    """
    service = _active_service()
    if service is None:
        return
    try:
        _emit(service, event_type, event_subtype, **context)
    except Exception as e:
        logger.error(f"Audit logging failed: {e}", exc_info=True)


@contextmanager
def solver_scope_context(**context: Any) -> Iterator[None]:
    """Add fields to the audit scope for the duration of a block.

        with solver_scope_context(stage="restart", x0=touch):
            log_solver_event(EventType.CONSTRUCTION, EventSubtype.TOUCH_RESTARTED)
    """
    with _pushed(_frame(context)):
        yield
