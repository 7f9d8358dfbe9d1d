from datetime import datetime
from enum import Enum

from pydantic import BaseModel, Field


class EventType(str, Enum):
    """Main categories of audit events"""

    SOLVER_LIFECYCLE = "solver_lifecycle"
    CONTINUATION = "continuation"
    CONSTRUCTION = "construction"
    SIMULATION = "simulation"
    VERIFICATION = "verification"


class EventSubtype(str, Enum):
    """Specific audit event subtypes"""

    # Solver lifecycle events
    SOLVE_STARTED = "solve_started"
    SOLVE_COMPLETED = "solve_completed"
    SOLVE_FAILED = "solve_failed"

    # Continuation events
    RUNG_STARTED = "rung_started"
    RUNG_COMPLETED = "rung_completed"
    RUNG_FAILED = "rung_failed"

    # Construction events
    ARC_COMPLETED = "arc_completed"
    TOUCH_RESTARTED = "touch_restarted"
    RESTART_FAILED = "restart_failed"

    # Simulation events
    SIMULATION_STARTED = "simulation_started"
    SIMULATION_COMPLETED = "simulation_completed"
    SIMULATION_FAILED = "simulation_failed"

    # Verification events
    CHECK_PASSED = "check_passed"
    CHECK_FAILED = "check_failed"


class AuditRecord(BaseModel):
    """Audit record tracking solver stages and their outcome"""

    timestamp: datetime = Field(default_factory=datetime.now)

    # Event categorization using enums
    event_type: EventType
    event_subtype: EventSubtype

    # Context fields for filtering and debugging
    stage: str | None = None
    regime: str | None = None

    # Execution results
    success: bool | None = None
    error_message: str | None = None
    execution_time_ms: float | None = None

    # Additional event-specific data as JSON
    context_data: str | None = None
