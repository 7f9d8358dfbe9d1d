import logging
from pathlib import Path
import threading

from pydantic import RootModel

from ..models.audit import AuditRecord, EventSubtype, EventType
from ..util import write_model

logger = logging.getLogger(__name__)
lifecycle_logger = logging.getLogger("lifecycle")


class RunAudit:
    """Thread-safe in-memory collector of audit records for one CLI run"""

    def __init__(self) -> None:
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def log_event(
        self, event_type: EventType, event_subtype: EventSubtype, **event_data
    ) -> None:
        """Record an audit entry; failures never reach the caller"""
        try:
            record = AuditRecord(
                event_type=event_type, event_subtype=event_subtype, **event_data
            )
            with self._lock:
                self._records.append(record)
            suffix = ""
            if record.execution_time_ms is not None:
                suffix = f" ({record.execution_time_ms:.1f} ms)"
            lifecycle_logger.info(
                f"{event_type.value}/{event_subtype.value} {record.stage or ''}{suffix}"
            )
        except Exception as e:
            logger.error(f"Failed to record audit entry: {e}", exc_info=True)

    @property
    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def failures(self) -> list[AuditRecord]:
        return [record for record in self.records if record.success is False]

    def dump(self, path: Path) -> Path:
        return write_model(path, RootModel[list[AuditRecord]](self.records))


# Global audit service instance - initialized by the CLI
audit_service: RunAudit | None = None


def init_audit_service() -> RunAudit:
    global audit_service
    audit_service = RunAudit()
    return audit_service


def get_audit_service() -> RunAudit:
    """Get the global audit service instance"""
    if audit_service is None:
        raise RuntimeError("Audit service not initialized")
    return audit_service
