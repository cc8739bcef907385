import logging
import time
from datetime import datetime
from typing import Any, Dict, List

from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session

from ..public.models import AuditTrail
from ..utils.formatting_id import format_audit_id

logger = logging.getLogger("ilm.registry")


def _audit_row(audit_id: str, entry: Dict[str, Any], timestamp: datetime) -> AuditTrail:
    return AuditTrail(
        audit_id=audit_id,
        run_id=entry["run_id"],
        target_table=entry["target_table"],
        record_id=entry["record_id"],
        action_type=entry["action_type"],
        old_value=entry.get("old_value", ""),
        new_value=entry.get("new_value", ""),
        audit_timestamp=timestamp,
        description=entry["description"],
    )


def append_audit_trail(
    db: Session,
    run_id: str,
    target_table: str,
    record_id: str,
    action_type: str,
    old_value: str,
    new_value: str,
    description: str,
    max_retries: int = 98
) -> AuditTrail:
    """
    Single audit entry, committed immediately. Audit ids colliding within the
    same 10 ms window move on to the next sequence number.
    """
    entry = dict(run_id=run_id, target_table=target_table, record_id=record_id, action_type=action_type,
                 old_value=old_value, new_value=new_value, description=description)
    retries = 0
    while True:
        if retries and retries % 10 == 0:
            time.sleep(0.001)
        audit = _audit_row(format_audit_id(sequence=retries + 1), entry, datetime.now())
        try:
            db.add(audit)
            db.commit()
            db.refresh(audit)
            return audit
        except IntegrityError:
            db.rollback()
            if retries == max_retries:
                raise
            retries += 1


def append_bulk_audit_trail(db: Session, audit_entries: List[Dict[str, Any]]) -> List[AuditTrail]:
    """
    Bulk insert, committed once. Each entry needs run_id, target_table,
    record_id, action_type and description; falls back to one-by-one inserts
    when generated ids collide.
    """
    if not audit_entries:
        return []
    base_timestamp = datetime.now()
    audit_objects = [_audit_row(format_audit_id(sequence=i + 1), entry, base_timestamp)
                     for i, entry in enumerate(audit_entries)]
    try:
        db.bulk_save_objects(audit_objects)
        db.commit()
    except IntegrityError:
        db.rollback()
        logger.info("Bulk audit insert collided; retrying entries one by one")
        audit_objects = [append_audit_trail(
            db=db,
            run_id=entry["run_id"],
            target_table=entry["target_table"],
            record_id=entry["record_id"],
            action_type=entry["action_type"],
            old_value=entry.get("old_value", ""),
            new_value=entry.get("new_value", ""),
            description=entry["description"],
        ) for entry in audit_entries]
    return audit_objects
