"""
Pipeline registry bookkeeping: one StageRun row per command execution and one
Artifact row per written file, each mirrored in the audit trail. Artifacts on
disk stay authoritative; the registry never feeds back into computation.
"""
import logging
import traceback
from datetime import datetime
from typing import Dict, List, Optional

from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from ..crud.base import get_latest, get_many_filtered
from ..errors import StorageError
from ..public.models import Artifact, StageRun
from ..utils.formatting_id import generate_ulid
from .audit_trail import append_audit_trail, append_bulk_audit_trail

logger = logging.getLogger("ilm.registry")


def start_stage(db: Session, stage: str, seed: int, config_hash: str, adapter: Optional[str] = None,
                parent_hash: Optional[str] = None) -> StageRun:
    run = StageRun(run_id=generate_ulid(), stage=stage, seed=seed, adapter=adapter, config_hash=config_hash,
                   parent_hash=parent_hash, status="running", started_at=datetime.now())
    try:
        db.add(run)
        db.commit()
        db.refresh(run)
        append_audit_trail(db, run_id=run.run_id, target_table="stage_run", record_id=run.run_id,
                           action_type="start", old_value="", new_value=stage,
                           description=f"{stage} seed={seed} config={config_hash[:12]}")
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Registry write failed for {stage}: {str(e)}\n{traceback.format_exc()}")
        raise StorageError(f"cannot register stage {stage}: {e}")
    return run


def finish_stage(db: Session, run: StageRun, status: str, artifacts: Optional[Dict[str, tuple]] = None,
                 detail: str = "") -> List[Artifact]:
    """
    Args:
        artifacts: name -> (path, content hash)
    """
    rows = []
    try:
        for name, (path, content_hash) in sorted((artifacts or {}).items()):
            rows.append(Artifact(artifact_id=generate_ulid(), run_id=run.run_id, stage=run.stage, seed=run.seed,
                                 name=name, path=str(path), content_hash=content_hash,
                                 config_hash=run.config_hash))
        db.add_all(rows)
        old_status = run.status
        run.status = status
        run.detail = detail
        run.finished_at = datetime.now()
        db.commit()
        append_bulk_audit_trail(db, [
            {"run_id": run.run_id, "target_table": "stage_run", "record_id": run.run_id, "action_type": "finish",
             "old_value": old_status, "new_value": status, "description": detail or run.stage},
        ] + [
            {"run_id": run.run_id, "target_table": "artifact", "record_id": row.artifact_id, "action_type": "write",
             "new_value": row.content_hash, "description": row.path} for row in rows
        ])
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Registry write failed for {run.stage}: {str(e)}\n{traceback.format_exc()}")
        raise StorageError(f"cannot finish stage {run.stage}: {e}")
    return rows


def latest_artifact(db: Session, stage: str, seed: int, name: str) -> Optional[Artifact]:
    return get_latest(db, Artifact, {"stage": stage, "seed": seed, "name": name}, "artifact_id")


def stage_history(db: Session, stage: str, limit: int = 100) -> List[StageRun]:
    return get_many_filtered(db, StageRun, {"stage": stage}, order_field="started_at", limit=limit)
