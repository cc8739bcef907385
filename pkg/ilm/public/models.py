from sqlalchemy import TEXT, TIMESTAMP, Column, Integer, String, func
from sqlalchemy.orm import declarative_base

Base = declarative_base()


#============================ Pipeline registry ============================
class StageRun(Base):
    __tablename__ = "stage_run"

    run_id = Column(String(26), primary_key=True, index=True)  # ULID
    stage = Column(String(32), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    adapter = Column(String(16))
    config_hash = Column(String(64), nullable=False)
    parent_hash = Column(String(64))
    status = Column(String(10), nullable=False)
    detail = Column(TEXT)
    started_at = Column(TIMESTAMP, nullable=False, server_default=func.current_timestamp())
    finished_at = Column(TIMESTAMP)


class Artifact(Base):
    __tablename__ = "artifact"

    artifact_id = Column(String(26), primary_key=True, index=True)  # ULID
    run_id = Column(String(26), nullable=False, index=True)
    stage = Column(String(32), nullable=False)
    seed = Column(Integer, nullable=False)
    name = Column(String(100), nullable=False)
    path = Column(TEXT, nullable=False)
    content_hash = Column(String(64), nullable=False)
    config_hash = Column(String(64), nullable=False)
    created_at = Column(TIMESTAMP, nullable=False, server_default=func.current_timestamp())


class AuditTrail(Base):
    __tablename__ = "audit_trail"

    audit_id = Column(String(26), primary_key=True, index=True)
    run_id = Column(String(26), nullable=False)
    target_table = Column(String(20), nullable=False)
    record_id = Column(String(100), nullable=False)
    action_type = Column(String(10), nullable=False)
    old_value = Column(TEXT, nullable=False)
    new_value = Column(TEXT, nullable=False)
    audit_timestamp = Column(TIMESTAMP, nullable=False, server_default=func.current_timestamp())
    description = Column(TEXT, nullable=False)
