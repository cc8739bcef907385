import numpy as np
import pytest

from ilm import database
from ilm.dependencies import registry_session
from ilm.errors import LockError, StorageError
from ilm.evaluation import MetricRecord
from ilm.public.models import AuditTrail
from ilm.services.audit_trail import append_audit_trail, append_bulk_audit_trail
from ilm.services.file_handler import (
    PipelineLock,
    decode_checkpoint,
    encode_checkpoint,
    read_checkpoint,
    read_jsonl,
    read_lines,
    sha256_file,
    write_checkpoint,
    write_jsonl,
    write_lines,
)
from ilm.services.registry import finish_stage, latest_artifact, stage_history, start_stage
from ilm.utils.formatting_id import format_audit_id


# ==================== ILMC checkpoints ====================
def sample_arrays():
    return {"weights": np.arange(6, dtype=np.float64).reshape(2, 3), "bias": np.array([0.5, -1.0]),
            "scalar": np.array(3.0)}


def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "model.ilmc"
    content_hash = write_checkpoint(path, sample_arrays(), {"kind": "test", "steps": [1, 2]})
    assert content_hash == sha256_file(path)
    checkpoint = read_checkpoint(path, expected_hash=content_hash)
    assert checkpoint.metadata == {"kind": "test", "steps": [1, 2]}
    assert list(checkpoint.arrays) == ["weights", "bias", "scalar"]
    assert checkpoint["weights"].dtype == np.float32
    assert np.array_equal(checkpoint["weights"], sample_arrays()["weights"])
    assert checkpoint["scalar"].shape == ()


def test_checkpoint_bytes_are_deterministic():
    assert encode_checkpoint(sample_arrays(), {"b": 1, "a": 2}) == encode_checkpoint(sample_arrays(), {"a": 2, "b": 1})


def test_checkpoint_rejects_corruption(tmp_path):
    data = encode_checkpoint(sample_arrays(), {"kind": "test"})
    with pytest.raises(StorageError, match="bad magic"):
        decode_checkpoint(b"NOPE" + data[4:])
    with pytest.raises(StorageError, match="unsupported checkpoint version"):
        decode_checkpoint(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(StorageError, match="truncated|past end"):
        decode_checkpoint(data[:-5])
    with pytest.raises(StorageError):
        decode_checkpoint(data[:10])


def test_checkpoint_rejects_non_finite_and_wrong_hash(tmp_path):
    with pytest.raises(StorageError):
        encode_checkpoint({"bad": np.array([1.0, np.inf])})
    path = tmp_path / "model.ilmc"
    write_checkpoint(path, sample_arrays())
    with pytest.raises(StorageError) as info:
        read_checkpoint(path, expected_hash="0" * 64)
    assert info.value.exit_code == 30
    with pytest.raises(StorageError):
        read_checkpoint(tmp_path / "missing.ilmc")


# ==================== Record files ====================
def test_jsonl_records(tmp_path):
    records = [MetricRecord(task="sequential", regime="seen", metric="hr", k=5, value=0.25, count=4),
               MetricRecord(task="description", regime="unseen", metric="log_perplexity", value=2.5, count=3)]
    path = tmp_path / "metrics.jsonl"
    content_hash = write_jsonl(path, records)
    assert content_hash == sha256_file(path)
    assert read_jsonl(path, MetricRecord) == records
    assert path.read_text(encoding="utf-8").endswith("\n")


def test_jsonl_names_the_bad_line(tmp_path):
    path = tmp_path / "metrics.jsonl"
    path.write_text('{"task": "a", "regime": "seen", "metric": "hr", "value": 1.0, "count": 1}\n{"task": 3}\n',
                    encoding="utf-8")
    with pytest.raises(StorageError, match=":2:"):
        read_jsonl(path, MetricRecord)


def test_line_files(tmp_path):
    path = tmp_path / "vocab.txt"
    write_lines(path, ["[PAD]", "item_3"])
    assert read_lines(path) == ["[PAD]", "item_3"]
    with pytest.raises(StorageError):
        read_lines(tmp_path / "absent.txt")


# ==================== Pipeline lock ====================
def test_lock_is_exclusive(tmp_path):
    first = PipelineLock(tmp_path)
    first.acquire("train-mf")
    with pytest.raises(LockError) as info:
        PipelineLock(tmp_path).acquire("phase1")
    assert info.value.exit_code == 32
    assert "train-mf" in str(info.value)
    first.release()
    with PipelineLock(tmp_path):
        assert (tmp_path / ".ilm.lock").exists()
    assert not (tmp_path / ".ilm.lock").exists()


# ==================== Registry ====================
@pytest.fixture
def registry(tmp_path):
    database.init_registry(tmp_path, url=f"sqlite:///{tmp_path / 'registry.db'}")
    with registry_session() as db:
        yield db


def test_stage_runs_and_artifacts(registry, tmp_path):
    path = tmp_path / "embeddings.ilmc"
    content_hash = write_checkpoint(path, sample_arrays())
    run = start_stage(registry, "train-mf", seed=0, config_hash="c" * 64, parent_hash="p" * 64)
    assert run.status == "running"
    rows = finish_stage(registry, run, "ok", {"embeddings": (path, content_hash)}, detail="5 sweeps")
    assert [row.name for row in rows] == ["embeddings"]

    artifact = latest_artifact(registry, "train-mf", 0, "embeddings")
    assert artifact.content_hash == content_hash
    assert artifact.path == str(path)
    assert latest_artifact(registry, "train-mf", 1, "embeddings") is None
    history = stage_history(registry, "train-mf")
    assert [(r.status, r.detail) for r in history] == [("ok", "5 sweeps")]
    actions = sorted(a.action_type for a in registry.query(AuditTrail).all())
    assert actions == ["finish", "start", "write"]


def test_audit_ids_survive_collisions(registry):
    for i in range(12):
        append_audit_trail(registry, run_id="r", target_table="stage_run", record_id=str(i), action_type="start",
                           old_value="", new_value="", description="burst")
    audits = registry.query(AuditTrail).all()
    assert len(audits) == 12
    assert len({a.audit_id for a in audits}) == 12


def test_bulk_audit_falls_back_on_collision(registry):
    entry = {"run_id": "r", "target_table": "artifact", "record_id": "a", "action_type": "write",
             "description": "file"}
    first = append_bulk_audit_trail(registry, [entry, entry])
    second = append_bulk_audit_trail(registry, [entry, entry])
    assert len(first) == len(second) == 2
    assert registry.query(AuditTrail).count() == 4
    assert append_bulk_audit_trail(registry, []) == []


def test_audit_id_format():
    audit_id = format_audit_id(sequence=7)
    assert audit_id.startswith("AU") and audit_id.endswith("07")
    assert len(audit_id) == 2 + 14 + 2 + 2
