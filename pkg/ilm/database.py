import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker

from .public.models import Base

load_dotenv()

PIPELINE_DIR = os.getenv("ILM_PIPELINE_DIR", "runs")
REGISTRY_URL = os.getenv("ILM_REGISTRY_URL")
LOG_LEVEL = os.getenv("ILM_LOG_LEVEL", "INFO")
TRAIN_DTYPE = os.getenv("ILM_TRAIN_DTYPE")

REGISTRY_FILENAME = "registry.db"

SessionLocal = sessionmaker(autocommit=False, autoflush=False)
engine: Optional[Engine] = None


def registry_url(pipeline_dir) -> str:
    """ILM_REGISTRY_URL when set, else a SQLite file inside the pipeline directory."""
    if REGISTRY_URL:
        return REGISTRY_URL
    return f"sqlite:///{(Path(pipeline_dir) / REGISTRY_FILENAME).resolve()}"


def init_registry(pipeline_dir, url: Optional[str] = None) -> Engine:
    global engine
    Path(pipeline_dir).mkdir(parents=True, exist_ok=True)
    engine = create_engine(url or registry_url(pipeline_dir))
    Base.metadata.create_all(engine)
    SessionLocal.configure(bind=engine)
    return engine
