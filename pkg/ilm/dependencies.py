from contextlib import contextmanager

from sqlalchemy.orm import Session

from . import database


def get_db():
    db: Session = database.SessionLocal()
    try:
        yield db
    finally:
        db.close()


registry_session = contextmanager(get_db)
