from typing import Any, Dict, List, Optional, Type

from sqlalchemy.orm import Query, Session
from sqlalchemy.orm.decl_api import DeclarativeMeta


def _filtered(db: Session, model: Type[DeclarativeMeta], filters: Optional[Dict[str, Any]]) -> Query:
    query = db.query(model)
    for field, value in (filters or {}).items():
        query = query.filter(getattr(model, field) == value)
    return query


def get_many_filtered(
    db: Session,
    model: Type[DeclarativeMeta],
    filters: Optional[Dict[str, Any]] = None,
    order_field: Optional[str] = None,
    skip: int = 0,
    limit: int = 100
) -> List[Any]:
    query = _filtered(db, model, filters)
    if order_field is not None:
        query = query.order_by(getattr(model, order_field))
    return query.offset(skip).limit(limit).all()


def get_latest(db: Session, model: Type[DeclarativeMeta], filters: Dict[str, Any], order_field: str):
    """Most recent row matching `filters`, ordered by `order_field` (ULIDs sort by time)."""
    return _filtered(db, model, filters).order_by(getattr(model, order_field).desc()).first()
