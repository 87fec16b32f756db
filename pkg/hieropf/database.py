"""
Run-history store: one SQLite file holding ``runs`` and ``trace_rows``.

The CLI opens it once per process with :func:`init_engine`; reports code asks
:func:`history_ready` before touching it, so a missing or unwritable file only
costs the history, never the run.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

from sqlalchemy import URL, create_engine, event
from sqlalchemy.engine import Engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, sessionmaker

from hieropf.orm_models import Base

logger = logging.getLogger(__name__)

_engine: Engine | None = None
_SessionLocal: sessionmaker[Session] | None = None


@event.listens_for(Engine, "connect")
def _sqlite_pragmas(dbapi_conn, connection_record) -> None:
    # trace_rows cascade off runs; sqlite leaves foreign keys off per connection.
    if "sqlite" not in type(dbapi_conn).__module__:
        return
    cursor = dbapi_conn.cursor()
    cursor.execute("PRAGMA foreign_keys=ON")
    cursor.execute("PRAGMA busy_timeout=5000")
    cursor.close()


def history_url(database_path: str | Path) -> URL:
    return URL.create("sqlite", database=str(Path(database_path).resolve()))


def dispose_engine() -> None:
    """Close the history store (tests re-open it at another path)."""
    global _engine, _SessionLocal
    if _engine is not None:
        _engine.dispose()
    _engine = None
    _SessionLocal = None


def init_engine(database_path: str | Path) -> bool:
    """Open (creating if needed) the history file; False when it cannot be used."""
    global _engine, _SessionLocal
    dispose_engine()
    try:
        Path(database_path).resolve().parent.mkdir(parents=True, exist_ok=True)
        engine = create_engine(history_url(database_path), connect_args={"check_same_thread": False})
        Base.metadata.create_all(bind=engine)
    except (OSError, SQLAlchemyError) as e:
        logger.warning("run history at %s unavailable: %s", database_path, e)
        return False
    _engine = engine
    _SessionLocal = sessionmaker(bind=engine, autoflush=False, expire_on_commit=False)
    logger.debug("run history at %s", engine.url.database)
    return True


def history_ready() -> bool:
    return _SessionLocal is not None


def get_session() -> Session:
    if _SessionLocal is None:
        raise RuntimeError("Run history not initialized; call init_engine first")
    return _SessionLocal()


@contextmanager
def session_scope() -> Iterator[Session]:
    """Session that commits on success and rolls back on any error."""
    session = get_session()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
