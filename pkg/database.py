from contextlib import contextmanager
from typing import Dict, Iterator, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker
from sqlalchemy.pool import StaticPool

from config import get_config


class Base(DeclarativeBase):
    pass


_engines: Dict[str, Engine] = {}


def get_engine(url: str) -> Engine:
    """One engine per URL; tables are created on first use."""
    if url not in _engines:
        if url.startswith('sqlite') and ':memory:' in url:
            # every session must see the same in-memory database
            engine = create_engine(url, poolclass=StaticPool, connect_args={'check_same_thread': False})
        else:
            engine = create_engine(url)
        Base.metadata.create_all(engine)
        _engines[url] = engine
    return _engines[url]


@contextmanager
def session_scope(url: Optional[str] = None) -> Iterator[Session]:
    session = sessionmaker(bind=get_engine(url or get_config().DATABASE_URL))()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
