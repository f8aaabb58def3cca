"""
Database configuration for the experiment run store
"""
from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

from app.core.config import DATABASE_URL

# Base class for models
Base = declarative_base()


def create_db_engine(url: str = DATABASE_URL) -> Engine:
    """Engine for the run store; SQLite by default, any SQLAlchemy URL works"""
    if url.startswith("sqlite"):
        # SQLite-specific settings: Celery workers may share the file
        return create_engine(url, connect_args={"check_same_thread": False}, echo=False)
    return create_engine(url, echo=False, pool_pre_ping=True)


def create_session_factory(url: str = DATABASE_URL) -> sessionmaker:
    """Create the tables if needed and return a session factory bound to them"""
    engine = create_db_engine(url)
    init_db(engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_db(engine: Engine) -> None:
    """Initialize database tables"""
    # models register themselves on Base when imported
    import app.models  # noqa: F401

    Base.metadata.create_all(bind=engine)
