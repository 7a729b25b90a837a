import json
from datetime import datetime

from sqlalchemy import DateTime, Float, Integer, String, Text
from sqlalchemy.orm import Mapped, mapped_column

from database import Base


class RunRecord(Base):
    __tablename__ = 'runs'

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[str] = mapped_column(String(32), nullable=False, unique=True, index=True)
    subcommand: Mapped[str] = mapped_column(String(32), nullable=False)
    dataset: Mapped[str] = mapped_column(String(512), nullable=True)
    output_path: Mapped[str] = mapped_column(String(512), nullable=True)
    manifest_path: Mapped[str] = mapped_column(String(512), nullable=True)
    seed: Mapped[int] = mapped_column(Integer, nullable=True)
    config_json: Mapped[str] = mapped_column(Text, nullable=True)
    timings_json: Mapped[str] = mapped_column(Text, nullable=True)

    started_at: Mapped[datetime] = mapped_column(DateTime, default=datetime.utcnow, nullable=False)
    finished_at: Mapped[datetime] = mapped_column(DateTime, nullable=True)
    duration_seconds: Mapped[float] = mapped_column(Float, nullable=True)

    # running, completed, error
    status: Mapped[str] = mapped_column(String(20), default='running', nullable=False)
    exit_code: Mapped[int] = mapped_column(Integer, nullable=True)
    error_message: Mapped[str] = mapped_column(Text, nullable=True)

    def __repr__(self):
        return f'<RunRecord {self.subcommand} {self.run_id}>'

    def to_dict(self):
        return {
            'id': self.id,
            'run_id': self.run_id,
            'subcommand': self.subcommand,
            'dataset': self.dataset,
            'output_path': self.output_path,
            'manifest_path': self.manifest_path,
            'seed': self.seed,
            'config': json.loads(self.config_json) if self.config_json else None,
            'timings': json.loads(self.timings_json) if self.timings_json else None,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
            'duration_seconds': self.duration_seconds,
            'status': self.status,
            'exit_code': self.exit_code,
            'error_message': self.error_message,
        }
