from datetime import datetime, timezone
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, Field
from tinydb import TinyDB
from tinydb.table import Table

TModel = TypeVar("TModel", bound=BaseModel)


class StageRecord(BaseModel):
    id: int = -1
    stage: str
    config_hash: str
    outputs: list[str] = Field(default_factory=list)
    wall_clock_s: float
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


def insert(table: Table, data: TModel) -> TModel:
    doc_id = table.insert(data.model_dump(exclude={"id"}, mode="json"))
    return data.model_copy(update={"id": doc_id})


def select_all(table: Table, model_cls: type[TModel]) -> list[TModel]:
    return [model_cls.model_validate({**doc, "id": doc.doc_id}) for doc in table]


class RunRegistry:
    """Per-output-directory log of executed stages and their timings."""

    def __init__(self, out_dir: Path, db_name: str = "runs.db"):
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self._db = TinyDB(Path(out_dir) / db_name)
        self._stages = self._db.table("stages")

    def record(self, record: StageRecord) -> StageRecord:
        return insert(self._stages, record)

    def stages(self, stage: str | None = None) -> list[StageRecord]:
        records = select_all(self._stages, StageRecord)
        if stage is None:
            return records
        return [r for r in records if r.stage == stage]

    def close(self):
        self._db.close()

    def __enter__(self) -> "RunRegistry":
        return self

    def __exit__(self, *exc):
        self.close()
