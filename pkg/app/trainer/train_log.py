"""
Log di addestramento: un record per step esterno completato, CSV con header fisso
"""
import csv
import io
import logging
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterator, List

from app.paths import atomic_write_text

logger = logging.getLogger(__name__)

LOG_FILE_NAME = "log.csv"
PRETRAIN_LOG_FILE_NAME = "pretrain_log.csv"


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss_R: float
    loss_realism: float
    loss_selfreg: float
    loss_D: float
    mean_pfake_refined: float
    mean_pfake_real: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in astuple(self)[1:])

    def summary(self) -> str:
        return (
            f"step={self.step} loss_R={self.loss_R:.4f} (realism={self.loss_realism:.4f} "
            f"selfreg={self.loss_selfreg:.4f}) loss_D={self.loss_D:.4f} "
            f"P_fake refined={self.mean_pfake_refined:.3f} real={self.mean_pfake_real:.3f}"
        )


HEADER = [f.name for f in fields(TrainRecord)]


class TrainLog:
    """Sequenza di TrainRecord con indice di step strettamente crescente"""

    def __init__(self, records: List[TrainRecord] = None):
        self.records: List[TrainRecord] = []
        for record in records or []:
            self.append(record)

    def append(self, record: TrainRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"TrainLog: step {record.step} non successivo a {self.records[-1].step}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TrainRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> TrainRecord:
        return self.records[index]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TrainLog) and self.records == other.records

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(HEADER)
        for record in self.records:
            # repr dei float: round-trip esatto
            writer.writerow([record.step] + [repr(float(v)) for v in astuple(record)[1:]])
        return buffer.getvalue()

    def write_csv(self, path: Path) -> Path:
        path = atomic_write_text(Path(path), self.to_csv())
        logger.debug(f"💾 [TRAIN] Log scritto: {path} ({len(self)} record)")
        return path

    @classmethod
    def read_csv(cls, path: Path) -> "TrainLog":
        """
        Raises:
            ValueError: header diverso da quello atteso o righe non valide
        """
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != HEADER:
                raise ValueError(f"Header del log non valido in {path}: {header}")
            records = [
                TrainRecord(int(row[0]), *(float(v) for v in row[1:]))
                for row in reader if row
            ]
        return cls(records)


def write_pretrain_log(path: Path, rows: List[tuple]) -> Path:
    """Log del pre-training: (fase, step, loss)"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["phase", "step", "loss"])
    for phase, step, loss in rows:
        writer.writerow([phase, step, repr(float(loss))])
    return atomic_write_text(Path(path), buffer.getvalue())
