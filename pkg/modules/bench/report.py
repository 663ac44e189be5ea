"""BenchRecord emission. Floats are written with ``repr`` so that
``vps == batch / (mean_ms / 1000)`` can be re-checked exactly from the file."""
import csv
import io
import json
from pathlib import Path
from typing import Iterable, TextIO

from core.models import BenchRecord
from utils.helpers import atomic_write


def _row(record: BenchRecord) -> list:
    return [record.name, record.batch, record.iterations, repr(record.mean_ms), repr(record.std_ms),
            repr(record.vps)]


def write_csv(records: Iterable[BenchRecord], stream: TextIO, header: bool = True) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    if header:
        writer.writerow(BenchRecord.CSV_COLUMNS)
    for record in records:
        writer.writerow(_row(record))


def to_csv(records: Iterable[BenchRecord], header: bool = True) -> str:
    buf = io.StringIO()
    write_csv(records, buf, header)
    return buf.getvalue()


def to_json(record: BenchRecord) -> str:
    payload = {"name": record.name, "batch": record.batch, "iters": record.iterations,
               "warmup": record.warmup, "mean_ms": record.mean_ms, "std_ms": record.std_ms,
               "vps": record.vps, "threads": record.threads}
    if record.bytes_moved is not None:
        payload["bytes_moved"] = record.bytes_moved
        payload["bytes_per_second"] = record.bytes_per_second
    return json.dumps(payload)


def save_records(records: Iterable[BenchRecord], path: Path) -> None:
    """``.jsonl`` paths get one JSON object per line, anything else CSV."""
    records = list(records)
    path = Path(path)
    with atomic_write(path, 'w') as f:
        if path.suffix == '.jsonl':
            f.write("".join(to_json(r) + "\n" for r in records))
        else:
            write_csv(records, f)
