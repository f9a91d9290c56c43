"""
Output files of a run: run directories and buffered CSV traces
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from src.config import Config

logger = logging.getLogger(__name__)

PLANT_TRACE = 'plant_trace.csv'
PLAN_LOG = 'plan_log.csv'
DELAY_STATS = 'delay_stats.csv'
METRICS = 'metrics.toml'


class TraceWriter:
    """Append-only CSV file with a fixed column order, written in batches"""

    def __init__(self, path: Union[str, Path], columns: Sequence[str], buffer_rows: int = 256):
        self.path = Path(path)
        self.columns = list(columns)
        self.buffer_rows = buffer_rows
        self.rows_written = 0
        self._rows: List[Dict[str, Any]] = []
        self._header_written = False

        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            self.path.unlink()

    def write(self, row: Dict[str, Any]) -> None:
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise KeyError(f"{self.path.name}: row is missing columns {missing}")
        self._rows.append(row)
        if len(self._rows) >= self.buffer_rows:
            self.flush()

    def flush(self) -> None:
        if not self._rows and self._header_written:
            return
        frame = pd.DataFrame(self._rows, columns=self.columns)
        frame.to_csv(self.path, mode='a', header=not self._header_written, index=False)
        self._header_written = True
        self.rows_written += len(self._rows)
        self._rows.clear()

    def close(self) -> None:
        self.flush()
        logger.debug(f"Closed trace {self.path} ({self.rows_written} rows)")

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class OutputService:
    """Service for run directories and the files in them"""

    def __init__(self, base_dir: Optional[str] = None):
        self.base_dir = Path(base_dir or Config.OUTPUT_DIR)

    def run_dir(self, out_dir: Optional[Union[str, Path]] = None, name: str = 'run') -> Path:
        """Create (if needed) and return the directory a run writes into"""
        path = Path(out_dir) if out_dir else self.base_dir / name
        path.mkdir(parents=True, exist_ok=True)
        return path

    def open_trace(self, directory: Union[str, Path], filename: str, columns: Sequence[str]) -> TraceWriter:
        return TraceWriter(Path(directory) / filename, columns)

    def read_trace(self, path: Union[str, Path], required: Sequence[str] = ()) -> pd.DataFrame:
        """
        Read a CSV trace

        Raises:
            KeyError: if any required column is missing
        """
        frame = pd.read_csv(path)
        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise KeyError(f"{Path(path).name}: missing trace columns {missing}")
        return frame

    def get_file_info(self, file_path: Union[str, Path]) -> dict:
        try:
            stat = os.stat(file_path)
            return {'size': stat.st_size, 'modified': stat.st_mtime}
        except Exception as e:
            logger.error(f"Error getting file info for {file_path}: {e}")
            return {}


# Global instance
output_service = OutputService()
