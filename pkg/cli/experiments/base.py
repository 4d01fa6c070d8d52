import logging
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12g"


@dataclass(frozen=True)
class RunContext:
    """Root seed, output directory and worker count of one run."""
    seed: int
    output_dir: Path
    threads: int = 1

    def write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
        logger.info("wrote %s (%d rows)", path, len(frame))
        return path
