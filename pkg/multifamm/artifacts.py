"""
Run artifacts

Every JSON packet and CSV table carries the configuration hash and the seed
so results can be traced back to the run that produced them. Files contain
no timestamps; identical runs write identical bytes.
"""
import json
import logging
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from .config import PipelineConfig

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "1.0"
FLOAT_FORMAT = "%.10g"


class NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif isinstance(obj, Enum):
            return obj.value
        elif isinstance(obj, Path):
            return str(obj)
        elif is_dataclass(obj):
            return obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
        return super(NumpyEncoder, self).default(obj)


class ArtifactWriter:
    """Writes the numeric outputs of one run below output_dir"""

    def __init__(self, output_dir, config: PipelineConfig):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config.config_hash()
        self.seed = config.seed
        self.written: List[Path] = []

    def _path(self, name: str) -> Path:
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_json(self, name: str, payload: Any, kind: str = None) -> Path:
        packet = {
            "version": ARTIFACT_VERSION,
            "kind": kind or Path(name).stem,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "data": payload,
        }
        path = self._path(name)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(packet, f, ensure_ascii=False, indent=2, sort_keys=True, cls=NumpyEncoder)
                f.write("\n")
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise
        self.written.append(path)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame, index: bool = False) -> Path:
        """CSV with a two-line '#' header (config hash, seed); read back with comment='#'"""
        path = self._path(name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(f"# config_hash={self.config_hash}\n")
                f.write(f"# seed={self.seed}\n")
                frame.to_csv(f, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise
        self.written.append(path)
        return path

    def write_config(self, config: PipelineConfig) -> Path:
        return self.write_json("config.resolved.json", config.to_dict(), kind="config")

    def manifest(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "files": sorted(str(p.relative_to(self.output_dir)) for p in self.written),
        }


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
