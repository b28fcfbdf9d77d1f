"""
Result persistence: CSV tables, JSON documents, binary path dumps, plotting
scripts and the run manifest that lists every file of an output directory.
"""

import csv
import datetime
import hashlib
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Final, Iterable, List, Optional, Sequence, Tuple, final

import numpy as np

from . import __version__
from .errors import ConfigurationError, StabilityCheckError

logger = logging.getLogger(__name__)

MANIFEST_NAME: Final[str] = "manifest.json"
PATH_DUMP_MAGIC: Final[bytes] = b"SDEP"
PATH_DUMP_VERSION: Final[int] = 1
# magic, format version, number of paths, number of steps
PATH_DUMP_HEADER: Final[struct.Struct] = struct.Struct("<4sIQQ")

PLOT_TEMPLATE: Final[str] = '''\
"""Plot {title}. Generated alongside {data}; run it with matplotlib installed."""

import matplotlib.pyplot as plt
import numpy as np

data = np.genfromtxt("{data}", delimiter=",", names=True)
fig, ax = plt.subplots()
ax.plot(data["{x}"], data["{y}"], "o-", label="{y}")
ax.set_xscale("{xscale}")
ax.set_yscale("{yscale}")
ax.set_xlabel("{x}")
ax.set_ylabel("{y}")
ax.set_title("{title}")
ax.legend()
fig.savefig("{stem}.png", dpi=150)
'''


def _jsonable(value: Any) -> Any:
    """Map floats that JSON cannot carry to strings and numpy scalars to Python ones."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@final
@dataclass(frozen=True, slots=True, kw_only=True)
class RunManifest:
    command: str
    config_hash: str
    master_seed: int
    started_at: str
    wall_clock_seconds: float
    tolerance_profile: str
    tolerances: Dict[str, Any]
    status: str = "passed"
    error: Optional[str] = None
    tool_version: str = __version__
    grid_doubling: Optional[Dict[str, float]] = None
    files: Tuple[Dict[str, str], ...] = ()

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


@final
class ArtifactWriter:
    """Writes result files into one directory and closes it with a single manifest."""

    def __init__(self, directory: Path):
        self.directory = directory
        self._written: List[Path] = []
        self._closed = False
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f"cannot create {directory}: {e.strerror}", "--out") from e
        stale = directory / MANIFEST_NAME
        if stale.exists():
            logger.warning("replacing existing manifest in %s", directory)
            stale.unlink()

    @property
    def written(self) -> Tuple[Path, ...]:
        return tuple(self._written)

    def _target(self, name: str) -> Path:
        if self._closed:
            raise StabilityCheckError("manifest already written; the output directory is closed")
        if name == MANIFEST_NAME or Path(name).name != name:
            raise ConfigurationError(f"invalid artifact name '{name}'", "output")
        path = self.directory / name
        if path not in self._written:
            self._written.append(path)
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self._target(name)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
        logger.debug("wrote %s", path)
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self._target(name)
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.debug("wrote %s", path)
        return path

    def write_paths(self, name: str, paths: np.ndarray) -> Path:
        """Binary dump: header then a (paths, steps + 1) little-endian float64 array."""
        paths = np.asarray(paths)
        if paths.ndim != 2:
            raise ConfigurationError("path dump expects a (paths, steps + 1) array", "output.per_path_dump")
        path = self._target(name)
        header = PATH_DUMP_HEADER.pack(PATH_DUMP_MAGIC, PATH_DUMP_VERSION, paths.shape[0], paths.shape[1] - 1)
        with path.open("wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(paths, dtype="<f8").tobytes())
        logger.debug("wrote %d paths to %s", paths.shape[0], path)
        return path

    def write_plot_script(
        self, name: str, data: str, x: str, y: str, title: str, logx: bool = True, logy: bool = True
    ) -> Path:
        path = self._target(name)
        path.write_text(
            PLOT_TEMPLATE.format(
                title=title,
                data=data,
                x=x,
                y=y,
                xscale="log" if logx else "linear",
                yscale="log" if logy else "linear",
                stem=Path(name).stem,
            ),
            encoding="utf-8",
        )
        return path

    def close(self, manifest: RunManifest) -> Path:
        """Write manifest.json listing every file written so far, with digests."""
        files = tuple(
            {"name": p.name, "sha256": file_digest(p)}
            for p in sorted(self._written, key=lambda q: q.name)
            if p.exists()
        )
        stamped = replace(manifest, files=files)
        path = self.directory / MANIFEST_NAME
        path.write_text(stamped.to_json() + "\n", encoding="utf-8")
        self._closed = True
        logger.info("manifest written to %s (%d files)", path, len(files))
        return path


def read_paths(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < PATH_DUMP_HEADER.size:
        raise ConfigurationError("truncated path dump", str(path))
    magic, version, n_paths, steps = PATH_DUMP_HEADER.unpack_from(raw)
    if magic != PATH_DUMP_MAGIC or version != PATH_DUMP_VERSION:
        raise ConfigurationError("not a path dump", str(path))
    data = np.frombuffer(raw, dtype="<f8", offset=PATH_DUMP_HEADER.size)
    if data.size != n_paths * (steps + 1):
        raise ConfigurationError("path dump size does not match its header", str(path))
    return data.reshape(n_paths, steps + 1)


@final
@dataclass(slots=True)
class Stopwatch:
    """Wall-clock span of a run, reported in the manifest."""

    started_at: str
    _start: float = field(repr=False)

    @classmethod
    def start(cls) -> "Stopwatch":
        return cls(datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"), time.perf_counter())

    def elapsed(self) -> float:
        return time.perf_counter() - self._start
