import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Optional, TypeVar

import yaml
from tqdm import tqdm

T = TypeVar('T')

DEFAULT_SETTINGS_PATH = Path(__file__).parent.parent / 'config' / 'config.yaml'

_progress_enabled = True


def load_yaml(path: Path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level, got {type(data).__name__}")
    return data


@contextmanager
def atomic_write(path: Path, mode: str = 'wb') -> Iterator[Any]:
    """Write to a temp file beside `path` and rename it into place on success.

    On any exception the temp file is removed and `path` is left untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    encoding = None if 'b' in mode else 'utf-8'
    try:
        with os.fdopen(fd, mode, encoding=encoding) as f:
            yield f
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def resolve_threads(requested: Optional[int] = None) -> int:
    """--threads, then VSHUFFLE_THREADS, then the host core count."""
    if requested is not None:
        if requested < 1:
            raise ValueError(f"thread count must be >= 1, got {requested}")
        return requested
    env = os.environ.get('VSHUFFLE_THREADS')
    if env:
        value = int(env)
        if value < 1:
            raise ValueError(f"VSHUFFLE_THREADS must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def set_progress(enabled: bool) -> None:
    global _progress_enabled
    _progress_enabled = enabled


def progress(iterable: Iterable[T], desc: str, total: Optional[int] = None) -> Iterable[T]:
    return tqdm(iterable, desc=desc, total=total, disable=not _progress_enabled, leave=False)

