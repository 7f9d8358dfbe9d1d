from collections.abc import Sequence
import os
from pathlib import Path
import sys
import tempfile
from typing import Any

import numpy as np
from pydantic import BaseModel


def env_var(name: str, allow_null: bool = False) -> str | None:
    """A useful utility for validating the presence of an environment variable before
    loading"""
    if not allow_null and name not in os.environ:
        sys.exit(f"{name} was not set in the environment")
    if allow_null and name not in os.environ:
        return None
    value = os.environ[name]
    if not allow_null and not value:
        sys.exit(f"The value of {name} in the environment cannot be empty")
    return value


def _atomic_write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def write_table(path: Path, columns: Sequence[str], data: Sequence[Any]) -> Path:
    """Write equally sized 1-D arrays as a CSV table with a unit-annotated header.

    Args:
        path: Destination file, replaced atomically
        columns: Header names such as ``x[ratio]``
        data: One array per column
    Returns:
        The written path
    """
    table = np.column_stack([np.asarray(col, dtype=float) for col in data])
    lines = [",".join(columns)]
    lines.extend(",".join(f"{value:.12e}" for value in row) for row in table)
    return _atomic_write(path, "\n".join(lines) + "\n")


def write_model(path: Path, model: BaseModel) -> Path:
    """Write a pydantic record as indented JSON, atomically."""
    return _atomic_write(path, model.model_dump_json(indent=2) + "\n")


def write_text(path: Path, text: str) -> Path:
    return _atomic_write(path, text)
