"""Config files (JSON or TOML) and atomic output helpers."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import tomli


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        return tomli.loads(text)
    return json.loads(text)


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_dir(default=None) -> Path:
    env = os.environ.get("FAIRFLOW_CACHE")
    if env:
        return Path(env)
    return Path(default) if default else Path.home() / ".cache" / "fairflow"
