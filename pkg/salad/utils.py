# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Miscellaneous utilities to support other parts of the library.
"""

from __future__ import annotations

import logging
import os
from io import StringIO
from pathlib import Path

from ruamel.yaml import YAML

logger = logging.getLogger(__name__)
yaml = YAML(typ="rt")
yaml.default_flow_style = False
yaml.indent(mapping=2, sequence=4, offset=2)

THREADS_ENV_VAR = "SALAD_THREADS"


def yaml_to_string(data):
    blob = StringIO()
    yaml.dump(data, blob)
    return blob.getvalue()


def parse_scalar(text: str):
    """Read a ``--set`` value the way it would read inside the config file."""
    if text == "":
        return ""
    return YAML(typ="safe").load(text)


def worker_count(default: int | None = None) -> int:
    """Thread pool size: ``SALAD_THREADS`` if set, else ``default`` or the CPU count."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", THREADS_ENV_VAR, raw)
        else:
            if value >= 1:
                return value
            logger.warning("Ignoring %s=%r; it must be at least 1", THREADS_ENV_VAR, raw)
    if default is not None:
        return max(1, default)
    return max(1, os.cpu_count() or 1)


def ensure_dir(path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_text_atomic(path: str | Path, text: str):
    """Write ``text`` next to ``path`` and move it into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def write_bytes_atomic(path: str | Path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
