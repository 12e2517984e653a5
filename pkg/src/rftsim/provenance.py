"""Reproducibility header written at the top of every output file."""
from __future__ import annotations

import hashlib
import json

from . import __version__
from .chunk_exec import RECEDING_TEMPORAL_NOTE
from .metrics import QSCORE_DEFINITION


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def header(command: str, seed: int, config: dict, notes: tuple[str, ...] = ()) -> str:
    lines = [f"rftsim {__version__} {command}", f"seed: {seed}", f"config-hash: {config_hash(config)}",
             f"qscore: {QSCORE_DEFINITION}", f"note: {RECEDING_TEMPORAL_NOTE}"]
    lines += [f"note: {n}" for n in notes]
    return "".join(f"# {ln}\n" for ln in lines)


def strip_header(text: str) -> str:
    return "".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("#"))
