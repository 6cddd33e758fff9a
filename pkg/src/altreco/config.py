"""Run configuration files and seed derivation.

Config files are flat ``key = value`` text grouped into INI sections,
one section per module (``[synth]``, ``[model]``, ``[train]``,
``[losses]``, ``[jitter]``, ``[huber]``).  The environment variable
``ALTRECO_SEED`` overrides any configured seed.

All randomness flows from one master seed: each subsystem derives its
own generator from (seed, label) so streams stay independent and stable
across runs.  Labels in use: "synthetic", "init", "shuffle", "jitter",
"split".
"""

from __future__ import annotations

import configparser
import os
import zlib
from pathlib import Path

import numpy as np

from .errors import ParseError

SEED_ENV_VAR = "ALTRECO_SEED"


def subsystem_rng(master_seed: int, label: str) -> np.random.Generator:
    """Deterministic per-subsystem generator: PCG64 seeded from the
    master seed mixed with a CRC-32 of the subsystem label."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), zlib.crc32(label.encode("utf-8"))])
    )


def load_config(path) -> dict[str, dict[str, str]]:
    """Parse a sectioned key=value file into plain nested dicts."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return {section: dict(parser[section]) for section in parser.sections()}


def resolve_seed(configured: int | None, override: int | None = None) -> int:
    """Pick the effective master seed: CLI flag, then ALTRECO_SEED, then
    the configured value, then 0."""
    if override is not None:
        return int(override)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ParseError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return int(configured) if configured is not None else 0


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"expected a boolean, got {value!r}")


def parse_int_list(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in value.replace(",", " ").split())
    except ValueError as exc:
        raise ParseError(f"expected integers, got {value!r}") from exc
