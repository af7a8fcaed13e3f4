"""Deterministic RNG streams, rounding, and atomic file writes."""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Any

import numpy as np

# Purpose tags keep independent random streams from colliding: the same
# (seed, epoch, examinee) tuple feeds several unrelated draws.
TAG_EXAMINEE_SPLIT = 101
TAG_RESPLIT = 102
TAG_SELECT = 103
TAG_MIXUP = 104
TAG_POLICY_INIT = 105
TAG_PRETRAIN_INIT = 106
TAG_PRETRAIN_ORDER = 107
TAG_PRETRAIN_HOLDOUT = 108
TAG_BATCH_ORDER = 109
TAG_EVAL_SPLIT = 110


def substream(*entropy: int) -> np.random.Generator:
    """Independent generator fully determined by the integer entropy tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def round_half_up(x: float) -> int:
    """round() with ties going up, so split sizes don't depend on parity."""
    return int(math.floor(x + 0.5))


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory plus rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def dump_jsonl(records: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
