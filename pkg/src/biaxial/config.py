"""Flat key=value configuration files and run manifests.

The config file format is one `key = value` per line, `#` comments, blank
lines ignored.  Every key mirrors a module configuration field; command-line
flags override file values.  The BIAXIAL_CONFIG environment variable names a
default config file.  A run manifest records the resolved configuration,
the corpus files with content hashes, the seed, and toolchain versions next
to every checkpoint, so a run can be reproduced exactly.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

ENV_VAR = "BIAXIAL_CONFIG"


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


# key -> (parser, default); this table is the documented schema
SCHEMA: dict[str, tuple] = {
    "low_note": (int, 21),
    "n_notes": (int, 88),
    "steps_per_measure": (int, 16),
    "window_half_width": (int, 12),
    "time_layer_sizes": (_int_list, (64, 64)),
    "note_layer_sizes": (_int_list, (32, 16)),
    "keep_prob": (float, 0.75),
    "optimizer": (str, "adadelta"),
    "learning_rate": (float, 1.0),
    "rho": (float, 0.95),
    "epsilon": (float, 1e-6),
    "grad_clip_norm": (float, 0.0),
    "iterations": (int, 1000),
    "batch_size": (int, 4),
    "seq_len": (int, 128),
    "log_every": (int, 1),
    "checkpoint_every": (int, 0),
    "seed": (int, 0),
    "temperature": (float, 1.0),
    "ticks_per_step": (int, 120),
}


class ConfigError(Exception):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config_file(path: str | Path) -> dict:
    return parse_config_text(Path(path).read_text(), source=str(path))


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """defaults <- config file <- explicit overrides (None entries skipped)."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if file_values:
        values.update(file_values)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(values: dict, corpus_files: list[Path], seed: int) -> dict:
    import numpy

    from . import __version__

    return {
        "toolchain": {
            "biaxial": __version__,
            "numpy": numpy.__version__,
            "python": sys.version.split()[0],
        },
        "seed": seed,
        "configuration": {
            key: list(v) if isinstance(v, tuple) else v for key, v in sorted(values.items())
        },
        "corpus": [
            {"path": str(p), "sha256": sha256_file(p)} for p in sorted(corpus_files)
        ],
    }


def write_manifest(manifest: dict, path: str | Path):
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
