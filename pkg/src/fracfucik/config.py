"""INI run configuration with strict key checking.

Every section and key is declared in ``SCHEMA``; unknown sections or keys
and malformed values raise :class:`ConfigError` naming the section, key and
line.  Empty values mean "use the default".
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .mesh import MeshConfig


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _opt_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "all", "none") else int(text)


def _grid(text):
    t = text.strip().lower()
    if t.startswith("auto"):
        parts = t.split()
        return ("auto", int(parts[1]) if len(parts) > 1 else 17)
    return _floats(text)


def _case(text):
    t = text.strip().lower()
    if t not in ("auto", "above-mu", "below-nu"):
        raise ValueError("must be auto, above-mu or below-nu")
    return t


# section -> key -> (parser, default, required)
SCHEMA = {
    "mesh": {
        "dim": (int, 1, False),
        "extent": (_floats, None, False),
        "n_cells": (_ints, None, True),
        "s": (float, None, True),
        "quad_tol": (float, 1e-8, False),
    },
    "spectrum": {
        "count": (_opt_int, None, False),
        "cluster_tol": (float, 1e-8, False),
        "sign_samples": (int, 256, False),
    },
    "fucik": {
        "level": (int, 2, False),
        "a_grid": (_grid, ("auto", 17), False),
        "bisect_tol": (_opt_float, None, False),
        "n_starts": (int, 8, False),
        "symmetry_points": (int, 5, False),
    },
    "energy": {
        "eps_grid": (_floats, (0.125, 0.0625, 0.03125, 0.015625, 0.0078125), False),
        "eps": (float, 1e-2, False),
        "mu": (_opt_float, None, False),
        "mu0": (_opt_float, None, False),
        "gamma": (_opt_float, None, False),
        "beta": (_opt_float, None, False),
        "x0": (_floats, None, False),
        "level": (int, 2, False),
        "n_samples": (int, 16, False),
        "fit_tol": (float, 0.25, False),
    },
    "solver": {
        "a": (_opt_float, None, False),
        "b": (_opt_float, None, False),
        "level": (int, 2, False),
        "case": (_case, "auto", False),
        "tol": (float, 1e-8, False),
        "seed": (int, 0, False),
        "k_max": (int, 20, False),
        "offset": (float, 0.1, False),
    },
}


@dataclass
class RunConfig:
    mesh: MeshConfig
    quad_tol: float
    spectrum: dict
    fucik: dict
    energy: dict
    solver: dict
    source: str = ""

    def to_dict(self) -> dict:
        return {"mesh": self.mesh.to_dict() | {"quad_tol": self.quad_tol},
                "spectrum": dict(self.spectrum), "fucik": _plain(self.fucik),
                "energy": _plain(self.energy), "solver": dict(self.solver)}


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _line_of(text: str, section: str, key: str) -> int:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].split(":", 1)[0].strip() == key:
            return i
    return 0


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}] (allowed: {', '.join(SCHEMA)})")
    for sec, keys in SCHEMA.items():
        got = cp[sec] if cp.has_section(sec) else {}
        for key in got:
            if key not in keys:
                raise ConfigError(f"{source}:{_line_of(text, sec, key)}: unknown key '{key}' in [{sec}]")
        out = {}
        for key, (parser, default, required) in keys.items():
            raw = got.get(key) if got else None
            if raw is None or raw.strip() == "":
                if required:
                    raise ConfigError(f"{source}: missing required key '{key}' in [{sec}]")
                out[key] = default
                continue
            try:
                out[key] = parser(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}:{_line_of(text, sec, key)}: bad value for '{key}' "
                                  f"in [{sec}]: {raw!r} ({exc})") from exc
        values[sec] = out
    m = values["mesh"]
    dim = m["dim"]
    n_cells = m["n_cells"]
    if len(n_cells) == 1:
        n_cells = n_cells * dim
    extent = m["extent"] or (-1.0, 1.0) * dim
    if len(extent) != 2 * dim:
        raise ConfigError(f"{source}: 'extent' in [mesh] needs {2 * dim} numbers, got {len(extent)}")
    try:
        mesh = MeshConfig(dim=dim, extent=tuple((extent[2 * i], extent[2 * i + 1]) for i in range(dim)),
                          n_cells=tuple(n_cells), s=m["s"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: [mesh] {exc}") from exc
    return RunConfig(mesh=mesh, quad_tol=m["quad_tol"], spectrum=values["spectrum"],
                     fucik=values["fucik"], energy=values["energy"], solver=values["solver"],
                     source=source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
