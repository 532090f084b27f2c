from __future__ import annotations

import os
import re
from pathlib import Path
from typing import Any, Iterable

import yaml
from platformdirs import user_config_dir

from ..errors import ConfigError
from ..util.fs import write_text_atomic
from .models import LabConfig

APP_NAME = "locktune"

_ENV_PATTERN = re.compile(r"\$\{(\w+)\}")


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1, where "5e-4" is a string; learning rates are written that way.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _yaml_load(text: str) -> Any:
    return yaml.load(text, Loader=_Loader)


def _candidate_paths(cwd: Path) -> list[Path]:
    # project-level (higher priority)
    return [
        cwd / ".locktune.yaml",
        cwd / "locktune.yaml",
        cwd / "locktune.yml",
        cwd / "locktune.json",
    ]


def _global_candidate_paths() -> list[Path]:
    cfg_dir = Path(user_config_dir(APP_NAME))
    return [cfg_dir / "locktune.yaml", cfg_dir / "locktune.yml"]


def _expand_env_placeholders(obj: Any) -> Any:
    if isinstance(obj, str):

        def repl(m: re.Match) -> str:
            var = m.group(1)
            val = os.getenv(var)
            if val is None or val == "":
                raise ConfigError(f"placeholder '${{{var}}}' not found in environment or is empty")
            return val

        expanded = _ENV_PATTERN.sub(repl, obj)
        if expanded != obj:
            # "${SEED}" should become an int, not the string "3"
            return _yaml_load(expanded)
        return obj
    if isinstance(obj, dict):
        return {k: _expand_env_placeholders(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_expand_env_placeholders(v) for v in obj]
    return obj


def _load_yaml(p: Path) -> dict[str, Any]:
    # JSON is a subset of YAML, so .json configs load here too
    try:
        obj = _yaml_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: invalid YAML: {e}") from e
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return _expand_env_placeholders(obj)


def _merge_dicts(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_dicts(out[k], v)
        else:
            out[k] = v
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    """Turn ["train.peak_lr=0.01", "vision.pooling=mean"] into a nested dict.

    Values go through YAML so numbers, booleans and lists keep their types.
    """
    out: dict[str, Any] = {}
    for raw in items:
        if "=" not in raw:
            raise ConfigError(f"override must look like section.key=value, got {raw!r}")
        key, _, value = raw.partition("=")
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"empty override key in {raw!r}")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {raw!r} conflicts with an earlier one")
        node[parts[-1]] = _yaml_load(value)
    return out


def load_lab_config(
    *,
    cwd: Path,
    explicit_path: Path | None = None,
    overrides: Iterable[str] = (),
) -> tuple[LabConfig, list[Path]]:
    """Load the lab config.

    Merge order: built-in defaults < global < project < explicit_path < overrides.
    Returns the config and the files that contributed to it.
    """
    merged: dict[str, Any] = {}
    loaded_from: list[Path] = []

    for p in _global_candidate_paths():
        if p.is_file():
            merged = _merge_dicts(merged, _load_yaml(p))
            loaded_from.append(p)

    for p in _candidate_paths(cwd):
        if p.is_file():
            merged = _merge_dicts(merged, _load_yaml(p))
            loaded_from.append(p)
            break  # first match wins for project-level

    if explicit_path is not None:
        p = explicit_path.expanduser().resolve()
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        merged = _merge_dicts(merged, _load_yaml(p))
        loaded_from.append(p)

    merged = _merge_dicts(merged, parse_overrides(overrides))
    return LabConfig.from_obj(merged), loaded_from


def dump_lab_config(cfg: LabConfig, path: Path) -> None:
    write_text_atomic(path, yaml.safe_dump(cfg.to_dict(), sort_keys=False))
