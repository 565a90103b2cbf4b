"""
Sectioned key-value experiment configuration.

    # comment
    geometry.n_tx = 8          dotted key, valid anywhere
    [scenario]
    n_users = 2
    [sweep]
    points = 0, 0.05, 0.1, 0.2

Absent keys take their defaults. Unknown sections, unknown keys, duplicates
and values that fail validation raise ConfigError with the key and line.
"""

import logging
import typing
from enum import Enum
from pathlib import Path
from typing import Dict, Tuple, Union

from pydantic import BaseModel, ValidationError

from app.models.run_config import SECTION_NAMES, RunConfig
from app.utils.errors import ConfigError

logger = logging.getLogger(__name__)

RESOLVED_NAME = "resolved_config.ini"
COMMENT_PREFIXES = ("#", ";")


def _section_model(section: str) -> type:
    return RunConfig.model_fields[section].annotation


def _is_tuple(model: type, key: str) -> bool:
    return typing.get_origin(model.model_fields[key].annotation) is tuple


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ConfigService:
    def _read_entries(self, text: str) -> Dict[str, Dict[str, Tuple[str, int]]]:
        entries: Dict[str, Dict[str, Tuple[str, int]]] = {name: {} for name in SECTION_NAMES}
        current = None
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith(COMMENT_PREFIXES):
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise ConfigError(f"malformed section header '{line}'", line=number)
                current = line[1:-1].strip()
                if current not in entries:
                    raise ConfigError(f"unknown section [{current}]", key=current, line=number)
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got '{line}'", line=number)
            key, value = (part.strip() for part in line.split("=", 1))
            if "." in key:
                section, field = key.split(".", 1)
                if section not in entries:
                    raise ConfigError(f"unknown section in key '{key}'", key=key, line=number)
            elif current is None:
                raise ConfigError(f"key '{key}' appears outside any section", key=key, line=number)
            else:
                section, field = current, key
            if field not in _section_model(section).model_fields:
                raise ConfigError(f"unknown key '{section}.{field}'", key=f"{section}.{field}", line=number)
            if field in entries[section]:
                raise ConfigError(f"duplicate key '{section}.{field}'", key=f"{section}.{field}", line=number)
            entries[section][field] = (value, number)
        return entries

    def parse_text(self, text: str) -> RunConfig:
        entries = self._read_entries(text)
        sections: Dict[str, BaseModel] = {}
        for section, fields in entries.items():
            model = _section_model(section)
            data = {}
            for field, (value, _) in fields.items():
                if _is_tuple(model, field):
                    data[field] = tuple(item.strip() for item in value.split(",") if item.strip())
                else:
                    data[field] = value
            try:
                sections[section] = model.model_validate(data)
            except ValidationError as e:
                error = e.errors()[0]
                field = str(error["loc"][0]) if error["loc"] else None
                line = fields[field][1] if field in fields else None
                key = f"{section}.{field}" if field else section
                raise ConfigError(f"invalid value for '{key}': {error['msg']}", key=key, line=line) from e
        return RunConfig(**sections)

    def parse_config(self, path: Union[str, Path]) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = self.parse_text(path.read_text(encoding="utf-8"))
        logger.info(f"Loaded configuration from {path}")
        return cfg

    def render(self, cfg: RunConfig) -> str:
        lines = []
        for section in SECTION_NAMES:
            lines.append(f"[{section}]")
            for key, value in getattr(cfg, section):
                lines.append(f"{key} = {_format_value(value)}")
            lines.append("")
        return "\n".join(lines)

    def write_resolved(self, cfg: RunConfig, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RESOLVED_NAME
        path.write_text(self.render(cfg), encoding="utf-8", newline="\n")
        logger.info(f"Resolved configuration written: {path}")
        return path


# Global instance
config_service = ConfigService()
