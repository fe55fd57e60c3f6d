########################################################################################
#
#    Copyright 2026 The blockzoo developers
#
#    This file is part of blockzoo.
#
#    This program is free software: you can redistribute it and/or modify
#    it under the terms of the GNU Lesser General Public License as published by
#    the Free Software Foundation, either version 3 of the License, or
#    (at your option) any later version.
#
#    This program is distributed in the hope that it will be useful,
#    but WITHOUT ANY WARRANTY; without even the implied warranty of
#    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#    GNU Lesser General Public License for more details.
#
#    You should have received a copy of the GNU Lesser General Public License
#    along with this program. If not, see <http://www.gnu.org/licenses/>.
#
########################################################################################
"""Reading and writing TOML configuration documents."""

# 1. Standard library imports:
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Union

# 2. Known third party imports:
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# 3. Local imports in the relative form:
from .errors import ConfigurationError

OUTPUT_ROOT_ENV = "BLOCKZOO_OUTPUT_ROOT"

CONFIG_TABLES = ("sampler", "render", "classifier", "probe", "flow", "run")

PRESETS = {
    "desk": {
        "render": {"width": 64, "height": 64},
        "splits": {"train": 800, "validation": 100, "test": 100},
        "pairs": 500,
    },
    "full": {
        "render": {"width": 128, "height": 128},
        "splits": {"train": 8000, "validation": 1000, "test": 1000},
        "pairs": 2500,
    },
}


def loads_toml(text: str) -> Dict[str, Any]:
    """
    Parse a TOML document.

    :param text: TOML source.
    :returns: The parsed document.
    :raises ConfigurationError: If the document is malformed.
    """
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Malformed TOML: {e}") from e


def load_toml(path: Union[str, os.PathLike]) -> Dict[str, Any]:
    """
    Read a TOML file.

    :param path: File to read.
    :returns: The parsed document.
    """
    return loads_toml(Path(path).read_text(encoding="utf-8"))


def dumps_toml(document: Dict[str, Any]) -> str:
    """Serialize a document as TOML."""
    return tomli_w.dumps(document)


def load_run_config(path: Union[str, os.PathLike]) -> Dict[str, Dict[str, Any]]:
    """
    Read a run configuration file and check its top level tables.

    :param path: TOML file with any of the tables in ``CONFIG_TABLES``.
    :returns: Mapping of table name to table, absent tables as empty dicts.
    :raises ConfigurationError: On unknown top level keys.
    """
    document = load_toml(path)
    reject_unknown(document, CONFIG_TABLES, "run configuration")
    return {name: dict(document.get(name, {})) for name in CONFIG_TABLES}


def reject_unknown(table: Dict[str, Any], known: Iterable[str], where: str) -> None:
    """
    Raise on keys of ``table`` that are not in ``known``.

    :param table: Parsed configuration table.
    :param known: Accepted key names.
    :param where: Name of the table for the error message.
    :raises ConfigurationError: Naming the first unknown key.
    """
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigurationError(f'Unknown key "{unknown[0]}" in {where}.')


def config_hash(document: Dict[str, Any]) -> str:
    """
    Hash a configuration document independent of key order.

    :param document: JSON serializable configuration.
    :returns: Hexadecimal SHA-256 digest of the canonical JSON form.
    """
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def default_output_root() -> Path:
    """Output root from ``BLOCKZOO_OUTPUT_ROOT``, else the working directory."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def get_preset(name: str) -> Dict[str, Any]:
    """
    Look up a size preset.

    :param name: ``"desk"`` or ``"full"``.
    :returns: A copy of the preset.
    """
    if name not in PRESETS:
        raise ConfigurationError(f'Preset must be "desk" or "full". {name} was given.')
    return json.loads(json.dumps(PRESETS[name]))
