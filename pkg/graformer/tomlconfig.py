# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""TOML configuration support for graformer.

Settings live in ``[tool.graformer.model]``, ``[tool.graformer.train]`` and
so on in pyproject.toml, or in bare ``[model]``/``[train]`` tables in a
.toml file named with ``--config``.

"""

import configparser
import os
import re

from graformer.exceptions import ConfigError
from graformer.misc import substitute_variables

# TOML support is an install-time extra option.
try:
    import tomli
except ImportError:         # pragma: not covered
    tomli = None


class TomlDecodeError(Exception):
    """An exception class that exists even when toml isn't installed."""
    pass


class TomlConfigParser:
    """TOML file reading with the interface of HandyConfigParser."""

    # pylint: disable=missing-function-docstring

    def __init__(self, our_file):
        self.our_file = our_file
        self.prefixes = ["tool.graformer."] + ([""] if our_file else [])
        self.data = {}

    def read(self, filename):
        filename = os.fspath(filename)
        try:
            with open(filename, encoding='utf-8') as fp:
                toml_text = fp.read()
        except OSError:
            return []
        if tomli is None:
            if self.our_file or re.search(r"^\[tool\.graformer\.", toml_text, flags=re.MULTILINE):
                raise ConfigError(f"Can't read {filename!r} without TOML support. Install with [toml] extra")
            return []
        try:
            self.data = tomli.loads(substitute_variables(toml_text, os.environ))
        except tomli.TOMLDecodeError as err:
            raise TomlDecodeError(str(err)) from err
        return [filename]

    def _table(self, section):
        """Returns (dotted name, table) for `section`, or (None, None)."""
        for prefix in self.prefixes:
            table = self.data
            for part in (prefix + section).split("."):
                table = table.get(part) if isinstance(table, dict) else None
                if table is None:
                    break
            if isinstance(table, dict):
                return prefix + section, table
        return None, None

    def _value(self, section, option):
        name, table = self._table(section)
        if table is None:
            raise configparser.NoSectionError(section)
        if option not in table:
            raise configparser.NoOptionError(option, name)
        return name, table[option]

    def has_section(self, section):
        return self._table(section)[0]

    def has_option(self, section, option):
        _, table = self._table(section)
        return table is not None and option in table

    def options(self, section):
        _, table = self._table(section)
        if table is None:
            raise configparser.NoSectionError(section)
        return list(table)

    def get(self, section, option):
        return self._value(section, option)[1]

    def _typed(self, section, option, accept, desc):
        name, value = self._value(section, option)
        # TOML booleans are ints to Python; never take them as numbers.
        if isinstance(value, bool) or not isinstance(value, accept):
            raise ValueError(f"Option {option!r} in section {name!r} is not {desc}: {value!r}")
        return value

    def getint(self, section, option):
        return self._typed(section, option, int, "an integer")

    def getfloat(self, section, option):
        # A learning rate written as 1 is as good as 1.0.
        return float(self._typed(section, option, (int, float), "a number"))

    def getlist(self, section, option):
        values = self._typed(section, option, list, "a list")
        return [str(v) for v in values]
