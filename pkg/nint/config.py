"""
Configuration provider.

Copyright 2024-2025 nint developers

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

from configparser import Error as ParserError, RawConfigParser
import os
from pathlib import Path
from typing import Collection, Dict, List, Optional, Union, TYPE_CHECKING

if TYPE_CHECKING:
    PathLike = Union[str, os.PathLike[str]]
else:
    PathLike = Union[str, os.PathLike]

class ConfigurationError(ValueError):
    """
    Error indicating that a configuration file has unknown or malformed keys.
    """

class Configuration:
    """
    Object that provides access to options and sections from configuration files
    that are stored alongside the repository or elsewhere.
    """

    # Section name used for flat key-value files such as camera configs.
    FLAT_SECTION = 'file'

    _settings: Optional[RawConfigParser] = None

    @classmethod
    def clear(cls) -> None:
        """
        Remove any instances created for configuration.
        """

        cls._settings = None

    @classmethod
    def get_filename(cls, file_name: str) -> str:
        """
        Retrieve the file name to be used to retrieve the configuration.
        """

        environment_var = f'NINT_{file_name.upper()}_FILE'
        if environment_var in os.environ:
            return os.environ[environment_var]

        return f'{file_name}.cfg'

    @classmethod
    def get_config(cls, file_name: str) -> RawConfigParser:
        """
        Create a configuration object that is loaded with options from a file.
        """

        config = RawConfigParser()
        config.read(cls.get_filename(file_name))

        return config

    @classmethod
    def get_settings(cls) -> RawConfigParser:
        """
        Retrieve the settings configuration object.
        """

        if cls._settings is None:
            cls._settings = cls.get_config('settings')

        return cls._settings

    @classmethod
    def get_option(cls, section: str, option: str,
                   fallback: Optional[str] = None) -> Optional[str]:
        """
        Retrieve an option from the settings, or `fallback` if either the
        section or the option is not set.
        """

        settings = cls.get_settings()
        if not settings.has_option(section, option):
            return fallback

        return settings.get(section, option)

    @classmethod
    def has_value(cls, value: Optional[str]) -> bool:
        """
        Check whether the value of an option is not set to a falsy value.

        If the option is one of 'false', 'no', 'off', '-', '0', the empty
        string '' or `None`, then `False` is returned. Otherwise, `True` is
        returned.
        """

        return value not in ('false', 'no', 'off', '-', '0', '', None)

    @classmethod
    def get_threads(cls) -> Optional[int]:
        """
        Retrieve the cap on internal parallelism from the `NINT_THREADS`
        environment variable. `None` means that the number of workers is
        chosen automatically, which is also the case for a value of zero.
        """

        value = os.getenv('NINT_THREADS', '0')
        try:
            threads = int(value)
        except ValueError as error:
            raise ConfigurationError(f'NINT_THREADS must be an integer, not {value!r}') from error
        if threads < 0:
            raise ConfigurationError('NINT_THREADS must not be negative')

        return threads if threads > 0 else None

    @classmethod
    def read_key_values(cls, path: PathLike,
                        allowed: Collection[str]) -> Dict[str, str]:
        """
        Read a flat UTF-8 file of `key = value` lines, such as a camera or
        scene configuration.

        Keys outside of `allowed` raise a `ConfigurationError`, as do lines
        that cannot be parsed. The keys are returned in lower case.
        """

        text = Path(path).read_text(encoding='utf-8')
        parser = RawConfigParser()
        try:
            parser.read_string(f'[{cls.FLAT_SECTION}]\n{text}', source=str(path))
        except ParserError as error:
            raise ConfigurationError(f'Malformed configuration file {path}: {error}') from error

        values = dict(parser.items(cls.FLAT_SECTION))
        unknown: List[str] = sorted(set(values) - set(allowed))
        if unknown:
            raise ConfigurationError(f'Unknown keys in {path}: {", ".join(unknown)}')

        return values
