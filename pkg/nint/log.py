"""
Module for initializing logging.

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

from argparse import ArgumentParser, Namespace
import logging
import warnings

class Log_Setup:
    """
    Utility class that initializes and registers logging options.
    """

    LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']

    @classmethod
    def add_argument(cls, parser: ArgumentParser, default: str = 'WARNING') -> None:
        """
        Register a log level argument in an argument parser.
        """

        parser.add_argument('--log', default=default, choices=cls.LEVELS,
                            help=f'log level ({default} by default)')

    @classmethod
    def parse_args(cls, args: Namespace) -> None:
        """
        Retrieve the log level from parsed arguments and initialize logging.
        """

        cls.init_logging(args.log)

    @staticmethod
    def init_logging(log_level: str) -> None:
        """
        Initialize logging for the command line process.

        Runtime warnings from numerical libraries are routed into the log so
        that they share the format and level filtering of our own messages.
        """

        logging.basicConfig(format='%(asctime)s:%(levelname)s:%(message)s',
                            level=getattr(logging, log_level.upper(), None))
        logging.captureWarnings(True)
        warnings.simplefilter('default', RuntimeWarning)
