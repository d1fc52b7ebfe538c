"""
Table structures for report and ablation output.

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

import csv
import json
import os
from pathlib import Path
from typing import Collection, Dict, Iterator, List, Optional, Sequence, \
    Union, TYPE_CHECKING

Value = str
Row = Dict[str, Value]
if TYPE_CHECKING:
    PathLike = Union[str, os.PathLike[str]]
else:
    PathLike = Union[str, os.PathLike]

class Table(Collection[Row]):
    """
    Data storage for rows with a fixed set of columns, which are exported as
    CSV or JSON files.

    The columns are given by `fields` and determine the CSV header. Rows may
    leave out columns, which are then written as empty CSV cells and omitted
    from JSON output.
    """

    def __init__(self, name: str, fields: Sequence[str],
                 filename: Optional[str] = None) -> None:
        self._name = name
        self._fields = tuple(fields)

        if filename is None:
            self._filename = f'{self._name}.csv'
        else:
            self._filename = filename

        self.clear()

    @property
    def name(self) -> str:
        """
        Retrieve the name of the table.
        """

        return self._name

    @property
    def fields(self) -> Sequence[str]:
        """
        Retrieve the column names of the table in output order.
        """

        return self._fields

    @property
    def filename(self) -> str:
        """
        Retrieve the default filename which is used for exporting the table
        when `write` is given a directory.
        """

        return self._filename

    def _check(self, row: Row) -> Row:
        unknown = set(row) - set(self._fields)
        if unknown:
            raise KeyError(f'Unknown columns for table {self._name}: {", ".join(sorted(unknown))}')

        # Make a copy so the originally passed dict remains the same.
        return dict(row)

    def has(self, row: Row) -> bool:
        """
        Check whether the `row` (or a unique identifier contained within)
        already exists within the table.
        """

        return row in self._data

    def append(self, row: Row) -> Optional[Row]:
        """
        Insert a row into the table.

        Returns the newly added row or `None` if the row is not added.
        """

        new_row = self._check(row)
        self._data.append(new_row)
        return new_row

    def extend(self, rows: Sequence[Row]) -> Sequence[Optional[Row]]:
        """
        Insert multiple rows at once into the table.

        Returns a list of the inserted rows, with rows replaced by `None` if
        they were not added.
        """

        return [self.append(row) for row in rows]

    def _resolve(self, path: PathLike) -> Path:
        target = Path(path)
        if target.is_dir():
            return target / self._filename

        return target

    def write(self, path: PathLike) -> Path:
        """
        Export the table data to `path`. A `.json` suffix selects a JSON list
        of row objects, any other suffix a CSV file with a header line. If
        `path` is an existing directory, then the table's default filename is
        used inside it. Returns the path that was written.
        """

        target = self._resolve(path)
        if target.suffix == '.json':
            with target.open('w', encoding='utf-8') as outfile:
                json.dump(self._data, outfile, indent=4)
                outfile.write('\n')
        else:
            with target.open('w', encoding='utf-8', newline='') as outfile:
                writer = csv.DictWriter(outfile, fieldnames=self._fields,
                                        lineterminator='\n')
                writer.writeheader()
                writer.writerows(self._data)

        return target

    def load(self, path: PathLike) -> None:
        """
        Read table data from an exported file at `path`.

        If the file does not exist, then nothing happens. Otherwise, the data
        is appended to the in-memory table. Empty CSV cells are left out of
        the loaded rows.
        """

        target = self._resolve(path)
        if not target.exists():
            return

        if target.suffix == '.json':
            with target.open('r', encoding='utf-8') as infile:
                self.extend(json.load(infile))
            return

        with target.open('r', encoding='utf-8', newline='') as infile:
            reader = csv.DictReader(infile)
            if reader.fieldnames is not None and \
                tuple(reader.fieldnames) != self._fields:
                raise ValueError(f'Header of {target} does not match table '
                                 f'{self._name}: {",".join(reader.fieldnames)}')
            self.extend([
                {key: value for key, value in row.items() if value != ''}
                for row in reader
            ])

    def clear(self) -> None:
        """
        Remove all rows from the table.
        """

        self._data: List[Row] = []

    def __contains__(self, row: object) -> bool:
        if not isinstance(row, dict):
            return False

        return self.has(row)

    def __iter__(self) -> Iterator[Row]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

class Key_Table(Table):
    """
    Data storage for a table that has a primary, unique key.

    The table checks whether any row with some key was already added before
    accepting a new row with that key.
    """

    def __init__(self, name: str, key: str, fields: Sequence[str],
                 filename: Optional[str] = None) -> None:
        if key not in fields:
            raise ValueError(f'Key {key} must be one of the table fields')

        super().__init__(name, fields, filename=filename)
        self._key = key

    @property
    def key(self) -> str:
        """
        Retrieve the name of the primary key column.
        """

        return self._key

    def clear(self) -> None:
        super().clear()
        self._keys: Dict[str, Row] = {}

    def has(self, row: Row) -> bool:
        if self._key not in row:
            return False

        return row[self._key] in self._keys

    def append(self, row: Row) -> Optional[Row]:
        if self._key not in row:
            raise KeyError(f'Row for table {self._name} lacks key {self._key}')
        if self.has(row):
            return None

        new_row = super().append(row)
        if new_row is None: # pragma: no cover
            raise ValueError('Unexpected missing row from parent Table')

        self._keys[new_row[self._key]] = new_row
        return new_row

    def __getitem__(self, key: object) -> Row:
        if not isinstance(key, str):
            raise TypeError('Key_Table[key] is only subscriptable with string '
                            f"keys, not '{type(key)}'")

        return self._keys[key]
