"""Strict CSV ingestion and the bundled example data."""
import hashlib
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from mestim.errors import DataError

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class Dataset:
    """Named numeric columns of equal length, all values finite."""

    columns: tuple
    values: np.ndarray
    sha256: str = ""

    @property
    def n_obs(self):
        return self.values.shape[0]

    def column(self, name):
        try:
            j = self.columns.index(name)
        except ValueError:
            raise DataError(
                f"column {name!r} not found; available: {', '.join(self.columns)}"
            ) from None
        return self.values[:, j].copy()

    def matrix(self, names):
        return np.column_stack([self.column(c) for c in names]) if names \
            else np.zeros((self.n_obs, 0))

    def to_csv(self):
        lines = [",".join(self.columns)]
        for row in self.values:
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def parse_csv(text, sha256=None):
    """Parse comma-separated text with a header row.

    Only plain decimal numbers are accepted: no quoting, no blank cells, no
    thousands separators, no NaN or infinity.
    """
    if sha256 is None:
        sha256 = hashlib.sha256(text.encode()).hexdigest()
    lines = text.splitlines()
    while lines and lines[-1].strip() == "":
        lines.pop()
    if not lines:
        raise DataError("CSV file is empty")
    header = [h.strip() for h in lines[0].split(",")]
    if any(h == "" for h in header):
        raise DataError("line 1: empty column name in header")
    if len(set(header)) != len(header):
        raise DataError("line 1: duplicate column names in header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(header):
            raise DataError(
                f"line {lineno}: expected {len(header)} fields, found {len(cells)}"
            )
        row = []
        for name, cell in zip(header, cells):
            if cell == "":
                raise DataError(f"line {lineno}: missing value in column {name!r}")
            if not _NUMBER.match(cell):
                raise DataError(
                    f"line {lineno}: column {name!r} holds non-numeric value {cell!r}"
                )
            value = float(cell)
            if not np.isfinite(value):
                raise DataError(f"line {lineno}: non-finite value in column {name!r}")
            row.append(value)
        rows.append(row)
    if not rows:
        raise DataError("CSV file has a header but no data rows")
    return Dataset(tuple(header), np.array(rows, dtype=float), sha256)


def read_csv(path):
    try:
        raw = open(path, "rb").read()
    except OSError as err:
        raise DataError(f"cannot read {path}: {err.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise DataError(f"{path} is not UTF-8 text") from None
    return parse_csv(text, hashlib.sha256(raw).hexdigest())


def load_ryegrass():
    """Ryegrass root length (``rootl``) against herbicide dose (``conc``).

    24 observations from Inderjit, Streibig and Olofsdotter (2002).
    """
    text = resources.files("mestim.data").joinpath("ryegrass.csv").read_text()
    return parse_csv(text)
