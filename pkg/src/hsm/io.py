"""Plain-text formats: hierarchies, vectors, matrices and CSV tables.

Numbers are written with ``repr`` so they read back bit for bit.
"""
from __future__ import annotations

import csv
import io as _io
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .hierarchy import Hierarchy, validate


class FormatError(ValueError):
    """Malformed input file."""


def _lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_hierarchy(text):
    """Parse the hierarchy format.

    ``p <int>`` once, then ``node <id> <idx> ...`` (1-based indices) and
    ``edge <parent-id> <child-id>`` lines. Blank lines and ``#`` comments are
    ignored. Node ids are arbitrary tokens; nodes keep their file order.
    """
    p = None
    ids = {}
    nodes = []
    labels = []
    edges = []
    for lineno, line in _lines(text):
        parts = line.split()
        key = parts[0].lower()
        try:
            if key == "p":
                if p is not None or len(parts) != 2:
                    raise FormatError("expected a single 'p <int>' line")
                p = int(parts[1])
            elif key == "node":
                if len(parts) < 3:
                    raise FormatError("node line needs an id and indices")
                if parts[1] in ids:
                    raise FormatError(f"duplicate node id {parts[1]}")
                ids[parts[1]] = len(nodes)
                labels.append(parts[1])
                nodes.append([int(x) - 1 for x in parts[2:]])
            elif key == "edge":
                if len(parts) != 3:
                    raise FormatError("edge line needs a parent and a child id")
                edges.append((parts[1], parts[2]))
            else:
                raise FormatError(f"unknown record {parts[0]!r}")
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if p is None:
        raise FormatError("missing 'p <int>' line")
    try:
        pairs = [(ids[a], ids[b]) for a, b in edges]
    except KeyError as exc:
        raise FormatError(f"edge names unknown node {exc.args[0]}") from None
    h = Hierarchy.from_lists(p, nodes, pairs, labels)
    bad = validate(h)
    if bad is not None:
        raise FormatError(f"invalid hierarchy: {bad}")
    return h


def read_hierarchy(path):
    with open(path) as fh:
        return parse_hierarchy(fh.read())


def format_hierarchy(h: Hierarchy):
    out = [f"p {h.p}"]
    for i, s in enumerate(h.nodes):
        out.append(f"node {h.label(i)} " + " ".join(str(k + 1) for k in s))
    for a, b in h.edges:
        out.append(f"edge {h.label(a)} {h.label(b)}")
    return "\n".join(out) + "\n"


def parse_vector(text):
    """One number per line; ``#`` comments and blank lines ignored."""
    vals = []
    for lineno, line in _lines(text):
        try:
            vals.append(float(line))
        except ValueError:
            raise FormatError(f"line {lineno}: not a number: {line!r}") from None
    if not vals:
        raise FormatError("no numbers found")
    v = np.array(vals)
    if not np.all(np.isfinite(v)):
        raise FormatError("vector has non-finite entries")
    return v


def read_vector(path):
    with open(path) as fh:
        return parse_vector(fh.read())


def format_vector(v, comments: Sequence[str] = ()):
    lines = [f"# {c}" for c in comments]
    lines += [repr(float(x)) for x in np.asarray(v).ravel()]
    return "\n".join(lines) + "\n"


def parse_matrix(text):
    """Headerless CSV of numbers; ``#`` comment lines ignored."""
    rows = []
    for lineno, line in _lines(text):
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise FormatError(f"line {lineno}: bad number in {line!r}") from None
    if not rows:
        raise FormatError("no rows found")
    if len({len(r) for r in rows}) != 1:
        raise FormatError("rows have different lengths")
    A = np.array(rows)
    if not np.all(np.isfinite(A)):
        raise FormatError("matrix has non-finite entries")
    return A


def read_matrix(path):
    with open(path) as fh:
        return parse_matrix(fh.read())


def format_matrix(A, comments: Sequence[str] = ()):
    lines = [f"# {c}" for c in comments]
    for row in np.atleast_2d(A):
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


class Table:
    """Rows with named columns plus a ``#`` metadata block."""

    def __init__(self, columns: Sequence[str], rows: Iterable = (), meta=None):
        self.columns = list(columns)
        self.rows = [tuple(r) for r in rows]
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]

    def where(self, **conds):
        keep = [r for r in self.records()
                if all(r[k] == v for k, v in conds.items())]
        return keep

    def to_csv(self):
        buf = _io.StringIO()
        buf.write(f"# version: hsm {__version__}\n")
        for k, v in self.meta.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(x) for x in r])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def read_table(path_or_text, is_text=False):
    """Read a CSV written by :meth:`Table.to_csv` (values stay strings)."""
    text = path_or_text if is_text else open(path_or_text).read()
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    rdr = csv.reader(body)
    columns = next(rdr)
    return Table(columns, list(rdr), meta)
