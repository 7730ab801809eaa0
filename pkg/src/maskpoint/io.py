"""Readers and writers for XYZ, ASCII PLY and OFF point clouds.

Writers format every coordinate with 9 significant digits, so a parse and a
second write reproduce the first output byte for byte. Parsers report
problems as :class:`ParseError` with 1-based line and column numbers.
"""
import os
import re

import numpy as np

from .errors import InputError, ParseError

_TOKEN = re.compile(r"\S+")
_DECIMAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")
_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_PLY_SCALAR_TYPES = _PLY_FLOAT_TYPES | {"char", "uchar", "short", "ushort", "int", "uint",
                                        "int8", "uint8", "int16", "uint16", "int32", "uint32"}


def _fmt(x):
    return format(float(x), ".9g")


def _tokens(line):
    """``(column, token)`` pairs, columns 1-based; text after ``#`` is dropped."""
    cut = line.find("#")
    if cut >= 0:
        line = line[:cut]
    return [(m.start() + 1, m.group()) for m in _TOKEN.finditer(line)]


def _real(token, line_no, col):
    if not _DECIMAL.match(token):
        raise ParseError(line_no, col, f"expected a decimal number, got {token!r}")
    return float(token)


def _int(token, line_no, col, what):
    if not token.isdigit():
        raise ParseError(line_no, col, f"expected a non-negative integer {what}, got {token!r}")
    return int(token)


def _xyz_row(toks, line_no, end_col):
    if len(toks) < 3:
        col = toks[-1][0] + len(toks[-1][1]) if toks else end_col
        raise ParseError(line_no, col, f"expected 3 coordinates, found {len(toks)}")
    return [_real(t, line_no, c) for c, t in toks[:3]]


def _as_points(rows):
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _check_cloud(cloud):
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise InputError(f"expected an (N, 3) array, got shape {cloud.shape}")
    if not np.isfinite(cloud).all():
        raise InputError("cloud contains NaN or Inf")
    return cloud


# ----------------------------------------------------------------------- XYZ


def parse_xyz(text):
    """One point per non-empty, non-comment line; columns past the third are ignored."""
    rows = []
    for line_no, line in enumerate(text.splitlines(), 1):
        toks = _tokens(line)
        if toks:
            rows.append(_xyz_row(toks, line_no, len(line) + 1))
    return _as_points(rows)


def write_xyz(cloud):
    cloud = _check_cloud(cloud)
    return "".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in cloud)


# ----------------------------------------------------------------------- PLY


class _Lines:
    """Line cursor that skips blank lines and tracks 1-based line numbers."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.i = 0

    @property
    def line_no(self):
        return self.i  # number of the line last returned

    def next(self, skip_comments=True):
        """``(line_no, line, tokens)`` of the next non-blank line, or ``None`` at EOF."""
        while self.i < len(self.lines):
            line = self.lines[self.i]
            self.i += 1
            toks = _tokens(line) if skip_comments else [(m.start() + 1, m.group()) for m in _TOKEN.finditer(line)]
            if toks:
                return self.i, line, toks
        return None

    def eof_position(self):
        return len(self.lines) + 1


def _ply_header(cur):
    first = cur.next(skip_comments=False)
    if first is None or first[2][0][1] != "ply" or len(first[2]) != 1:
        raise ParseError(first[0] if first else 1, 1, "missing 'ply' magic line")
    fmt = None
    elements = []  # [name, count, [(prop, type)], line_no]
    while True:
        got = cur.next(skip_comments=False)
        if got is None:
            raise ParseError(cur.eof_position(), 1, "missing end_header")
        line_no, _, toks = got
        key = toks[0][1]
        words = [t for _, t in toks]
        if key in ("comment", "obj_info"):
            continue
        if key == "end_header":
            break
        if key == "format":
            if len(words) != 3:
                raise ParseError(line_no, 1, "format line must be 'format <type> <version>'")
            if words[1] != "ascii":
                raise ParseError(line_no, toks[1][0], f"unsupported PLY format {words[1]!r}; only ascii is read")
            if words[2] != "1.0":
                raise ParseError(line_no, toks[2][0], f"unsupported PLY version {words[2]!r}")
            fmt = "ascii"
        elif key == "element":
            if len(words) != 3:
                raise ParseError(line_no, 1, "element line must be 'element <name> <count>'")
            elements.append([words[1], _int(words[2], line_no, toks[2][0], "element count"), [], line_no])
        elif key == "property":
            if not elements:
                raise ParseError(line_no, 1, "property declared before any element")
            if len(words) >= 2 and words[1] == "list":
                if len(words) != 5:
                    raise ParseError(line_no, 1, "list property must be 'property list <count type> <type> <name>'")
                elements[-1][2].append((words[4], "list"))
            else:
                if len(words) != 3:
                    raise ParseError(line_no, 1, "property line must be 'property <type> <name>'")
                if words[1] not in _PLY_SCALAR_TYPES:
                    raise ParseError(line_no, toks[1][0], f"unknown property type {words[1]!r}")
                elements[-1][2].append((words[2], words[1]))
        elif _DECIMAL.match(key):
            raise ParseError(line_no, 1, "missing end_header before the first data row")
        else:
            raise ParseError(line_no, 1, f"unexpected header keyword {key!r}")
    if fmt is None:
        raise ParseError(cur.line_no, 1, "header has no format line")
    return elements


def _ply_body(text):
    cur = _Lines(text)
    elements = _ply_header(cur)
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError(cur.line_no, 1, "header declares no vertex element")
    names = [n for n, _ in vertex[2]]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(vertex[3], 1, f"vertex element has no '{axis}' property")
        if dict(vertex[2])[axis] not in _PLY_FLOAT_TYPES:
            raise ParseError(vertex[3], 1, f"vertex property '{axis}' must be a float type")
    if any(t == "list" for _, t in vertex[2]):
        raise ParseError(vertex[3], 1, "list properties on vertices are not supported")
    props = {}
    for name, count, plist, _ in elements:
        rows = []
        for row in range(count):
            got = cur.next(skip_comments=False)
            if got is None:
                raise ParseError(cur.eof_position(), 1,
                                 f"{name} row {row + 1} of {count} is missing")
            line_no, line, toks = got
            if name != "vertex":
                continue  # other elements are read past, one row per line
            if len(toks) != len(plist):
                col = toks[-1][0] + len(toks[-1][1]) if len(toks) < len(plist) else toks[len(plist)][0]
                raise ParseError(line_no, col, f"vertex row {row + 1} has {len(toks)} values, "
                                               f"expected {len(plist)}")
            rows.append([_real(t, line_no, c) for c, t in toks])
        if name == "vertex":
            table = np.array(rows, dtype=np.float64).reshape(count, len(plist))
            props = {n: table[:, j] for j, n in enumerate(names)}
    extra = cur.next(skip_comments=False)
    if extra is not None:
        raise ParseError(extra[0], extra[2][0][0], "unexpected content after the last declared element")
    return props


def parse_ply_ascii(text, return_properties=False):
    """Vertices of an ASCII PLY file as ``(N, 3)``.

    With ``return_properties`` also returns ``{name: (N,) array}`` for every
    vertex property, e.g. ``quality``.
    """
    props = _ply_body(text)
    points = np.stack([props["x"], props["y"], props["z"]], axis=1)
    return (points, props) if return_properties else points


def write_ply_ascii(cloud, quality=None):
    """ASCII PLY text; ``quality`` adds a per-vertex scalar property of that name."""
    cloud = _check_cloud(cloud)
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property double x", "property double y", "property double z"]
    cols = [cloud[:, 0], cloud[:, 1], cloud[:, 2]]
    if quality is not None:
        quality = np.asarray(quality, dtype=np.float64).reshape(-1)
        if len(quality) != len(cloud):
            raise InputError(f"quality has {len(quality)} values for {len(cloud)} points")
        header.append("property double quality")
        cols.append(quality)
    header.append("end_header")
    rows = [" ".join(_fmt(c[i]) for c in cols) for i in range(len(cloud))]
    return "\n".join(header + rows) + "\n"


# ----------------------------------------------------------------------- OFF


def parse_off(text):
    """Vertices of an OFF mesh; face rows are checked for count and discarded.

    Accepts the counts on their own line or on the header line (``OFF N F E``).
    """
    cur = _Lines(text)
    got = cur.next()
    if got is None or got[2][0][1] != "OFF":
        raise ParseError(got[0] if got else 1, 1, "missing 'OFF' header")
    line_no, _, toks = got
    counts = toks[1:]
    if not counts:
        got = cur.next()
        if got is None:
            raise ParseError(cur.eof_position(), 1, "missing counts line")
        line_no, _, counts = got
    if len(counts) not in (2, 3):
        raise ParseError(line_no, counts[0][0] if counts else 1,
                         "counts line must be '<vertices> <faces> [<edges>]'")
    n_vert, n_face = (_int(t, line_no, c, "count") for c, t in counts[:2])
    if len(counts) == 3:
        _int(counts[2][1], line_no, counts[2][0], "edge count")
    rows = []
    for row in range(n_vert):
        got = cur.next()
        if got is None:
            raise ParseError(cur.eof_position(), 1, f"vertex row {row + 1} of {n_vert} is missing")
        v_line, line, toks = got
        rows.append(_xyz_row(toks, v_line, len(line) + 1))
    for row in range(n_face):
        got = cur.next()
        if got is None:
            raise ParseError(cur.eof_position(), 1, f"face row {row + 1} of {n_face} is missing")
        f_line, _, toks = got
        k = _int(toks[0][1], f_line, toks[0][0], "face size")
        if len(toks) < k + 1:
            raise ParseError(f_line, 1, f"face row {row + 1} lists {len(toks) - 1} indices, expected {k}")
    extra = cur.next()
    if extra is not None:
        raise ParseError(extra[0], extra[2][0][0], "unexpected content after the last face")
    return _as_points(rows)


def write_off(cloud):
    cloud = _check_cloud(cloud)
    return f"OFF\n{len(cloud)} 0 0\n" + write_xyz(cloud)


# ---------------------------------------------------------------- dispatch

_READERS = {".xyz": parse_xyz, ".ply": parse_ply_ascii, ".off": parse_off}


def read_cloud(path):
    """Load a cloud, choosing the parser from the file extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext not in _READERS:
        raise InputError(f"unknown point-cloud extension {ext!r} for {path}; expected .xyz, .ply or .off")
    with open(path, encoding="utf-8") as f:
        return _READERS[ext](f.read())


def write_cloud(path, cloud, quality=None):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        text = write_ply_ascii(cloud, quality)
    elif ext == ".xyz":
        text = write_xyz(cloud)
    elif ext == ".off":
        text = write_off(cloud)
    else:
        raise InputError(f"unknown point-cloud extension {ext!r} for {path}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
