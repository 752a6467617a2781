"""Signature containers, capture-file parsing and dataset enumeration."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DatasetErrors,
    EmptyDataset,
    FieldCount,
    MalformedHeader,
    NonMonotoneTime,
    ParseError,
    TooFewPoints,
)

log = logging.getLogger(__name__)

GENUINE = "genuine"
SKILLED_FORGERY = "skilled_forgery"
RANDOM_FORGERY = "random_forgery"
LABELS = (GENUINE, SKILLED_FORGERY, RANDOM_FORGERY)

SVC2004_COLUMNS = ("x", "y", "t", "pen_down", "azimuth", "altitude", "pressure")
KNOWN_FIELDS = frozenset(SVC2004_COLUMNS)
SKIP_NAMES = frozenset({"_", "skip"})


class SignaturePoint(NamedTuple):
    x: float
    y: float
    t: float
    pen_down: bool
    pressure: float
    azimuth: Optional[float] = None
    altitude: Optional[float] = None


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    if a.ndim != 1:
        raise ValueError("signature channels must be 1-D")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RawSignature:
    """An online signature stored column-wise.

    Coordinates come in raw tablet units; after smoothing or rotation they may
    be non-integer. Arrays are read-only so instances can be shared freely.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    pen_down: np.ndarray
    pressure: np.ndarray
    azimuth: Optional[np.ndarray] = None
    altitude: Optional[np.ndarray] = None
    user_id: str = ""
    label: str = GENUINE
    source_path: str = ""

    def __post_init__(self):
        s = object.__setattr__
        s(self, "x", _frozen(self.x, np.float64))
        s(self, "y", _frozen(self.y, np.float64))
        s(self, "t", _frozen(self.t, np.float64))
        s(self, "pen_down", _frozen(self.pen_down, bool))
        s(self, "pressure", _frozen(self.pressure, np.float64))
        if self.azimuth is not None:
            s(self, "azimuth", _frozen(self.azimuth, np.float64))
        if self.altitude is not None:
            s(self, "altitude", _frozen(self.altitude, np.float64))

        n = len(self.x)
        for name in ("y", "t", "pen_down", "pressure", "azimuth", "altitude"):
            a = getattr(self, name)
            if a is not None and len(a) != n:
                raise ValueError(f"channel {name!r} has {len(a)} samples, expected {n}")
        if n < 2:
            raise TooFewPoints(f"a signature needs at least 2 points, got {n}",
                               path=self.source_path or None)
        if np.any(np.diff(self.t) < 0):
            i = int(np.argmax(np.diff(self.t) < 0)) + 1
            raise NonMonotoneTime(f"timestamp decreases at point {i}",
                                  path=self.source_path or None)
        if not self.pen_down.any():
            raise ParseError("signature has no pen-down point",
                             path=self.source_path or None)
        if np.any(self.pressure < 0):
            raise ParseError("negative pressure", path=self.source_path or None)
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        for name in ("x", "y", "t", "pressure"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ParseError(f"non-finite values in {name}",
                                 path=self.source_path or None)

    def __len__(self):
        return len(self.x)

    @property
    def points(self) -> list[SignaturePoint]:
        az = self.azimuth if self.azimuth is not None else [None] * len(self)
        al = self.altitude if self.altitude is not None else [None] * len(self)
        return [
            SignaturePoint(float(a), float(b), float(c), bool(d), float(e),
                           None if f is None else float(f),
                           None if g is None else float(g))
            for a, b, c, d, e, f, g in zip(self.x, self.y, self.t, self.pen_down,
                                           self.pressure, az, al)
        ]

    @classmethod
    def from_points(cls, points: Sequence[SignaturePoint], **meta) -> "RawSignature":
        cols = list(zip(*points))
        az = None if any(v is None for v in cols[5]) else cols[5]
        al = None if any(v is None for v in cols[6]) else cols[6]
        return cls(cols[0], cols[1], cols[2], cols[3], cols[4], az, al, **meta)

    def replace(self, **changes) -> "RawSignature":
        kw = dict(x=self.x, y=self.y, t=self.t, pen_down=self.pen_down,
                  pressure=self.pressure, azimuth=self.azimuth,
                  altitude=self.altitude, user_id=self.user_id,
                  label=self.label, source_path=self.source_path)
        kw.update(changes)
        return RawSignature(**kw)

    def same_points(self, other: "RawSignature") -> bool:
        """Exact equality of every captured channel."""
        names = ("x", "y", "t", "pen_down", "pressure", "azimuth", "altitude")
        for n in names:
            a, b = getattr(self, n), getattr(other, n)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass(frozen=True)
class DatasetLayout:
    """How capture files are laid out on disk.

    ``filename_rule`` is a glob with ``{user}`` and ``{index}`` captures.
    Files with ``index`` in ``1..genuine_per_user`` are genuine, the next
    ``forgery_per_user`` indices are skilled forgeries; anything else does not
    match the rule.
    """

    format_preset: str = "svc2004"
    column_map: tuple[str, ...] = SVC2004_COLUMNS
    filename_rule: str = "U{user}S{index}.TXT"
    genuine_per_user: int = 20
    forgery_per_user: int = 20
    header_lines: int = 0

    def __post_init__(self):
        if self.format_preset not in ("svc2004", "column_mapped"):
            raise ValueError(f"unknown format preset {self.format_preset!r}")
        if self.format_preset == "svc2004":
            object.__setattr__(self, "column_map", SVC2004_COLUMNS)
        cm = tuple(self.column_map)
        object.__setattr__(self, "column_map", cm)
        named = [c for c in cm if c not in SKIP_NAMES]
        bad = set(named) - KNOWN_FIELDS
        if bad:
            raise ValueError(f"unknown column names {sorted(bad)}")
        if len(set(named)) != len(named):
            raise ValueError("column map names a field twice")
        if "x" not in named or "y" not in named:
            raise ValueError("column map must include x and y")
        if "{user}" not in self.filename_rule or "{index}" not in self.filename_rule:
            raise ValueError("filename_rule needs {user} and {index} captures")
        if self.genuine_per_user < 1 or self.forgery_per_user < 0:
            raise ValueError("bad per-user counts")

    def filename_regex(self) -> re.Pattern:
        out = []
        for tok in re.split(r"(\{user\}|\{index\}|\*|\?)", self.filename_rule):
            if tok == "{user}":
                out.append(r"(?P<user>[^/\\]+?)")
            elif tok == "{index}":
                out.append(r"(?P<index>\d+)")
            elif tok == "*":
                out.append(r"[^/\\]*")
            elif tok == "?":
                out.append(r"[^/\\]")
            else:
                out.append(re.escape(tok))
        return re.compile("".join(out) + r"\Z", re.IGNORECASE)

    def label_for_index(self, index: int) -> Optional[str]:
        if 1 <= index <= self.genuine_per_user:
            return GENUINE
        if self.genuine_per_user < index <= self.genuine_per_user + self.forgery_per_user:
            return SKILLED_FORGERY
        return None


SVC2004 = DatasetLayout()


# -- parsing -------------------------------------------------------------------

def _as_text(content) -> str:
    if isinstance(content, (bytes, bytearray)):
        return bytes(content).decode("utf-8", errors="strict")
    return str(content)


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s:
            yield lineno, s


def parse_signature(content, layout: DatasetLayout = SVC2004, *, path=None,
                    user_id="", label=GENUINE) -> RawSignature:
    """Parse one capture file into a :class:`RawSignature`.

    For the ``svc2004`` preset the first line is the point count and each
    following line carries seven integers (X, Y, timestamp, button, azimuth,
    altitude, pressure). ``column_mapped`` reads whitespace-separated numbers
    in the order given by ``layout.column_map`` after ``header_lines`` lines.
    Missing ``pen_down`` becomes ``pressure > 0``, missing ``t`` the sample
    index and missing ``pressure`` the constant 1.
    """
    text = _as_text(content)
    lines = list(_data_lines(text))
    if not lines:
        raise ParseError("empty file", path=path)

    if layout.format_preset == "svc2004":
        lineno, head = lines[0]
        try:
            declared = int(head)
        except ValueError:
            raise MalformedHeader(f"point count line {head!r} is not an integer",
                                  path=path, line=lineno) from None
        if declared < 2:
            raise TooFewPoints(f"declared point count {declared} < 2", path=path, line=lineno)
        body = lines[1:]
        if len(body) != declared:
            raise MalformedHeader(
                f"header declares {declared} points but file has {len(body)}",
                path=path, line=lineno)
        columns = SVC2004_COLUMNS
        conv = int
    else:
        body = lines[layout.header_lines:]
        columns = layout.column_map
        conv = float

    ncol = len(columns)
    rows = []
    for lineno, s in body:
        parts = s.split()
        if len(parts) != ncol:
            raise FieldCount(f"expected {ncol} columns, got {len(parts)}",
                             path=path, line=lineno)
        try:
            rows.append([conv(p) for p in parts])
        except ValueError:
            raise ParseError(f"non-numeric field in {s!r}", path=path, line=lineno) from None
    if len(rows) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(rows)}", path=path)

    data = np.array(rows, dtype=np.float64)
    col = {name: data[:, i] for i, name in enumerate(columns) if name not in SKIP_NAMES}
    n = len(rows)

    if "t" in col:
        t = col["t"]
        bad = np.flatnonzero(np.diff(t) < 0)
        if bad.size:
            raise NonMonotoneTime(f"timestamp decreases at data row {bad[0] + 2}", path=path)
    else:
        t = np.arange(n, dtype=np.float64)
    pressure = col.get("pressure", np.ones(n))
    pen = col["pen_down"] != 0 if "pen_down" in col else pressure > 0

    return RawSignature(
        x=col["x"], y=col["y"], t=t, pen_down=pen, pressure=pressure,
        azimuth=col.get("azimuth"), altitude=col.get("altitude"),
        user_id=user_id, label=label, source_path=str(path) if path is not None else "",
    )


def _int_text(a) -> list[str]:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(a == np.round(a)):
        raise ValueError("svc2004 serialization needs integer-valued channels")
    return [str(int(v)) for v in a]


def serialize_svc2004(sig: RawSignature) -> str:
    """Inverse of :func:`parse_signature` for the svc2004 preset."""
    n = len(sig)
    zeros = np.zeros(n)
    cols = [
        _int_text(sig.x), _int_text(sig.y), _int_text(sig.t),
        ["1" if p else "0" for p in sig.pen_down],
        _int_text(sig.azimuth if sig.azimuth is not None else zeros),
        _int_text(sig.altitude if sig.altitude is not None else zeros),
        _int_text(sig.pressure),
    ]
    lines = [str(n)] + [" ".join(row) for row in zip(*cols)]
    return "\n".join(lines) + "\n"


# -- datasets ------------------------------------------------------------------

@dataclass
class UserSignatures:
    genuine: list = field(default_factory=list)
    forgeries: list = field(default_factory=list)


@dataclass
class Dataset:
    """Signatures grouped by user; iteration order is the sorted user order."""

    users: dict
    skipped: list = field(default_factory=list)

    def __getitem__(self, user_id) -> UserSignatures:
        return self.users[user_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.users)

    def __len__(self):
        return len(self.users)

    def __contains__(self, user_id):
        return user_id in self.users

    def counts(self) -> dict:
        return {u: (len(s.genuine), len(s.forgeries)) for u, s in self.users.items()}

    def all_signatures(self) -> list:
        out = []
        for u in self.users.values():
            out.extend(u.genuine)
            out.extend(u.forgeries)
        return out


def natural_key(s: str):
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok)
            for tok in re.split(r"(\d+)", s) if tok]


def match_files(root, layout: DatasetLayout) -> list:
    """Return ``(path, user, index, label)`` for every file matching the rule."""
    root = Path(root)
    rx = layout.filename_regex()
    found = []
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        m = rx.match(p.name)
        if not m:
            continue
        index = int(m.group("index"))
        label = layout.label_for_index(index)
        if label is None:
            continue
        found.append((p, m.group("user"), index, label))
    return found


def load_dataset(root, layout: DatasetLayout = SVC2004, on_error: str = "collect") -> Dataset:
    """Parse every matching file under ``root`` into per-user buckets.

    Args:
        root: dataset directory (searched recursively).
        layout: file format and naming rule.
        on_error: ``"raise"`` stops at the first bad file, ``"collect"`` parses
            everything then raises :class:`DatasetErrors` listing all failures,
            ``"skip"`` logs failures and records them in ``Dataset.skipped``.
    """
    if on_error not in ("raise", "collect", "skip"):
        raise ValueError(f"bad on_error {on_error!r}")
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    files = match_files(root, layout)
    if not files:
        raise EmptyDataset(f"no files under {root} match {layout.filename_rule!r}")

    buckets: dict = {}
    errors = []
    for path, user, index, label in sorted(files, key=lambda f: (natural_key(f[1]), f[2], str(f[0]))):
        try:
            sig = parse_signature(path.read_bytes(), layout, path=path,
                                  user_id=user, label=label)
        except ParseError as exc:
            if on_error == "raise":
                raise
            errors.append((str(path), exc))
            continue
        b = buckets.setdefault(user, UserSignatures())
        (b.genuine if label == GENUINE else b.forgeries).append(sig)

    if errors and on_error == "collect":
        raise DatasetErrors(errors)
    for p, e in errors:
        log.warning("skipped %s: %s", p, e)
    if not buckets:
        raise EmptyDataset(f"no parsable files under {root}")
    ds = Dataset(users=buckets, skipped=errors)
    for u, (g, f) in ds.counts().items():
        log.debug("user %s: %d genuine, %d forgeries", u, g, f)
    return ds


def load_corpus(root, layout: DatasetLayout = SVC2004) -> list:
    """Every file whose name fits ``layout.filename_rule``, whatever its index or label.

    Feature learning is unsupervised, so labels are not assigned. Unparsable
    files are logged and skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    rx = layout.filename_regex()
    paths = [p for p in root.rglob("*") if p.is_file() and rx.match(p.name)]
    out = []
    for p in sorted(paths, key=lambda p: natural_key(str(p.relative_to(root)))):
        m = rx.match(p.name)
        try:
            out.append(parse_signature(p.read_bytes(), layout, path=p, user_id=m.group("user")))
        except ParseError as exc:
            log.warning("skipped %s: %s", p, exc)
    if not out:
        raise EmptyDataset(f"no parsable files under {root} match {layout.filename_rule!r}")
    return out
