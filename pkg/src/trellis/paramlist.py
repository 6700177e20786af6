"""Hierarchical, ordered, typed parameter lists.

Every solver component in :mod:`trellis` is configured through a
:class:`ParameterList`.  Entries remember whether they were ever read so that
misspelled or ignored options can be reported after a solve.
"""

from __future__ import annotations

import json
from typing import Any, Iterator, Union

__all__ = [
    "ParameterList",
    "ParameterError",
    "ParameterTypeError",
    "MAX_DEPTH",
]

MAX_DEPTH = 32

Scalar = Union[bool, int, float, str]


class ParameterError(ValueError):
    """Malformed parameter document or illegal parameter operation."""


class ParameterTypeError(ParameterError, TypeError):
    """Stored value kind does not match the kind requested by the reader."""


def _kind(value: Any) -> str:
    # bool before int: bool is an int subclass
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "real"
    if isinstance(value, str):
        return "string"
    if isinstance(value, ParameterList):
        return "list"
    raise ParameterError(f"unsupported parameter value kind: {type(value).__name__}")


class _Entry:
    __slots__ = ("value", "used")

    def __init__(self, value: Any) -> None:
        self.value = value
        self.used = False


class ParameterList:
    """Ordered mapping of names to booleans, ints, reals, strings or sublists.

    Parameters
    ----------
    name : str, optional
        Label used only in diagnostics.
    """

    def __init__(self, name: str = "ANONYMOUS", _depth: int = 0) -> None:
        self.name = name
        self._depth = _depth
        self._entries: dict[str, _Entry] = {}

    # -- construction ----------------------------------------------------
    def set(self, name: str, value: Any) -> "ParameterList":
        if not isinstance(name, str) or not name:
            raise ParameterError("parameter name must be a nonempty string")
        if isinstance(value, dict):
            value = ParameterList.from_dict(value, name=name, _depth=self._depth + 1)
        _kind(value)
        if isinstance(value, ParameterList):
            value._reparent(self._depth + 1)
        entry = self._entries.get(name)
        if entry is None:
            self._entries[name] = _Entry(value)
        else:
            # overwrite keeps the original position
            entry.value = value
            entry.used = False
        return self

    def _reparent(self, depth: int) -> None:
        if depth > MAX_DEPTH:
            raise ParameterError(f"parameter list nesting exceeds depth {MAX_DEPTH}")
        self._depth = depth
        for entry in self._entries.values():
            if isinstance(entry.value, ParameterList):
                entry.value._reparent(depth + 1)

    def sublist(self, name: str) -> "ParameterList":
        """Return the nested list ``name``, creating an empty one if absent.

        Reading a sublist marks the sublist entry as used but not its children.
        """
        entry = self._entries.get(name)
        if entry is None:
            self.set(name, ParameterList(name, _depth=self._depth + 1))
            entry = self._entries[name]
        if not isinstance(entry.value, ParameterList):
            raise ParameterTypeError(
                f"parameter {name!r} is a {_kind(entry.value)}, not a sublist"
            )
        entry.used = True
        return entry.value

    # -- reading ---------------------------------------------------------
    def get(self, name: str, default: Any = None) -> Any:
        """Return the stored value, or ``default`` when ``name`` is absent.

        The kind of ``default`` (when given) is the requested kind: a stored
        value of another kind raises :class:`ParameterTypeError`.  An integer
        satisfies a request for a real; a real never satisfies an integer
        request.
        """
        entry = self._entries.get(name)
        if entry is None:
            return default
        value = entry.value
        if default is not None:
            want, have = _kind(default), _kind(value)
            if want == "real" and have == "int":
                value = float(value)
            elif want != have:
                raise ParameterTypeError(
                    f"parameter {name!r} holds a {have} but a {want} was requested"
                )
        entry.used = True
        return value

    def __getitem__(self, name: str) -> Any:
        if name not in self._entries:
            raise KeyError(name)
        return self.get(name)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def is_sublist(self, name: str) -> bool:
        entry = self._entries.get(name)
        return entry is not None and isinstance(entry.value, ParameterList)

    def is_used(self, name: str) -> bool:
        return self._entries[name].used

    def remove(self, name: str) -> None:
        del self._entries[name]

    def unused_entries(self, prefix: str = "") -> list[str]:
        """Dotted paths of entries never read, depth-first in insertion order."""
        out: list[str] = []
        for key, entry in self._entries.items():
            path = f"{prefix}{key}"
            if isinstance(entry.value, ParameterList):
                if len(entry.value) == 0:
                    if not entry.used:
                        out.append(path)
                else:
                    out.extend(entry.value.unused_entries(path + "."))
            elif not entry.used:
                out.append(path)
        return out

    # -- (de)serialization ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            k: (e.value.to_dict() if isinstance(e.value, ParameterList) else e.value)
            for k, e in self._entries.items()
        }

    @classmethod
    def from_dict(cls, data: dict, name: str = "ANONYMOUS", _depth: int = 0) -> "ParameterList":
        if _depth > MAX_DEPTH:
            raise ParameterError(f"parameter list nesting exceeds depth {MAX_DEPTH}")
        plist = cls(name, _depth=_depth)
        for key, value in data.items():
            if isinstance(value, dict):
                value = cls.from_dict(value, name=key, _depth=_depth + 1)
            elif value is None or isinstance(value, (list, tuple)):
                raise ParameterError(
                    f"parameter {key!r}: arrays and null are not supported"
                )
            plist.set(key, value)
        return plist

    def to_text(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_text(cls, document: str | bytes) -> "ParameterList":
        if isinstance(document, bytes):
            document = document.decode("utf-8")

        def no_duplicates(pairs):
            seen = {}
            for k, v in pairs:
                if k in seen:
                    raise ParameterError(f"duplicate parameter name {k!r}")
                seen[k] = v
            return seen

        try:
            data = json.loads(document, object_pairs_hook=no_duplicates)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"malformed parameter document: {exc}") from exc
        if not isinstance(data, dict):
            raise ParameterError("parameter document must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path) -> "ParameterList":
        with open(path, "rb") as fh:
            return cls.from_text(fh.read())

    def copy(self) -> "ParameterList":
        return ParameterList.from_dict(self.to_dict(), name=self.name)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParameterList):
            return NotImplemented
        if list(self._entries) != list(other._entries):
            return False
        for key, entry in self._entries.items():
            a, b = entry.value, other._entries[key].value
            if _kind(a) != _kind(b) or a != b:
                return False
        return True

    def __repr__(self) -> str:
        return f"ParameterList({self.name!r}, {self.to_dict()!r})"


def as_parameter_list(params: Any) -> ParameterList:
    """Accept a ParameterList, a plain dict, JSON text or ``None``."""
    if params is None:
        return ParameterList()
    if isinstance(params, ParameterList):
        return params
    if isinstance(params, dict):
        return ParameterList.from_dict(params)
    if isinstance(params, (str, bytes)):
        return ParameterList.from_text(params)
    raise ParameterError(f"cannot interpret {type(params).__name__} as a parameter list")
