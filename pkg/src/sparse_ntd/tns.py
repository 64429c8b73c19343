"""Reader and writer for the TNS1 dense tensor text format.

Layout::

    TNS1 N
    I_1 I_2 ... I_N
    v_1 v_2 ... (prod I_n values, first index fastest)

Values are written with 17 significant digits so a round trip is exact.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .tensor import MAX_ORDER, unvec, vec

MAGIC = "TNS1"


class TNSFormatError(ValueError):
    """Malformed TNS1 content; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, path: str | None = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}byte {offset}: {message}")


_TOKEN = re.compile(rb"\S+")


def loads(data: bytes | str, path: str | None = None) -> np.ndarray:
    if isinstance(data, str):
        data = data.encode()
    tokens = _TOKEN.finditer(data)

    def take(what: str):
        try:
            return next(tokens)
        except StopIteration:
            raise TNSFormatError(f"unexpected end of data, expected {what}", len(data), path)

    def integer(tok, what: str) -> int:
        try:
            return int(tok.group())
        except ValueError:
            raise TNSFormatError(f"expected {what}, got {tok.group()[:20]!r}", tok.start(), path)

    tok = take("header")
    if tok.group() != MAGIC.encode():
        raise TNSFormatError(f"bad magic {tok.group()[:20]!r}, expected {MAGIC!r}", tok.start(), path)
    tok = take("tensor order")
    order = integer(tok, "tensor order")
    if not 1 <= order <= MAX_ORDER:
        raise TNSFormatError(f"order {order} outside 1..{MAX_ORDER}", tok.start(), path)
    dims = []
    for _ in range(order):
        tok = take("dimension")
        d = integer(tok, "dimension")
        if d < 1:
            raise TNSFormatError(f"dimension {d} must be positive", tok.start(), path)
        dims.append(d)
    count = int(np.prod(dims, dtype=np.int64))
    values = np.empty(count)
    for i in range(count):
        tok = take(f"value {i + 1} of {count}")
        try:
            values[i] = float(tok.group())
        except ValueError:
            raise TNSFormatError(f"bad value {tok.group()[:20]!r}", tok.start(), path)
    extra = next(tokens, None)
    if extra is not None:
        raise TNSFormatError("trailing data after the last value", extra.start(), path)
    return unvec(values, dims)


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read(), path=str(path))


def dumps(x: np.ndarray) -> str:
    x = np.asarray(x, dtype=np.float64)
    lines = [f"{MAGIC} {x.ndim}", " ".join(str(d) for d in x.shape)]
    lines.extend(f"{v:.17g}" for v in vec(x))
    return "\n".join(lines) + "\n"


def save(path: str | os.PathLike, x: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(x))
