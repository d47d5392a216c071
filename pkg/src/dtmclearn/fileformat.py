"""Plain-text DTMC files.

Layout::

    dtmc <n> <num symbols>
    symbols <tok0> <tok1> ...
    labels <symbol id per state>
    init <p0> ... <p(n-1)>
    <src> <dst> <prob>          # one line per nonzero transition

Probabilities are written with ``repr`` (shortest round-trip decimal), so a
write/read cycle is bit-exact. Lines starting with ``#`` are ignored.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import sparse

from .model import Alphabet, Dtmc


class FormatError(ValueError):
    pass


def dumps(d: Dtmc) -> str:
    lines = [
        f"dtmc {d.n} {len(d.alphabet)}",
        "symbols " + " ".join(d.alphabet.symbols),
        "labels " + " ".join(str(int(x)) for x in d.labels),
        "init " + " ".join(repr(float(x)) for x in d.init),
    ]
    coo = d.trans.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        if v != 0:
            lines.append(f"{r} {c} {float(v)!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Dtmc:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) < 4:
        raise FormatError("truncated model file")
    header, symbols, labels, init = rows[:4]
    if header[0] != "dtmc" or len(header) != 3:
        raise FormatError(f"bad header: {' '.join(header)!r}")
    n, k = int(header[1]), int(header[2])
    for row, key, size in ((symbols, "symbols", k), (labels, "labels", n), (init, "init", n)):
        if row[0] != key:
            raise FormatError(f"expected '{key}' line, got {row[0]!r}")
        if len(row) - 1 != size:
            raise FormatError(f"'{key}' line has {len(row) - 1} entries, expected {size}")
    src, dst, prob = [], [], []
    for row in rows[4:]:
        if len(row) != 3:
            raise FormatError(f"bad transition line: {' '.join(row)!r}")
        s, t = int(row[0]), int(row[1])
        if not (0 <= s < n and 0 <= t < n):
            raise FormatError(f"transition {s} -> {t} out of range")
        src.append(s)
        dst.append(t)
        prob.append(float(row[2]))
    trans = sparse.csr_array((prob, (src, dst)), shape=(n, n))
    return Dtmc(Alphabet(tuple(symbols[1:])), [float(x) for x in init[1:]], trans, [int(x) for x in labels[1:]])


def write_dtmc(d: Dtmc, path) -> None:
    Path(path).write_text(dumps(d), encoding="utf-8")


def read_dtmc(path) -> Dtmc:
    return loads(Path(path).read_text(encoding="utf-8"))
