"""Non-nested reachability properties over state labels and their exact checking."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .model import ConvergenceError, Dtmc


class Kind(Enum):
    EVENTUALLY = "F"
    GLOBALLY = "G"
    UNTIL = "U"


@dataclass(frozen=True)
class PropertySpec:
    """``P=? [ F<=k target ]``, ``G<=k target`` or ``left U<=k target``.

    ``bound`` is the number of steps; None means unbounded. Predicates are
    sets of symbols: a state satisfies one when its label is in the set.
    """

    kind: Kind
    target: frozenset[str]
    left: frozenset[str] | None = None
    bound: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "target", frozenset(self.target))
        if self.left is not None:
            object.__setattr__(self, "left", frozenset(self.left))
        if self.kind is Kind.UNTIL and self.left is None:
            raise ValueError("until needs a left predicate")
        if self.kind is not Kind.UNTIL and self.left is not None:
            raise ValueError(f"{self.kind.name.lower()} takes no left predicate")
        if self.bound is not None and self.bound < 0:
            raise ValueError("bound must be >= 0")

    @classmethod
    def eventually(cls, target, bound=None):
        return cls(Kind.EVENTUALLY, frozenset(target), None, bound)

    @classmethod
    def globally(cls, target, bound=None):
        return cls(Kind.GLOBALLY, frozenset(target), None, bound)

    @classmethod
    def until(cls, left, target, bound=None):
        return cls(Kind.UNTIL, frozenset(target), frozenset(left), bound)

    def __str__(self):
        op = self.kind.value + ("" if self.bound is None else f"<={self.bound}")
        body = f"{op} {_fmt_pred(self.target)}"
        if self.kind is Kind.UNTIL:
            body = f"{_fmt_pred(self.left)} {body}"
        return f"P=? [ {body} ]"

    def holds_on(self, word: Sequence[str]) -> bool:
        """Whether a finite label sequence witnesses the property.

        ``word`` must cover steps ``0..bound``; for globally, a shorter word
        is treated as the full horizon.
        """
        horizon = word if self.bound is None else word[: self.bound + 1]
        if self.kind is Kind.EVENTUALLY:
            return any(s in self.target for s in horizon)
        if self.kind is Kind.GLOBALLY:
            return all(s in self.target for s in horizon)
        for s in horizon:
            if s in self.target:
                return True
            if s not in self.left:
                return False
        return False


def _fmt_pred(pred: frozenset[str]) -> str:
    if len(pred) == 1:
        return f'"{next(iter(pred))}"'
    return "{" + ",".join(sorted(pred)) + "}"


_PRED = r'(?:"[^"]*"|\{[^}]*\})'
_BOUND = r"(?:<=\s*(\d+))?"
_UNARY = re.compile(rf"^([FG])\s*{_BOUND}\s*({_PRED})$")
_UNTIL = re.compile(rf"^({_PRED})\s*U\s*{_BOUND}\s*({_PRED})$")


def parse_property(text: str) -> PropertySpec:
    """Parse ``P=? [ F<=5 "a" ]``, ``G {a,b}``, ``"a" U<=3 {b}`` and friends."""
    body = text.strip()
    wrapped = re.match(r"^P\s*=\s*\?\s*\[(.*)\]$", body, re.S)
    if wrapped:
        body = wrapped.group(1).strip()
    m = _UNARY.match(body)
    if m:
        op, bound, pred = m.groups()
        kind = Kind.EVENTUALLY if op == "F" else Kind.GLOBALLY
        return PropertySpec(kind, _parse_pred(pred), None, _int_or_none(bound))
    m = _UNTIL.match(body)
    if m:
        left, bound, right = m.groups()
        return PropertySpec(Kind.UNTIL, _parse_pred(right), _parse_pred(left), _int_or_none(bound))
    raise ValueError(f"cannot parse property: {text!r}")


def _parse_pred(text: str) -> frozenset[str]:
    if text.startswith('"'):
        return frozenset([text[1:-1]])
    items = [t.strip().strip('"') for t in text[1:-1].split(",")]
    return frozenset(t for t in items if t)


def _int_or_none(text):
    return None if text is None else int(text)


def check_property(d: Dtmc, p: PropertySpec, tol: float = 1e-12, max_iter: int = 1_000_000) -> float:
    """Probability that a path from ``d.init`` satisfies ``p``.

    Bounded properties use ``bound`` backward steps; unbounded ones run value
    iteration from below after zeroing states that cannot reach the target.
    """
    if p.kind is Kind.GLOBALLY:
        violation = ~d.label_mask(p.target)
        return 1.0 - _until_probability(d, np.ones(d.n, dtype=bool), violation, p.bound, tol, max_iter)
    left = np.ones(d.n, dtype=bool) if p.kind is Kind.EVENTUALLY else d.label_mask(p.left)
    return _until_probability(d, left, d.label_mask(p.target), p.bound, tol, max_iter)


def _until_probability(d, left, right, bound, tol, max_iter) -> float:
    trans = d.trans
    x = right.astype(np.float64)
    cont = left & ~right
    if bound is not None:
        for _ in range(bound):
            x = np.where(right, 1.0, np.where(cont, trans @ x, 0.0))
        return float(np.clip(d.init @ x, 0.0, 1.0))

    cont &= _can_reach(d, cont, right)
    for _ in range(max_iter):
        nxt = np.where(right, 1.0, np.where(cont, trans @ x, 0.0))
        if np.max(np.abs(nxt - x)) <= tol:
            return float(np.clip(d.init @ nxt, 0.0, 1.0))
        x = nxt
    raise ConvergenceError(f"value iteration did not converge within {max_iter} iterations")


def _can_reach(d: Dtmc, through: np.ndarray, target: np.ndarray) -> np.ndarray:
    """States that reach ``target`` with positive probability via ``through`` states."""
    reverse = (d.trans > 0).T.tocsr()
    seen = target.copy()
    frontier = np.flatnonzero(target)
    while frontier.size:
        preds = np.unique(reverse[frontier].indices)
        preds = preds[through[preds] & ~seen[preds]]
        seen[preds] = True
        frontier = preds
    return seen
