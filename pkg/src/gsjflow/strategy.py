"""Sampling-plan notation: ``[Stack-GS-J-Else]``.

``Stack`` lists the block indices to segment, ``GS`` the number of equal
modules per stacked block, ``J`` the parallel-sweep budget per module, and
``Else`` the sweep budget for every other block. Stack, GS, and J are
"/"-separated integer lists; a singleton GS or J broadcasts across a
multi-block stack, e.g. ``[0/6-1024-1-10]``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import StrategyFormatError

_INT = re.compile(r"\d+$")


@dataclass(frozen=True)
class Strategy:
    stack: tuple[int, ...]
    gs: tuple[int, ...]
    j: tuple[int, ...]
    else_j: int

    def __post_init__(self) -> None:
        if not (len(self.stack) == len(self.gs) == len(self.j)):
            raise StrategyFormatError(
                f"stack/gs/j lengths differ: {len(self.stack)}/{len(self.gs)}/{len(self.j)}")
        if len(set(self.stack)) != len(self.stack):
            raise StrategyFormatError(f"duplicate stack indices in {self.stack}")
        if any(b < 0 for b in self.stack):
            raise StrategyFormatError("stack indices must be >= 0")
        if any(g < 1 for g in self.gs) or any(j < 1 for j in self.j):
            raise StrategyFormatError("GS and J counts must be >= 1")
        if self.else_j < 1:
            raise StrategyFormatError("Else budget must be >= 1")


def _parse_list(text: str, what: str) -> tuple[int, ...]:
    parts = text.split("/")
    values = []
    for part in parts:
        if not _INT.match(part):
            raise StrategyFormatError(f"{what} entry {part!r} is not an integer")
        values.append(int(part))
    return tuple(values)


def _broadcast(values: tuple[int, ...], n: int, what: str) -> tuple[int, ...]:
    if len(values) == n:
        return values
    if len(values) == 1:
        return values * n
    raise StrategyFormatError(
        f"{what} has {len(values)} entries for a {n}-block stack")


def parse_strategy(text: str) -> Strategy:
    """Parse ``[Stack-GS-J-Else]`` text into a canonical Strategy."""
    if not isinstance(text, str):
        raise StrategyFormatError(f"strategy must be text, got {type(text).__name__}")
    s = text.strip()
    if not (s.startswith("[") and s.endswith("]")):
        raise StrategyFormatError(f"strategy {text!r} must be bracketed")
    body = s[1:-1]
    fields = body.split("-")
    if len(fields) != 4:
        raise StrategyFormatError(
            f"strategy {text!r} needs 4 dash-separated fields, got {len(fields)}")
    stack = _parse_list(fields[0], "Stack")
    gs = _parse_list(fields[1], "GS")
    j = _parse_list(fields[2], "J")
    if not _INT.match(fields[3]):
        raise StrategyFormatError(f"Else field {fields[3]!r} is not an integer")
    else_j = int(fields[3])
    n = len(stack)
    return Strategy(stack=stack,
                    gs=_broadcast(gs, n, "GS"),
                    j=_broadcast(j, n, "J"),
                    else_j=else_j)


def _fmt_list(values: tuple[int, ...]) -> str:
    if len(values) > 1 and len(set(values)) == 1:
        return str(values[0])
    return "/".join(str(v) for v in values)


def format_strategy(strategy: Strategy) -> str:
    """Canonical text for a Strategy; parse(format(s)) == s."""
    return (f"[{_fmt_list(strategy.stack)}-{_fmt_list(strategy.gs)}-"
            f"{_fmt_list(strategy.j)}-{strategy.else_j}]")
