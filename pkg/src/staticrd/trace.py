"""Loop-annotated trace tokens, the text format, and block separation.

The text form is a bracketed list of single-quoted tokens::

    ['alpha', 'i', '[100', 'i', 'k', 'A_array-i-k', ']']

``'[N'`` opens a loop with trip count N, ``']'`` closes it, ``name_array-i-j``
is an array reference indexed by iterators and any other identifier is a
scalar reference. A loop's iterator is the scalar token right before its
``'[N'``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Union

from .errors import BadTripCount, MalformedToken, UnbalancedLoops

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_IDENT_RE = re.compile(rf"^{_IDENT}$")
_ARRAY_RE = re.compile(rf"^({_IDENT})_array((?:-{_IDENT})+)$")
_QUOTED_RE = re.compile(r"'([^']*)'")
_LIST_RE = re.compile(r"^'[^']*'(?:\s*,\s*'[^']*')*\s*,?$")


@dataclass(frozen=True)
class ScalarRef:
    name: str


@dataclass(frozen=True)
class LoopBegin:
    trip_count: int
    # Bound by parse_trace from the preceding scalar; not part of identity.
    iterator: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class LoopEnd:
    pass


@dataclass(frozen=True)
class ArrayRef:
    array: str
    indices: tuple[str, ...]

    def __post_init__(self):
        if not self.indices:
            raise MalformedToken(f"array reference {self.array!r} has no indices")


Token = Union[ScalarRef, LoopBegin, LoopEnd, ArrayRef]


@dataclass(frozen=True)
class AnnotatedTrace:
    tokens: tuple[Token, ...] = ()

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


class BlockKind(str, Enum):
    PLAIN = "plain"
    LOOP = "loop"


@dataclass(frozen=True)
class Block:
    kind: BlockKind
    tokens: tuple[Token, ...]
    depth: int
    ordinal: int


def token_text(tok: Token) -> str:
    if isinstance(tok, ScalarRef):
        return tok.name
    if isinstance(tok, LoopBegin):
        return f"[{tok.trip_count}"
    if isinstance(tok, LoopEnd):
        return "]"
    if isinstance(tok, ArrayRef):
        return f"{tok.array}_array-" + "-".join(tok.indices)
    raise TypeError(f"not a token: {tok!r}")


def parse_token(text: str) -> Token:
    if text == "]":
        return LoopEnd()
    if text.startswith("["):
        count = text[1:]
        if not count.isdigit() or int(count) < 1:
            raise BadTripCount(f"bad trip count in token {text!r}")
        return LoopBegin(int(count))
    m = _ARRAY_RE.match(text)
    if m:
        return ArrayRef(m.group(1), tuple(m.group(2)[1:].split("-")))
    if _IDENT_RE.match(text) and not text.endswith("_array"):
        return ScalarRef(text)
    raise MalformedToken(f"unrecognized token {text!r}")


def _lexemes(text: str) -> list[str]:
    body = text.strip()
    if not body:
        return []
    if body.startswith("[") and body[1:].lstrip()[:1] in ("'", "]"):
        if not body.endswith("]"):
            raise MalformedToken("trace list is missing its closing ']'")
        inner = body[1:-1].strip()
        if not inner:
            return []
        if not _LIST_RE.match(inner):
            raise MalformedToken(f"not a comma-separated list of quoted tokens: {inner[:40]!r}")
        return _QUOTED_RE.findall(inner)
    # one token per line, quotes optional
    out = []
    for line in body.splitlines():
        line = line.strip().rstrip(",").strip()
        if not line:
            continue
        if len(line) >= 2 and line[0] == line[-1] == "'":
            line = line[1:-1]
        out.append(line)
    return out


def bind_iterators(tokens: Iterable[Token]) -> tuple[Token, ...]:
    """Attach to each LoopBegin the name of the scalar token preceding it."""
    out: list[Token] = []
    prev: Token | None = None
    for tok in tokens:
        if isinstance(tok, LoopBegin):
            it = prev.name if isinstance(prev, ScalarRef) else None
            tok = LoopBegin(tok.trip_count, it)
        out.append(tok)
        prev = tok
    return tuple(out)


def check_balanced(tokens: Iterable[Token]) -> None:
    level = 0
    for pos, tok in enumerate(tokens):
        if isinstance(tok, LoopBegin):
            level += 1
        elif isinstance(tok, LoopEnd):
            if level == 0:
                raise UnbalancedLoops(f"']' at token {pos} closes no loop")
            level -= 1
    if level:
        raise UnbalancedLoops(f"{level} loop(s) left open at end of trace")


def make_trace(tokens: Iterable[Token]) -> AnnotatedTrace:
    toks = bind_iterators(tokens)
    check_balanced(toks)
    return AnnotatedTrace(toks)


def parse_trace(text: str) -> AnnotatedTrace:
    return make_trace(parse_token(lx) for lx in _lexemes(text))


def serialize_trace(trace: AnnotatedTrace | Iterable[Token]) -> str:
    tokens = trace.tokens if isinstance(trace, AnnotatedTrace) else tuple(trace)
    return "[" + ", ".join(f"'{token_text(t)}'" for t in tokens) + "]"


def trace_iterators(trace: AnnotatedTrace) -> frozenset[str]:
    """Names used as loop iterators anywhere in the trace."""
    return frozenset(t.iterator for t in trace.tokens if isinstance(t, LoopBegin) and t.iterator)


def _span_depth(tokens) -> int:
    level = best = 0
    for tok in tokens:
        if isinstance(tok, LoopBegin):
            level += 1
            best = max(best, level)
        elif isinstance(tok, LoopEnd):
            level -= 1
    return best


def separate_blocks(trace: AnnotatedTrace) -> list[Block]:
    """Split into maximal top-level loop spans and the plain runs between them."""
    blocks: list[Block] = []
    plain: list[Token] = []
    loop: list[Token] = []
    level = 0

    def emit(kind, toks):
        depth = _span_depth(toks) if kind is BlockKind.LOOP else 0
        blocks.append(Block(kind, tuple(toks), depth, len(blocks)))

    for tok in trace.tokens:
        if level == 0 and not isinstance(tok, LoopBegin):
            if isinstance(tok, LoopEnd):
                raise UnbalancedLoops("']' outside any loop")
            plain.append(tok)
            continue
        if level == 0:
            if plain:
                emit(BlockKind.PLAIN, plain)
                plain = []
        loop.append(tok)
        if isinstance(tok, LoopBegin):
            level += 1
        elif isinstance(tok, LoopEnd):
            level -= 1
            if level == 0:
                emit(BlockKind.LOOP, loop)
                loop = []
    if level:
        raise UnbalancedLoops("unclosed loop at end of trace")
    if plain:
        emit(BlockKind.PLAIN, plain)
    return blocks
