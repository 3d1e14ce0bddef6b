"""Random loop nests and traces shared by several test modules."""
from __future__ import annotations

import random
import string

from staticrd.loopnest import ArrayAccess, Loop, ScalarAccess, Stmt
from staticrd.trace import ArrayRef, LoopBegin, LoopEnd, ScalarRef, make_trace

ITERATORS = ("i", "j", "k")


def perfect_nest(rng: random.Random, depth: int, lo: int = 4, hi: int = 8):
    """A perfect nest of ``depth`` loops whose body is 1-3 statements.

    Each array keeps one index tuple (a subset of the iterators in random
    order) for every reference, and a few scalar references are mixed in.
    """
    its = ITERATORS[:depth]
    arity: dict[str, tuple[str, ...]] = {}
    stmts = []
    for _ in range(rng.randint(1, 3)):
        accs = []
        for _ in range(rng.randint(1, 4)):
            if rng.random() < 0.15:
                accs.append(ScalarAccess(rng.choice("st")))
                continue
            name = rng.choice("ABCD")
            idx = arity.setdefault(name, tuple(rng.sample(its, rng.randint(1, depth))))
            accs.append(ArrayAccess(name, idx))
        stmts.append(Stmt(tuple(accs)))
    bounds = [rng.randint(lo, hi) for _ in its]
    body: tuple = tuple(stmts)
    for it, b in reversed(list(zip(its, bounds))):
        body = (Loop(it, b, body),)
    return body, bounds


def random_stream(rng: random.Random, length: int, alphabet: int) -> list[int]:
    # skewed towards recent locations so that short distances are common too
    out, hot = [], []
    for _ in range(length):
        if hot and rng.random() < 0.5:
            x = rng.choice(hot[-8:])
        else:
            x = rng.randrange(alphabet)
        out.append(x)
        hot.append(x)
    return out


def random_trace(rng: random.Random, max_tokens: int = 40):
    """A well-formed annotated trace with nested loops and array tokens."""
    toks = []
    open_iters: list[str] = []
    names = list(string.ascii_lowercase[:6])
    for _ in range(rng.randint(0, max_tokens)):
        r = rng.random()
        if r < 0.15 and len(open_iters) < 3:
            it = f"it{len(open_iters)}"
            toks += [ScalarRef(it), LoopBegin(rng.randint(1, 500))]
            open_iters.append(it)
        elif r < 0.3 and open_iters:
            toks.append(LoopEnd())
            open_iters.pop()
        elif r < 0.6 and open_iters:
            k = rng.randint(1, len(open_iters))
            toks.append(ArrayRef(rng.choice("ABC"), tuple(rng.choices(open_iters, k=k))))
        else:
            toks.append(ScalarRef(rng.choice(names)))
    toks += [LoopEnd()] * len(open_iters)
    return make_trace(toks)
