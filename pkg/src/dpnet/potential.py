"""Dense potential tables over discrete variables.

A table stores one non-negative float64 per joint configuration of its
domain. Values are kept as an n-dimensional array whose axes follow the
domain order, so the flat (C-order) view has the first domain variable
varying slowest and the last one fastest.
"""

from __future__ import annotations

import math
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DivisionByZeroError, DomainError, ZeroMassError


class PotentialTable:
    """Non-negative table ``psi(x_A)`` over an ordered domain ``A``.

    Args:
        variables: Ordered variable ids (any hashable, sortable ids).
        cards: Cardinality of each variable.
        values: Flat array of length ``prod(cards)`` or an array already
            shaped ``cards``. Defaults to all ones.
    """

    __slots__ = ("vars", "cards", "values")

    def __init__(self, variables: Sequence[Hashable], cards: Sequence[int], values=None):
        self.vars = tuple(variables)
        self.cards = tuple(int(c) for c in cards)
        if len(self.vars) != len(self.cards):
            raise DomainError("variables and cards differ in length")
        if len(set(self.vars)) != len(self.vars):
            raise DomainError(f"repeated variable in domain {self.vars}")
        if values is None:
            arr = np.ones(self.cards, dtype=np.float64)
        else:
            arr = np.asarray(values, dtype=np.float64)
            size = math.prod(self.cards)
            if arr.size != size:
                raise DomainError(f"table has {arr.size} entries, domain needs {size}")
            arr = arr.reshape(self.cards)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("potential values must be finite and non-negative")
        self.values = arr

    @classmethod
    def _wrap(cls, variables, cards, arr) -> "PotentialTable":
        # trusted constructor for results of table algebra
        t = object.__new__(cls)
        t.vars = tuple(variables)
        t.cards = tuple(cards)
        t.values = arr
        return t

    @property
    def domain(self) -> tuple[tuple[Hashable, int], ...]:
        return tuple(zip(self.vars, self.cards))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def size(self) -> int:
        return self.values.size

    def total(self) -> float:
        return float(self.values.sum())

    def card_of(self, var) -> int:
        return self.cards[self.vars.index(var)]

    def reorder(self, variables: Sequence[Hashable]) -> "PotentialTable":
        """Return the same table with axes permuted into ``variables`` order."""
        variables = tuple(variables)
        if set(variables) != set(self.vars) or len(variables) != len(self.vars):
            raise DomainError(f"{variables} is not a permutation of {self.vars}")
        perm = [self.vars.index(v) for v in variables]
        return PotentialTable._wrap(
            variables, [self.cards[i] for i in perm], np.transpose(self.values, perm)
        )

    def canonical(self) -> "PotentialTable":
        """Reorder to ascending variable id."""
        return self.reorder(sorted(self.vars))

    def allclose(self, other: "PotentialTable", rtol=1e-10, atol=0.0) -> bool:
        if set(self.vars) != set(other.vars):
            return False
        b = other.reorder(self.vars)
        return self.cards == b.cards and bool(
            np.allclose(self.values, b.values, rtol=rtol, atol=atol)
        )

    def copy(self) -> "PotentialTable":
        return PotentialTable._wrap(self.vars, self.cards, self.values.copy())

    def __repr__(self):
        dom = ", ".join(f"{v}:{c}" for v, c in self.domain)
        return f"PotentialTable({dom})"


def unity(domain: Mapping[Hashable, int] | Iterable[tuple[Hashable, int]]) -> PotentialTable:
    """All-ones table over ``domain`` (a mapping or sequence of ``(var, card)``)."""
    pairs = list(domain.items()) if isinstance(domain, Mapping) else list(domain)
    return PotentialTable([v for v, _ in pairs], [c for _, c in pairs])


def _broadcast(t: PotentialTable, variables: Sequence[Hashable]) -> np.ndarray:
    """View of ``t.values`` with axes aligned to ``variables`` (size-1 where absent)."""
    present = [v for v in variables if v in t.vars]
    arr = t.values
    if tuple(present) != t.vars:
        arr = np.transpose(arr, [t.vars.index(v) for v in present])
    shape = [t.cards[t.vars.index(v)] if v in t.vars else 1 for v in variables]
    return arr.reshape(shape)


def _union(a: PotentialTable, b: PotentialTable):
    variables = list(a.vars)
    cards = list(a.cards)
    for v, c in zip(b.vars, b.cards):
        if v in a.vars:
            if a.card_of(v) != c:
                raise DomainError(f"cardinality conflict for {v!r}: {a.card_of(v)} vs {c}")
        else:
            variables.append(v)
            cards.append(c)
    return variables, cards


def multiply(a: PotentialTable, b: PotentialTable) -> PotentialTable:
    """Pointwise product over the ordered union of both domains (a's order first)."""
    variables, cards = _union(a, b)
    arr = _broadcast(a, variables) * _broadcast(b, variables)
    return PotentialTable._wrap(variables, cards, arr)


def marginalize(a: PotentialTable, keep: Iterable[Hashable]) -> PotentialTable:
    """Sum out every variable not in ``keep``; surviving axes keep a's order."""
    keep = set(keep)
    unknown = keep - set(a.vars)
    if unknown:
        raise DomainError(f"cannot keep variables outside the domain: {sorted(unknown, key=repr)}")
    axes = tuple(i for i, v in enumerate(a.vars) if v not in keep)
    if not axes:
        return a
    kept = [(v, c) for v, c in a.domain if v in keep]
    arr = a.values.sum(axis=axes)
    return PotentialTable._wrap([v for v, _ in kept], [c for _, c in kept], np.asarray(arr))


def divide(a: PotentialTable, b: PotentialTable) -> PotentialTable:
    """Pointwise ``a / b`` with ``0/0 = 0``; ``b``'s domain must lie inside ``a``'s.

    Raises:
        DivisionByZeroError: a positive entry of ``a`` meets a zero of ``b``.
    """
    if not set(b.vars) <= set(a.vars):
        raise DomainError(f"divisor domain {b.vars} not inside {a.vars}")
    for v, c in b.domain:
        if a.card_of(v) != c:
            raise DomainError(f"cardinality conflict for {v!r}")
    num = a.values
    den = np.broadcast_to(_broadcast(b, a.vars), num.shape)
    zero = den == 0
    if np.any(zero & (num > 0)):
        raise DivisionByZeroError("positive entry divided by zero")
    out = np.divide(num, den, out=np.zeros_like(num), where=~zero)
    return PotentialTable._wrap(a.vars, a.cards, out)


def normalize(a: PotentialTable) -> tuple[PotentialTable, float]:
    """Scale ``a`` to unit mass; returns ``(normalized, original_mass)``."""
    mass = a.total()
    if not mass > 0:
        raise ZeroMassError("cannot normalize a table with zero total mass")
    return PotentialTable._wrap(a.vars, a.cards, a.values / mass), mass


def scale(a: PotentialTable, factor: float) -> PotentialTable:
    return PotentialTable._wrap(a.vars, a.cards, a.values * factor)


def finding_vector(card: int, state: int | None = None, likelihood=None) -> np.ndarray:
    """Likelihood vector for a hard finding (``state``) or a soft one."""
    if (state is None) == (likelihood is None):
        raise DomainError("give exactly one of state or likelihood")
    if state is not None:
        if not 0 <= state < card:
            raise DomainError(f"state index {state} out of range for cardinality {card}")
        vec = np.zeros(card)
        vec[state] = 1.0
        return vec
    vec = np.asarray(likelihood, dtype=np.float64)
    if vec.shape != (card,):
        raise DomainError(f"likelihood has length {vec.size}, variable has {card} states")
    if not np.all(np.isfinite(vec)) or np.any(vec < 0) or not np.any(vec > 0):
        raise DomainError("likelihood entries must be non-negative with one positive")
    return vec


def reduce_by_evidence(a: PotentialTable, var, state: int | None = None, likelihood=None) -> PotentialTable:
    """Enter a hard or likelihood finding on ``var`` into ``a``."""
    if var not in a.vars:
        raise DomainError(f"{var!r} not in domain {a.vars}")
    vec = finding_vector(a.card_of(var), state, likelihood)
    return multiply(a, PotentialTable._wrap((var,), (vec.size,), vec))
