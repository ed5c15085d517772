"""Flow alphabets, repetition specs, search-space counting and sampling.

A flow is an ordering of a multiset of transformations: transformation ``i``
appears exactly ``reps[i]`` times, so the number of distinct flows is the
multinomial coefficient ``L! / prod(m_i!)`` with ``L = sum(reps)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    CapExceeded,
    CountExceedsSpace,
    FlowcastError,
    RepetitionMismatch,
    UnknownTransformation,
)

SEPARATOR = ";"

DEFAULT_NAMES = ("b", "rw", "rwz", "rs", "rf", "rfz")
DEFAULT_REPS = (4, 4, 4, 4, 4, 4)


@dataclass(frozen=True)
class FlowSpec:
    """Transformation alphabet plus per-transformation repetition counts.

    Row ``i`` of every encoded matrix corresponds to ``names[i]``.
    """

    names: tuple[str, ...]
    reps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(x) for x in self.names))
        object.__setattr__(self, "reps", tuple(int(m) for m in self.reps))
        if len(self.names) < 1:
            raise FlowcastError("a flow spec needs at least one transformation")
        if len(self.names) != len(self.reps):
            raise FlowcastError("names and reps must have the same length")
        if len(set(self.names)) != len(self.names):
            raise FlowcastError(f"transformation names must be unique: {self.names}")
        for name in self.names:
            if not name or SEPARATOR in name or any(ch.isspace() for ch in name) or "," in name:
                raise FlowcastError(f"invalid transformation name {name!r}")
        if any(m < 0 for m in self.reps):
            raise FlowcastError(f"repetition counts must be non-negative: {self.reps}")
        if sum(self.reps) < 1:
            raise FlowcastError("flow length must be at least 1")

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def length(self) -> int:
        return sum(self.reps)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownTransformation(f"unknown transformation {name!r}") from None

    def multiset(self) -> np.ndarray:
        """Sorted step indices with ``reps[i]`` copies of ``i``."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.reps)


def default_spec() -> FlowSpec:
    """Six ABC transformations, each repeated four times (L = 24)."""
    return FlowSpec(DEFAULT_NAMES, DEFAULT_REPS)


def uniform_spec(n: int, m: int) -> FlowSpec:
    """``n`` transformations named t0..t{n-1}, each repeated ``m`` times."""
    return FlowSpec(tuple(f"t{i}" for i in range(n)), (m,) * n)


@dataclass(frozen=True)
class Flow:
    """An ordered pass sequence; ``steps[t]`` indexes ``FlowSpec.names``."""

    steps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))

    def __len__(self):
        return len(self.steps)


def validate_flow(flow: Flow, spec: FlowSpec) -> Flow:
    counts = [0] * spec.n
    for s in flow.steps:
        if not 0 <= s < spec.n:
            raise UnknownTransformation(f"step index {s} outside alphabet of size {spec.n}")
        counts[s] += 1
    if tuple(counts) != spec.reps:
        raise RepetitionMismatch(
            f"repetition counts {tuple(counts)} do not match spec {spec.reps}"
        )
    return flow


def space_size(spec: FlowSpec) -> int:
    """Exact number of distinct flows: ``(sum m_i)! / prod(m_i!)``."""
    denom = 1
    for m in spec.reps:
        denom *= math.factorial(m)
    return math.factorial(spec.length) // denom


def _lex_permutations(counts: list[int], length: int) -> Iterator[tuple[int, ...]]:
    prefix: list[int] = []

    def rec():
        if len(prefix) == length:
            yield tuple(prefix)
            return
        for i, c in enumerate(counts):
            if c:
                counts[i] -= 1
                prefix.append(i)
                yield from rec()
                prefix.pop()
                counts[i] += 1

    yield from rec()


def enumerate_flows(spec: FlowSpec, cap: int = 1_000_000) -> list[Flow]:
    """All distinct flows in lexicographic order of step indices."""
    size = space_size(spec)
    if size > cap:
        raise CapExceeded(f"search space {size} exceeds cap {cap}")
    return [Flow(p) for p in _lex_permutations(list(spec.reps), spec.length)]


def sample_flow(spec: FlowSpec, rng: np.random.Generator) -> Flow:
    """Uniform draw over all multiset permutations (shuffle of the multiset)."""
    return Flow(rng.permutation(spec.multiset()))


def sample_unique_flows(spec: FlowSpec, count: int, rng: np.random.Generator) -> list[Flow]:
    """``count`` distinct flows, duplicates rejected by canonical string."""
    if count > space_size(spec):
        raise CountExceedsSpace(
            f"requested {count} unique flows but the space holds {space_size(spec)}"
        )
    seen: set[str] = set()
    out: list[Flow] = []
    base = spec.multiset()
    while len(out) < count:
        steps = rng.permutation(base)
        key = ",".join(map(str, steps))
        if key in seen:
            continue
        seen.add(key)
        out.append(Flow(steps))
    return out


def flow_to_string(flow: Flow, spec: FlowSpec) -> str:
    return SEPARATOR.join(spec.names[s] for s in flow.steps)


def string_to_flow(text: str, spec: FlowSpec) -> Flow:
    text = text.strip()
    tokens = [tok.strip() for tok in text.split(SEPARATOR)] if text else []
    flow = Flow(spec.index(tok) for tok in tokens)
    return validate_flow(flow, spec)


def read_flows(path, spec: FlowSpec) -> list[Flow]:
    """One flow string per line; blank lines and ``#`` comments are skipped."""
    flows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            flows.append(string_to_flow(line, spec))
        except (UnknownTransformation, RepetitionMismatch) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return flows


def write_flows(path, flows: Sequence[Flow], spec: FlowSpec, header: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header]
    lines += [flow_to_string(f, spec) for f in flows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_spec(spec: FlowSpec) -> str:
    return "".join(f"{name} {m}\n" for name, m in zip(spec.names, spec.reps))


def parse_spec(text: str) -> FlowSpec:
    """Parse ``name count`` lines (``#`` comments allowed)."""
    names, reps = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FlowcastError(f"spec line {lineno}: expected 'name count', got {line!r}")
        try:
            reps.append(int(parts[1]))
        except ValueError:
            raise FlowcastError(f"spec line {lineno}: bad repetition count {parts[1]!r}") from None
        names.append(parts[0])
    return FlowSpec(tuple(names), tuple(reps))


def read_spec(path) -> FlowSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))


def write_spec(path, spec: FlowSpec) -> None:
    Path(path).write_text(format_spec(spec), encoding="utf-8")
