"""Pareto genetic programming over forecast-combination expressions.

Expression trees combine source variables and free constant slots with
add, subtract, multiply, protected divide, max and min. Constants are
fitted to observations on every evaluation: exactly (least squares) when
the tree is linear in all its constant slots, otherwise by multi-start
coordinate pattern search. Evolution keeps an archive of forms that are
non-dominated in (sum of squared errors, node count).

Everything is seeded and sequential: the same seed yields a byte
identical archive.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyOverlap, UnboundVariable
from .series import TimeSeries

OPERATORS = ("+", "-", "*", "/", "max", "min")

DIV_CLAMP = 1e-6
DEFAULT_MAX_DEPTH = 7

# Trees with more slots than this are evaluated with zero constants; the
# complexity objective retires them anyway and fitting them is costly.
_MAX_FITTED_SLOTS = 8


@dataclass(frozen=True)
class Node:
    """One node of an expression tree.

    kind is "var" (label = source id), "const" (slot = constant index,
    -1 until the tree is canonicalised) or "op" (label = operator,
    exactly two children).
    """

    kind: str
    label: str = ""
    slot: int = -1
    children: tuple["Node", ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "op":
            if self.label not in OPERATORS:
                raise ValueError(f"unknown operator {self.label!r}")
            if len(self.children) != 2:
                raise ValueError("operators take exactly two children")
        elif self.kind not in ("var", "const"):
            raise ValueError(f"unknown node kind {self.kind!r}")


def var(name: str) -> Node:
    return Node("var", label=name)


def const(slot: int = -1) -> Node:
    return Node("const", slot=slot)


def op(symbol: str, left: Node, right: Node) -> Node:
    return Node("op", label=symbol, children=(left, right))


def _walk(node: Node):
    yield node
    for child in node.children:
        yield from _walk(child)


def _depth(node: Node) -> int:
    if not node.children:
        return 1
    return 1 + max(_depth(c) for c in node.children)


def _count(node: Node) -> int:
    return sum(1 for _ in _walk(node))


def canonicalize(root: Node) -> tuple[Node, int]:
    """Renumber constant slots in prefix order; returns (tree, slot count)."""
    counter = 0

    def rebuild(node: Node) -> Node:
        nonlocal counter
        if node.kind == "const":
            node = Node("const", slot=counter)
            counter += 1
            return node
        if node.kind == "op":
            return Node("op", label=node.label,
                        children=tuple(rebuild(c) for c in node.children))
        return node

    return rebuild(root), counter


@dataclass(frozen=True)
class ExprForm:
    """An expression tree plus its fitted constants."""

    root: Node
    constants: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        slots = [n.slot for n in _walk(self.root) if n.kind == "const"]
        if any(s < 0 for s in slots):
            root, n_slots = canonicalize(self.root)
            object.__setattr__(self, "root", root)
            slots = list(range(n_slots))
        n_slots = max(slots) + 1 if slots else 0
        constants = tuple(float(c) for c in self.constants)
        if len(constants) < n_slots:
            constants = constants + (0.0,) * (n_slots - len(constants))
        object.__setattr__(self, "constants", constants)

    @property
    def n_slots(self) -> int:
        slots = [n.slot for n in _walk(self.root) if n.kind == "const"]
        return max(slots) + 1 if slots else 0

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(n.label for n in _walk(self.root) if n.kind == "var")

    @property
    def depth(self) -> int:
        return _depth(self.root)

    def with_constants(self, constants: Sequence[float]) -> "ExprForm":
        return replace(self, constants=tuple(float(c) for c in constants))

    def __str__(self) -> str:
        return format_form(self)


def complexity(form: ExprForm) -> int:
    """Node count of the tree; the second Pareto objective."""
    return _count(form.root)


def _protected_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    clamped = np.where(den >= 0, np.maximum(den, DIV_CLAMP), np.minimum(den, -DIV_CLAMP))
    return num / clamped


def _eval(node: Node, env: Mapping[str, np.ndarray], constants: Sequence[float]):
    if node.kind == "var":
        if node.label not in env:
            raise UnboundVariable(f"variable {node.label!r} is not bound")
        return env[node.label]
    if node.kind == "const":
        return constants[node.slot]
    left = _eval(node.children[0], env, constants)
    right = _eval(node.children[1], env, constants)
    symbol = node.label
    if symbol == "+":
        return left + right
    if symbol == "-":
        return left - right
    if symbol == "*":
        return left * right
    if symbol == "/":
        return _protected_divide(np.asarray(left, dtype=float), np.asarray(right, dtype=float))
    if symbol == "max":
        return np.maximum(left, right)
    return np.minimum(left, right)


def evaluate_form(form: ExprForm, sources: Mapping[str, TimeSeries]) -> TimeSeries:
    """Pointwise evaluation over the common grid of the bound sources."""
    if not sources:
        raise UnboundVariable("no sources supplied")
    missing = form.variables - set(sources)
    if missing:
        raise UnboundVariable(f"variables not bound: {sorted(missing)}")
    series = list(sources.values())
    steps = {s.step_hours for s in series}
    if len(steps) != 1:
        raise ValueError(f"mixed sampling steps {sorted(steps)}")
    step = steps.pop()
    lo = max(s.start_hour for s in series)
    hi = min(s.end_hour for s in series)
    if lo > hi:
        raise EmptyOverlap("sources share no common grid")
    n = (hi - lo) // step + 1
    env = {
        sid: s.values[(lo - s.start_hour) // step:][:n] for sid, s in sources.items()
    }
    values = _eval(form.root, env, form.constants)
    return TimeSeries(lo, np.broadcast_to(np.asarray(values, dtype=float), (n,)), step)


def _has_const(node: Node) -> bool:
    return any(n.kind == "const" for n in _walk(node))


def _linear_in_constants(node: Node) -> bool:
    if node.kind in ("var", "const"):
        return True
    left, right = node.children
    symbol = node.label
    if symbol in ("+", "-"):
        return _linear_in_constants(left) and _linear_in_constants(right)
    if symbol == "*":
        if _has_const(left) and _has_const(right):
            return False
        return _linear_in_constants(left) and _linear_in_constants(right)
    if symbol == "/":
        return _linear_in_constants(left) and not _has_const(right)
    # max/min of constant-bearing branches breaks linearity
    return not _has_const(node)


def _sse(form_root: Node, env, target, constants) -> float:
    values = _eval(form_root, env, constants)
    residual = np.broadcast_to(np.asarray(values, dtype=float), target.shape) - target
    return float(residual @ residual)


def _fit_exact(root: Node, n_slots: int, env, target) -> tuple[float, ...]:
    zero = np.zeros(n_slots)
    base = np.broadcast_to(
        np.asarray(_eval(root, env, zero), dtype=float), target.shape
    ).copy()
    columns = []
    for k in range(n_slots):
        unit = zero.copy()
        unit[k] = 1.0
        col = np.broadcast_to(np.asarray(_eval(root, env, unit), dtype=float), target.shape)
        columns.append(col - base)
    design = np.column_stack(columns)
    solution, *_ = np.linalg.lstsq(design, target - base, rcond=None)
    return tuple(float(c) for c in solution)


def _pattern_search(objective, start: np.ndarray, iterations: int, tol: float):
    current = start.astype(float).copy()
    best = objective(current)
    deltas = np.ones(len(current))
    for _ in range(iterations):
        moved = False
        for k in range(len(current)):
            for sign in (1.0, -1.0):
                trial = current.copy()
                trial[k] += sign * deltas[k]
                value = objective(trial)
                if value < best - 1e-15:
                    current, best = trial, value
                    deltas[k] *= 2.0
                    moved = True
                    break
        if not moved:
            deltas *= 0.5
            if deltas.max() < tol:
                break
    return current, best


def fit_constants_arrays(
    form: ExprForm,
    env: Mapping[str, np.ndarray],
    target: np.ndarray,
    restarts: int = 5,
    iterations: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
) -> tuple[float, ...]:
    """Fit the form's constants against a target sample array."""
    n_slots = form.n_slots
    if n_slots == 0:
        return ()
    target = np.asarray(target, dtype=float)
    if target.size == 0:
        raise EmptyOverlap("no samples to fit constants against")
    if _linear_in_constants(form.root):
        return _fit_exact(form.root, n_slots, env, target)

    def objective(c: np.ndarray) -> float:
        return _sse(form.root, env, target, c)

    rng = np.random.default_rng(seed)
    starts = [np.zeros(n_slots)]
    for _ in range(restarts):
        starts.append(rng.normal(0.0, 1.0, n_slots))
    best_c, best_sse = None, np.inf
    for start in starts:
        c, sse = _pattern_search(objective, start, iterations, tol)
        if sse < best_sse:
            best_c, best_sse = c, sse
    return tuple(float(x) for x in best_c)


def fit_constants(
    form: ExprForm,
    sources: Mapping[str, TimeSeries],
    obs: TimeSeries,
    restarts: int = 5,
    iterations: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
) -> tuple[float, ...]:
    """Fit constants so the form tracks the observations over the overlap."""
    if form.n_slots == 0:
        return ()
    names = sorted(form.variables)
    missing = [n for n in names if n not in sources]
    if missing:
        raise UnboundVariable(f"variables not bound: {missing}")
    from .ensemble import joint_overlap

    _, cols, target = joint_overlap([sources[n] for n in names], obs)
    if len(target) == 0:
        raise EmptyOverlap("sources and observations do not overlap")
    env = dict(zip(names, cols))
    return fit_constants_arrays(form, env, target, restarts, iterations, tol, seed)


# --- S-expression round trip ---

def _format_node(node: Node) -> str:
    if node.kind == "var":
        return node.label
    if node.kind == "const":
        return f"C{node.slot}"
    parts = " ".join(_format_node(c) for c in node.children)
    return f"({node.label} {parts})"


def format_form(form: ExprForm) -> str:
    return _format_node(form.root)


def parse_form(text: str, constants: Sequence[float] = ()) -> ExprForm:
    """Parse a prefix S-expression such as ``(- (* C0 h b) C1)``.

    Operators written with more than two arguments fold from the left.
    """
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0

    def parse() -> Node:
        nonlocal pos
        token = tokens[pos]
        pos += 1
        if token == "(":
            symbol = tokens[pos]
            pos += 1
            args = []
            while tokens[pos] != ")":
                args.append(parse())
            pos += 1
            if len(args) < 2:
                raise ValueError(f"operator {symbol!r} needs at least two arguments")
            node = args[0]
            for arg in args[1:]:
                node = op(symbol, node, arg)
            return node
        if token == ")":
            raise ValueError("unbalanced parentheses")
        if len(token) > 1 and token[0] == "C" and token[1:].isdigit():
            return const(int(token[1:]))
        return var(token)

    root = parse()
    if pos != len(tokens):
        raise ValueError("trailing tokens in expression")
    return ExprForm(root, tuple(constants))


# --- Pareto archive ---

@dataclass(frozen=True)
class ArchiveEntry:
    form: ExprForm
    error: float
    complexity: int

    def __post_init__(self) -> None:
        if self.error < 0 or self.complexity < 1:
            raise ValueError("error must be >= 0 and complexity >= 1")

    def to_dict(self) -> dict:
        return {
            "form": format_form(self.form),
            "constants": list(self.form.constants),
            "error": self.error,
            "complexity": self.complexity,
        }


def _dominates(a: ArchiveEntry, b: ArchiveEntry) -> bool:
    return (
        a.error <= b.error
        and a.complexity <= b.complexity
        and (a.error < b.error or a.complexity < b.complexity)
    )


@dataclass(frozen=True)
class ParetoArchive:
    """Mutually non-dominated (form, error, complexity) entries."""

    entries: tuple[ArchiveEntry, ...] = ()

    def __post_init__(self) -> None:
        for i, a in enumerate(self.entries):
            for j, b in enumerate(self.entries):
                if i != j and _dominates(a, b):
                    raise ValueError("archive contains dominated entries")

    def __len__(self) -> int:
        return len(self.entries)

    def best_error(self) -> ArchiveEntry:
        return min(self.entries, key=lambda e: (e.error, e.complexity))

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], sort_keys=True)


def pareto_insert(archive: ParetoArchive, entry: ArchiveEntry) -> ParetoArchive:
    """Insert unless dominated; evict members the entry dominates.

    A candidate tying an existing member on both objectives is rejected,
    keeping the earlier member.
    """
    for member in archive.entries:
        if _dominates(member, entry):
            return archive
        if member.error == entry.error and member.complexity == entry.complexity:
            return archive
    kept = tuple(m for m in archive.entries if not _dominates(entry, m))
    entries = sorted(kept + (entry,), key=lambda e: (e.complexity, e.error))
    return ParetoArchive(tuple(entries))


# --- evolution ---

@dataclass(frozen=True)
class GPConfig:
    seed: int
    population: int = 200
    generations: int = 50
    max_depth: int = DEFAULT_MAX_DEPTH
    tournament_size: int = 4
    p_crossover: float = 0.8
    p_mutation: float = 0.2
    p_const_terminal: float = 0.3
    const_restarts: int = 2
    const_iterations: int = 40


@dataclass
class _Evolver:
    variables: list[str]
    env: Mapping[str, np.ndarray]
    target: np.ndarray
    config: GPConfig
    rng: random.Random
    cache: dict[str, tuple[float, tuple[float, ...]]] = field(default_factory=dict)

    def terminal(self) -> Node:
        if self.rng.random() < self.config.p_const_terminal:
            return const()
        return var(self.rng.choice(self.variables))

    def grow(self, depth: int) -> Node:
        if depth <= 1 or self.rng.random() < 0.3:
            return self.terminal()
        symbol = self.rng.choice(OPERATORS)
        return op(symbol, self.grow(depth - 1), self.grow(depth - 1))

    def full(self, depth: int) -> Node:
        if depth <= 1:
            return self.terminal()
        symbol = self.rng.choice(OPERATORS)
        return op(symbol, self.full(depth - 1), self.full(depth - 1))

    def initial_population(self) -> list[Node]:
        pop: list[Node] = [var(name) for name in self.variables]
        depth_cycle = [2, 3, 4]
        i = 0
        while len(pop) < self.config.population:
            depth = depth_cycle[i % len(depth_cycle)]
            tree = self.grow(depth) if i % 2 == 0 else self.full(depth)
            pop.append(tree)
            i += 1
        return pop[: self.config.population]

    def evaluate(self, tree: Node) -> tuple[float, tuple[float, ...], Node]:
        root, n_slots = canonicalize(tree)
        key = _format_node(root)
        if key in self.cache:
            sse, constants = self.cache[key]
            return sse, constants, root
        form = ExprForm(root)
        if n_slots == 0:
            constants: tuple[float, ...] = ()
            sse = _sse(root, self.env, self.target, constants)
        elif n_slots > _MAX_FITTED_SLOTS:
            constants = (0.0,) * n_slots
            sse = _sse(root, self.env, self.target, constants)
        else:
            constants = fit_constants_arrays(
                form,
                self.env,
                self.target,
                restarts=self.config.const_restarts,
                iterations=self.config.const_iterations,
                seed=self.rng.randrange(2**32),
            )
            sse = _sse(root, self.env, self.target, constants)
        if not np.isfinite(sse):
            sse = float("inf")
        self.cache[key] = (sse, constants)
        return sse, constants, root

    def tournament(self, scored: list[tuple[float, int, Node]]) -> Node:
        picks = [self.rng.randrange(len(scored)) for _ in range(self.config.tournament_size)]
        best = min(picks, key=lambda i: (scored[i][0], scored[i][1], i))
        return scored[best][2]

    def random_node_index(self, tree: Node) -> int:
        return self.rng.randrange(_count(tree))

    def replace_at(self, tree: Node, index: int, replacement: Node) -> Node:
        counter = -1

        def rebuild(node: Node) -> Node:
            nonlocal counter
            counter += 1
            if counter == index:
                return replacement
            if not node.children:
                return node
            return Node(node.kind, label=node.label, slot=node.slot,
                        children=tuple(rebuild(c) for c in node.children))

        return rebuild(tree)

    def subtree_at(self, tree: Node, index: int) -> Node:
        for i, node in enumerate(_walk(tree)):
            if i == index:
                return node
        raise IndexError(index)

    def crossover(self, a: Node, b: Node) -> Node:
        ia = self.random_node_index(a)
        ib = self.random_node_index(b)
        child = self.replace_at(a, ia, self.subtree_at(b, ib))
        if _depth(child) > self.config.max_depth:
            return a
        return child

    def mutate(self, tree: Node) -> Node:
        index = self.random_node_index(tree)
        node = self.subtree_at(tree, index)
        if node.kind == "op" and self.rng.random() < 0.5:
            symbol = self.rng.choice([s for s in OPERATORS if s != node.label])
            replacement = Node("op", label=symbol, children=node.children)
        else:
            replacement = self.grow(3)
        child = self.replace_at(tree, index, replacement)
        if _depth(child) > self.config.max_depth:
            return tree
        return child


def run_gp(
    sources: Mapping[str, TimeSeries], obs: TimeSeries, config: GPConfig
) -> ParetoArchive:
    """Evolve combination forms and return the Pareto archive.

    The evolution loop is a single sequential coordinator; every random
    decision is drawn from one seeded generator, so runs with the same
    seed are byte identical.
    """
    names = sorted(sources)
    if not names:
        raise UnboundVariable("run_gp needs at least one source")
    from .ensemble import joint_overlap

    _, cols, target = joint_overlap([sources[n] for n in names], obs)
    if len(target) == 0:
        raise EmptyOverlap("sources and observations do not overlap")
    env = dict(zip(names, cols))

    rng = random.Random(config.seed)
    ev = _Evolver(names, env, target, config, rng)
    population = ev.initial_population()
    archive = ParetoArchive()

    for generation in range(config.generations + 1):
        scored: list[tuple[float, int, Node]] = []
        for tree in population:
            sse, constants, root = ev.evaluate(tree)
            cx = _count(root)
            scored.append((sse, cx, tree))
            if np.isfinite(sse):
                archive = pareto_insert(
                    archive, ArchiveEntry(ExprForm(root, constants), sse, cx)
                )
        if generation == config.generations:
            break
        elite = sorted(range(len(scored)), key=lambda i: (scored[i][0], scored[i][1], i))[:2]
        children: list[Node] = [scored[i][2] for i in elite]
        while len(children) < config.population:
            parent = ev.tournament(scored)
            if rng.random() < config.p_crossover:
                child = ev.crossover(parent, ev.tournament(scored))
            else:
                child = parent
            if rng.random() < config.p_mutation:
                child = ev.mutate(child)
            children.append(child)
        population = children
    return archive
