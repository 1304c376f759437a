"""The virtual machine: scoped string-to-vector memory and call records.

Memory is a stack of scopes mapping variable names to objects; each name
keeps its full assignment history.  Control flow pushes context objects onto
a second stack; every lambda call snapshots that stack.  All vector
semantics are delegated to a ``semantics`` adapter so the same machinery
runs with a trained executor or with a null backend for dry runs.

Trace text format, one event per line, tab-separated, 1-based sequence:

    <seq>  GUESS       <label> o<id>
    <seq>  STORE       <name> o<id>
    <seq>  LOOKUP      <name> o<id>
    <seq>  LAMBDA      <callee> <M> <o1,o2|-> o<result>
    <seq>  PUSH_CTX    <builtin> o<id>
    <seq>  POP_CTX     <builtin>
    <seq>  PUSH_SCOPE  func:<name>
    <seq>  POP_SCOPE   func:<name>
    <seq>  RETURN      o<id>

where M is the number of control-flow contexts in scope at the call.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from . import autodiff as ad
from .config import Config


class InterpreterFault(RuntimeError):
    """Invariant violation inside the virtual machine. Indicates a bug."""


class ScriptTruncated(Exception):
    """Raised by a lambda budget when the per-batch call cap is reached."""


# the 69 canonical builtin functions and constants; embedding rows are
# assigned lazily, in order of first use, and the assignment is persisted
BUILTIN_NAMES = (
    "and",
    "fun_obj_val_default",
    "val_obj_val_default",
    "const_obj_tensor_default",
    "__try__",
    "__except__",
    "__tuple_of__",
    "__compile_function__",
    "__dictionary_key_value__",
    "==",
    "<",
    "-",
    "__if__",
    "__dictionary_of__",
    "__else__",
    "__list_of__",
    "%",
    "not",
    "__keyword_argument__",
    "__get_attr__",
    "__subscript__",
    "__list_splat__",
    "__dictionary_splat__",
    "+",
    "in",
    "__for_in__",
    "__default_parameter__",
    "+=",
    "__end_for_iterator__",
    "__unpack_k__",
    "__slice__",
    "is",
    "__generator__",
    "*",
    "/",
    "<=",
    ">",
    "__conditional_expression__",
    "or",
    "!=",
    "__subscript_assign__",
    ">=",
    "__expression_list_of__",
    "|=",
    "**",
    "__set_of__",
    "__while__",
    "__list_comprehension__",
    "__if_clause__",
    ">>",
    "&",
    "<<",
    "|",
    "__dictionary_comprehension__",
    "-=",
    "//",
    "__finally__",
    "*=",
    "&=",
    "/=",
    "^",
    ">>=",
    "~",
    "__parenthesis__",
    "<>",
    "<<=",
    "%=",
    "^=",
    "//=",
)


@dataclass
class AbstractObject:
    object_id: int
    guessed: ad.Tensor
    executed: ad.Tensor | None = None
    origin_node: int = -1
    contaminated: bool = False
    label: str = ""

    @property
    def vector(self) -> ad.Tensor:
        return self.executed if self.executed is not None else self.guessed


@dataclass
class FunctionValue:
    kind: str                    # guessed | compiled | builtin
    theta: ad.Tensor
    name: str


@dataclass
class Variable:
    name: str
    history: list = field(default_factory=list)

    @property
    def current(self) -> AbstractObject:
        return self.history[-1]


@dataclass
class Scope:
    label: str
    table: dict = field(default_factory=dict)


@dataclass
class LambdaRecord:
    record_id: int
    callee: FunctionValue
    contexts: list            # AbstractObject context objects, outermost first
    args: list                # AbstractObject arguments, in call order
    pairs: list               # effective (guessed, executed) tensor pairs
    result: AbstractObject


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    op: str
    fields: tuple

    def line(self) -> str:
        return "\t".join((str(self.seq), self.op) + self.fields)


def format_trace(events) -> str:
    return "".join(e.line() + "\n" for e in events)


class BuiltinTable:
    """Embedding rows for the canonical builtins, indexed on first use."""

    def __init__(self, store: ad.ParameterStore, config: Config):
        self.store = store
        self.config = config
        self.index: dict[str, int] = {}
        self._lock = threading.Lock()

    @staticmethod
    def init_params(store: ad.ParameterStore, rng, config: Config):
        store.add("builtin.emb", rng.normal(0.0, 0.02, size=(len(BUILTIN_NAMES), config.h)))

    def resolve(self, name: str) -> int:
        hit = self.index.get(name)
        if hit is not None:
            return hit
        if name not in _BUILTIN_SET:
            raise InterpreterFault(f"unknown builtin: {name!r}")
        with self._lock:
            hit = self.index.get(name)
            if hit is None:
                hit = len(self.index)
                self.index[name] = hit
        return hit

    def row(self, name: str) -> ad.Tensor:
        return ad.row(self.store["builtin.emb"], self.resolve(name))

    def function_value(self, name: str) -> FunctionValue:
        return FunctionValue(kind="builtin", theta=self.row(name), name=name)

    def index_map(self) -> dict[str, int]:
        return dict(self.index)

    def load_index_map(self, mapping: dict[str, int]) -> None:
        for name, slot in mapping.items():
            if name not in _BUILTIN_SET:
                raise InterpreterFault(f"unknown builtin in checkpoint: {name!r}")
        self.index = {name: int(slot) for name, slot in mapping.items()}


_BUILTIN_SET = frozenset(BUILTIN_NAMES)

RETURN_SLOT = "__return_val__"


class LambdaBudget:
    """Thread-safe counter capping lambda calls across a batch."""

    def __init__(self, cap: int):
        self.cap = cap
        self.used = 0
        self._lock = threading.Lock()

    def consume(self) -> None:
        with self._lock:
            if self.used >= self.cap:
                raise ScriptTruncated()
            self.used += 1


class Interpreter:
    """One per script execution; owns ids, scopes, contexts, and the trace."""

    def __init__(self, semantics, builtins: BuiltinTable, config: Config):
        self.semantics = semantics
        self.builtins = builtins
        self.config = config
        self.scopes: list[Scope] = [Scope(label="module")]
        self.all_scopes: list[Scope] = [self.scopes[0]]
        self.contexts: list[tuple[int, str, AbstractObject]] = []
        self.trace: list[TraceEvent] = []
        self.records: list[LambdaRecord] = []
        self._next_id = 1
        self.contaminate_node: int | None = None
        self.first_contaminated_record: int | None = None
        self.lambda_budget: LambdaBudget | None = None
        self.on_lambda = None     # callable(record_id, callee, contexts, args)

    # -- plumbing -----------------------------------------------------------

    def _emit(self, op: str, *fields: str) -> None:
        self.trace.append(TraceEvent(len(self.trace) + 1, op, tuple(fields)))

    def _new_object(self, guessed: ad.Tensor, origin_node: int, label: str,
                    executed: ad.Tensor | None = None) -> AbstractObject:
        obj = AbstractObject(object_id=self._next_id, guessed=guessed,
                             executed=executed, origin_node=origin_node, label=label)
        self._next_id += 1
        return obj

    # -- the four instructions ---------------------------------------------

    def guess(self, vector: ad.Tensor, origin_node: int, label: str) -> AbstractObject:
        obj = self._new_object(vector, origin_node, label)
        self._emit("GUESS", label, f"o{obj.object_id}")
        return obj

    def store(self, name: str, obj: AbstractObject) -> None:
        table = self.scopes[-1].table
        var = table.get(name)
        if var is None:
            var = Variable(name=name)
            table[name] = var
        var.history.append(obj)
        self._emit("STORE", name, f"o{obj.object_id}")

    def store_silent(self, name: str, obj: AbstractObject) -> None:
        """Bind without a trace event (used for the reserved return slot)."""
        table = self.scopes[-1].table
        var = table.get(name)
        if var is None:
            var = Variable(name=name)
            table[name] = var
        var.history.append(obj)

    def find_in_top_scope(self, name: str) -> AbstractObject | None:
        var = self.scopes[-1].table.get(name)
        return var.current if var is not None else None

    def lookup(self, name: str, node=None, guess_vector=None) -> AbstractObject:
        """Current binding, scanning scopes top-down; misses self-heal.

        On a miss the caller-provided guess vector becomes a fresh object
        that is immediately stored, so later uses share it.
        """
        obj = self._find(name)
        if obj is None:
            if guess_vector is None:
                raise InterpreterFault(f"lookup miss for {name!r} without a guess")
            obj = self.guess(guess_vector, node.node_id if node is not None else -1, name)
            self.store(name, obj)
        self._emit("LOOKUP", name, f"o{obj.object_id}")
        if node is not None and self.contaminate_node is not None \
                and node.node_id == self.contaminate_node:
            obj.contaminated = True
        return obj

    def _find(self, name: str) -> AbstractObject | None:
        for scope in reversed(self.scopes):
            var = scope.table.get(name)
            if var is not None:
                return var.current
        return None

    def is_bound(self, name: str) -> bool:
        return self._find(name) is not None

    def lambda_call(self, callee: FunctionValue, args: list[AbstractObject],
                    guessed: ad.Tensor, origin_node: int,
                    pair_overrides: dict | None = None) -> AbstractObject:
        """One executor invocation over the current control-flow contexts.

        Argument pairs default to (guessed, executed-or-guessed) per object;
        ``pair_overrides`` replaces the pair at a given position (used by
        neural compilation, where the return slot carries its resolved
        vector in both halves).
        """
        if len(args) > self.config.max_args:
            raise InterpreterFault(
                f"{len(args)} arguments exceed the cap of {self.config.max_args}")
        if self.lambda_budget is not None:
            self.lambda_budget.consume()
        record_id = len(self.records)
        ctx_objects = [entry[2] for entry in self.contexts]
        if self.on_lambda is not None:
            self.on_lambda(record_id, callee, ctx_objects, args)
        pairs = [(a.guessed, a.vector) for a in args]
        if pair_overrides:
            for position, pair in pair_overrides.items():
                pairs[position] = pair
        out = self.semantics.execute(callee.theta, [c.vector for c in ctx_objects], pairs)
        result = self._new_object(guessed, origin_node, callee.name, executed=out.ret)
        result.contaminated = any(a.contaminated for a in args)
        if result.contaminated and self.first_contaminated_record is None:
            self.first_contaminated_record = record_id
        self.records.append(LambdaRecord(record_id=record_id, callee=callee,
                                         contexts=ctx_objects, args=list(args),
                                         pairs=pairs, result=result))
        arg_text = ",".join(f"o{a.object_id}" for a in args) if args else "-"
        self._emit("LAMBDA", callee.name, str(len(ctx_objects)), arg_text,
                   f"o{result.object_id}")
        return result

    # -- structure -----------------------------------------------------------

    def push_scope(self, func_name: str) -> None:
        scope = Scope(label=func_name)
        self.scopes.append(scope)
        self.all_scopes.append(scope)
        self._emit("PUSH_SCOPE", f"func:{func_name}")

    def pop_scope(self) -> Scope:
        if len(self.scopes) <= 1:
            raise InterpreterFault("scope stack underflow")
        scope = self.scopes.pop()
        self._emit("POP_SCOPE", f"func:{scope.label}")
        return scope

    def push_context(self, node_id: int, builtin_name: str, obj: AbstractObject) -> None:
        self.contexts.append((node_id, builtin_name, obj))
        self._emit("PUSH_CTX", builtin_name, f"o{obj.object_id}")

    def pop_context(self) -> None:
        if not self.contexts:
            raise InterpreterFault("context stack underflow")
        _, builtin_name, _ = self.contexts.pop()
        self._emit("POP_CTX", builtin_name)

    def emit_return(self, obj: AbstractObject) -> None:
        self._emit("RETURN", f"o{obj.object_id}")

    # -- introspection --------------------------------------------------------

    def memory_snapshot(self) -> list[AbstractObject]:
        """Objects visible right now, shadowed names resolved to the top
        binding, the return slot excluded, ordered by ascending object id."""
        seen: dict[str, AbstractObject] = {}
        for scope in reversed(self.scopes):
            for name, var in scope.table.items():
                if name != RETURN_SLOT and name not in seen:
                    seen[name] = var.current
        unique: dict[int, AbstractObject] = {}
        for obj in seen.values():
            unique[obj.object_id] = obj
        return [unique[k] for k in sorted(unique)]

    def memory_entry_count(self) -> int:
        return sum(len(scope.table) for scope in self.all_scopes)

    def dump_memory(self) -> str:
        lines = []
        for scope in self.all_scopes:
            lines.append(f"scope {scope.label}:")
            for name in sorted(scope.table):
                var = scope.table[name]
                history = ",".join(f"o{o.object_id}" for o in var.history)
                lines.append(f"  {name} -> {history}")
        return "\n".join(lines) + ("\n" if lines else "")

    def dump_vectors(self) -> str:
        objects: dict[int, AbstractObject] = {}
        for record in self.records:
            for obj in record.args + [record.result]:
                objects[obj.object_id] = obj
        for scope in self.all_scopes:
            for var in scope.table.values():
                for obj in var.history:
                    objects[obj.object_id] = obj
        lines = []
        for oid in sorted(objects):
            vec = objects[oid].vector.data.ravel()
            lines.append(f"o{oid}\t" + " ".join(f"{x:.6g}" for x in vec))
        return "\n".join(lines) + ("\n" if lines else "")
