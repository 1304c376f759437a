"""Parse Python source into the fixed node-kind tree the code generator consumes.

The grammar engine is CPython's own ``ast`` module; this module's job is the
stable contract on top of it: a tree of ``AstNode`` records with byte spans
into the UTF-8 source, a fixed ``NodeKind`` vocabulary, pre-order node ids,
and ``Unsupported`` leaves for constructs the lowering does not handle.
Operator symbols and a few grammar details that the fixed node shape cannot
carry (slice part names, comprehension shapes, except-handler names) ride in
side tables on the returned ``SyntaxTree``.

``pass``, ``break`` and ``continue`` are dropped at this level: under
run-every-statement-once semantics they have no effect, and keeping them out
of the tree lets empty function bodies compile instead of erroring.
"""

from __future__ import annotations

import ast as pyast
import enum
import re
from dataclasses import dataclass, field


class NodeKind(enum.Enum):
    Module = "Module"
    FunctionDefinition = "FunctionDefinition"
    Parameters = "Parameters"
    Parameter = "Parameter"
    DefaultParameter = "DefaultParameter"
    Block = "Block"
    Assignment = "Assignment"
    AugmentedAssignment = "AugmentedAssignment"
    ExpressionStatement = "ExpressionStatement"
    Return = "Return"
    Call = "Call"
    Argument = "Argument"
    KeywordArgument = "KeywordArgument"
    Identifier = "Identifier"
    Attribute = "Attribute"
    Subscript = "Subscript"
    Slice = "Slice"
    BinaryOp = "BinaryOp"
    UnaryOp = "UnaryOp"
    BooleanOp = "BooleanOp"
    Comparison = "Comparison"
    If = "If"
    Elif = "Elif"
    Else = "Else"
    While = "While"
    For = "For"
    ListLiteral = "ListLiteral"
    TupleLiteral = "TupleLiteral"
    SetLiteral = "SetLiteral"
    DictLiteral = "DictLiteral"
    Pair = "Pair"
    ListComprehension = "ListComprehension"
    DictComprehension = "DictComprehension"
    ConditionalExpression = "ConditionalExpression"
    Try = "Try"
    Except = "Except"
    Finally = "Finally"
    Import = "Import"
    ImportFrom = "ImportFrom"
    StringLit = "StringLit"
    NumberLit = "NumberLit"
    BoolLit = "BoolLit"
    NoneLit = "NoneLit"
    Unsupported = "Unsupported"


#: statement-level kinds, used for statement counting and trace bounds
STATEMENT_KINDS = frozenset({
    NodeKind.Assignment, NodeKind.AugmentedAssignment, NodeKind.ExpressionStatement,
    NodeKind.Return, NodeKind.If, NodeKind.While, NodeKind.For, NodeKind.Try,
    NodeKind.FunctionDefinition, NodeKind.Import, NodeKind.ImportFrom,
})

LITERAL_KINDS = frozenset({
    NodeKind.StringLit, NodeKind.NumberLit, NodeKind.BoolLit, NodeKind.NoneLit,
})


@dataclass
class AstNode:
    kind: NodeKind
    span: tuple[int, int]
    children: list["AstNode"] = field(default_factory=list)
    node_id: int = -1


@dataclass
class SyntaxTree:
    root: AstNode
    source: str
    source_bytes: bytes
    #: node_id -> operator symbols (BinaryOp/UnaryOp/BooleanOp/AugmentedAssignment: one, Comparison: one per comparator)
    operators: dict[int, tuple[str, ...]] = field(default_factory=dict)
    #: node_id -> which of (lower, upper, step) a Slice carries, in child order
    slice_parts: dict[int, tuple[str, ...]] = field(default_factory=dict)
    #: node_id -> (flavor, if-count per generator clause) for comprehensions
    comp_shape: dict[int, tuple] = field(default_factory=dict)
    #: node_id -> bound name of an except handler ("except E as name")
    handler_names: dict[int, str] = field(default_factory=dict)

    def text(self, node: AstNode) -> str:
        return self.source_bytes[node.span[0]:node.span[1]].decode("utf-8", errors="replace")

    def nodes(self) -> list[AstNode]:
        out = []
        walk(self, out.append)
        return out

    def node_at(self, offset: int, kind: NodeKind | None = None) -> AstNode | None:
        """Smallest node whose span contains ``offset`` (optionally of one kind)."""
        best = None
        for node in self.nodes():
            if node.span[0] <= offset < node.span[1]:
                if kind is not None and node.kind is not kind:
                    continue
                if best is None or node.span[1] - node.span[0] <= best.span[1] - best.span[0]:
                    best = node
        return best


def walk(tree_or_node, visitor) -> None:
    """Call ``visitor(node)`` on every node in stable pre-order."""
    node = tree_or_node.root if isinstance(tree_or_node, SyntaxTree) else tree_or_node
    stack = [node]
    while stack:
        cur = stack.pop()
        visitor(cur)
        stack.extend(reversed(cur.children))


_BIN_OPS = {
    pyast.Add: "+", pyast.Sub: "-", pyast.Mult: "*", pyast.Div: "/",
    pyast.Mod: "%", pyast.Pow: "**", pyast.FloorDiv: "//", pyast.LShift: "<<",
    pyast.RShift: ">>", pyast.BitAnd: "&", pyast.BitOr: "|", pyast.BitXor: "^",
    pyast.MatMult: "@",
}
_CMP_OPS = {
    pyast.Eq: "==", pyast.NotEq: "!=", pyast.Lt: "<", pyast.LtE: "<=",
    pyast.Gt: ">", pyast.GtE: ">=", pyast.In: "in", pyast.NotIn: "not in",
    pyast.Is: "is", pyast.IsNot: "is not",
}
_UNARY_OPS = {pyast.USub: "-", pyast.UAdd: "+", pyast.Not: "not", pyast.Invert: "~"}
_BOOL_OPS = {pyast.And: "and", pyast.Or: "or"}

_IDENT_RE = re.compile(rb"[A-Za-z_\x80-\xff][A-Za-z0-9_\x80-\xff]*")


def parse(source: str) -> SyntaxTree:
    """Parse ``source`` or raise the interpreter's ``SyntaxError`` unchanged."""
    try:
        mod = pyast.parse(source)
    except (ValueError, MemoryError) as exc:
        raise SyntaxError(str(exc)) from exc
    except RecursionError as exc:
        raise SyntaxError("nesting too deep to parse") from exc
    conv = _Converter(source)
    root = conv.convert_module(mod)
    tree = SyntaxTree(root=root, source=source, source_bytes=conv.data)
    _number(root)
    for node, key, value in conv.meta:
        table = getattr(tree, key)
        table[node.node_id] = value
    return tree


def _number(root: AstNode) -> None:
    next_id = 0
    stack = [root]
    while stack:
        node = stack.pop()
        node.node_id = next_id
        next_id += 1
        stack.extend(reversed(node.children))


class _Converter:
    def __init__(self, source: str):
        self.source = source
        self.data = source.encode("utf-8")
        self.line_starts = [0]
        for i, byte in enumerate(self.data):
            if byte == 0x0A:
                self.line_starts.append(i + 1)
        self.meta: list[tuple[AstNode, str, object]] = []

    # -- positions ---------------------------------------------------------

    def pos(self, lineno: int, col: int) -> int:
        return self.line_starts[lineno - 1] + col

    def span_of(self, node) -> tuple[int, int]:
        return (self.pos(node.lineno, node.col_offset),
                self.pos(node.end_lineno, node.end_col_offset))

    def skip_trivia(self, i: int, end: int | None = None, extra: bytes = b"") -> int:
        """Advance past whitespace, comments, line continuations and ``extra`` bytes."""
        end = len(self.data) if end is None else end
        while i < end:
            b = self.data[i:i + 1]
            if b in b" \t\r\n" or b in extra:
                i += 1
            elif b == b"\\":
                i += 1
            elif b == b"#":
                nl = self.data.find(b"\n", i)
                i = end if nl == -1 else nl
            else:
                break
        return i

    def match_bracket(self, open_pos: int) -> int:
        """Index of the bracket matching the one at ``open_pos`` (skips strings, comments)."""
        pairs = {0x28: 0x29, 0x5B: 0x5D, 0x7B: 0x7D}
        closer = pairs[self.data[open_pos]]
        opener = self.data[open_pos]
        depth = 0
        i = open_pos
        n = len(self.data)
        while i < n:
            c = self.data[i]
            if c == opener:
                depth += 1
            elif c == closer:
                depth -= 1
                if depth == 0:
                    return i
            elif c in (0x22, 0x27):  # quote
                i = self._skip_string(i)
                continue
            elif c == 0x23:  # comment
                nl = self.data.find(b"\n", i)
                if nl == -1:
                    break
                i = nl
            i += 1
        raise SyntaxError("unbalanced brackets")

    def _skip_string(self, i: int) -> int:
        quote = self.data[i]
        triple = self.data[i:i + 3] in (b'"""', b"'''")
        if triple:
            end = self.data.find(self.data[i:i + 3], i + 3)
            return len(self.data) if end == -1 else end + 3
        i += 1
        n = len(self.data)
        while i < n:
            c = self.data[i]
            if c == 0x5C:
                i += 2
                continue
            if c == quote or c == 0x0A:
                return i + 1
            i += 1
        return n

    def find_identifier(self, name: str, start: int, skip: bytes = b"") -> tuple[int, int]:
        """Span of ``name`` at or shortly after ``start``, past trivia and ``skip`` bytes."""
        i = self.skip_trivia(start, extra=skip)
        needle = name.encode("utf-8")
        if self.data[i:i + len(needle)] == needle:
            return (i, i + len(needle))
        found = self.data.find(needle, start)
        if found == -1:
            raise SyntaxError(f"could not locate identifier {name!r}")
        return (found, found + len(needle))

    # -- conversion --------------------------------------------------------

    def convert_module(self, mod: pyast.Module) -> AstNode:
        children = self.convert_body(mod.body)
        return AstNode(NodeKind.Module, (0, len(self.data)), children)

    def convert_body(self, stmts) -> list[AstNode]:
        out = []
        for stmt in stmts:
            node = self.convert_stmt(stmt)
            if node is not None:
                out.append(node)
        return out

    def block(self, stmts) -> AstNode:
        children = self.convert_body(stmts)
        first = self.span_of(stmts[0])[0]
        last = self.span_of(stmts[-1])[1]
        return AstNode(NodeKind.Block, (first, last), children)

    def unsupported(self, node) -> AstNode:
        return AstNode(NodeKind.Unsupported, self.span_of(node))

    def convert_stmt(self, stmt) -> AstNode | None:
        span = self.span_of(stmt)
        if isinstance(stmt, (pyast.Pass, pyast.Break, pyast.Continue)):
            return None
        if isinstance(stmt, pyast.FunctionDef):
            if stmt.decorator_list:
                return self.unsupported(stmt)
            return self.function_def(stmt, span)
        if isinstance(stmt, pyast.Assign):
            children = [self.convert_expr(t) for t in stmt.targets]
            children.append(self.convert_expr(stmt.value))
            return AstNode(NodeKind.Assignment, span, children)
        if isinstance(stmt, pyast.AnnAssign):
            if stmt.value is None:
                return None
            children = [self.convert_expr(stmt.target), self.convert_expr(stmt.value)]
            return AstNode(NodeKind.Assignment, span, children)
        if isinstance(stmt, pyast.AugAssign):
            node = AstNode(NodeKind.AugmentedAssignment, span,
                           [self.convert_expr(stmt.target), self.convert_expr(stmt.value)])
            self.meta.append((node, "operators", (_BIN_OPS[type(stmt.op)] + "=",)))
            return node
        if isinstance(stmt, pyast.Return):
            children = [] if stmt.value is None else [self.convert_expr(stmt.value)]
            return AstNode(NodeKind.Return, span, children)
        if isinstance(stmt, pyast.Expr):
            expr = self.convert_expr(stmt.value)
            return AstNode(NodeKind.ExpressionStatement, expr.span, [expr])
        if isinstance(stmt, pyast.If):
            return self.if_stmt(stmt, span, NodeKind.If)
        if isinstance(stmt, pyast.While):
            children = [self.convert_expr(stmt.test), self.block(stmt.body)]
            tail = self.orelse_node(stmt.orelse)
            if tail is not None:
                children.append(tail)
            return AstNode(NodeKind.While, span, children)
        if isinstance(stmt, pyast.For):
            children = [self.convert_expr(stmt.target), self.convert_expr(stmt.iter),
                        self.block(stmt.body)]
            tail = self.orelse_node(stmt.orelse)
            if tail is not None:
                children.append(tail)
            return AstNode(NodeKind.For, span, children)
        if isinstance(stmt, pyast.Try):
            children = [self.block(stmt.body)]
            for handler in stmt.handlers:
                children.append(self.except_handler(handler))
            tail = self.orelse_node(stmt.orelse)
            if tail is not None:
                children.append(tail)
            if stmt.finalbody:
                fin_block = self.block(stmt.finalbody)
                children.append(AstNode(NodeKind.Finally, fin_block.span, [fin_block]))
            return AstNode(NodeKind.Try, span, children)
        if isinstance(stmt, pyast.Import):
            return AstNode(NodeKind.Import, span)
        if isinstance(stmt, pyast.ImportFrom):
            return AstNode(NodeKind.ImportFrom, span)
        return self.unsupported(stmt)

    def if_stmt(self, stmt: pyast.If, span, kind: NodeKind) -> AstNode:
        children = [self.convert_expr(stmt.test), self.block(stmt.body)]
        tail = self.orelse_node(stmt.orelse)
        if tail is not None:
            children.append(tail)
        return AstNode(kind, span, children)

    def orelse_node(self, orelse) -> AstNode | None:
        if not orelse:
            return None
        if len(orelse) == 1 and isinstance(orelse[0], pyast.If):
            span = self.span_of(orelse[0])
            if self.data[span[0]:span[0] + 4] == b"elif":
                return self.if_stmt(orelse[0], span, NodeKind.Elif)
        blk = self.block(orelse)
        return AstNode(NodeKind.Else, blk.span, [blk])

    def except_handler(self, handler) -> AstNode:
        span = self.span_of(handler)
        children = []
        if handler.type is not None:
            children.append(self.convert_expr(handler.type))
        children.append(self.block(handler.body))
        node = AstNode(NodeKind.Except, span, children)
        if handler.name:
            self.meta.append((node, "handler_names", handler.name))
        return node

    def function_def(self, stmt: pyast.FunctionDef, span) -> AstNode:
        name_span = self.find_identifier(stmt.name, span[0] + 3)
        open_pos = self.skip_trivia(name_span[1])
        if self.data[open_pos:open_pos + 1] != b"(":
            raise SyntaxError("malformed function header")
        close_pos = self.match_bracket(open_pos)
        params = AstNode(NodeKind.Parameters, (open_pos, close_pos + 1),
                         self.parameter_nodes(stmt.args))
        name = AstNode(NodeKind.Identifier, name_span)
        return AstNode(NodeKind.FunctionDefinition, span, [name, params, self.block(stmt.body)])

    def parameter_nodes(self, args: pyast.arguments) -> list[AstNode]:
        out = []
        positional = list(args.posonlyargs) + list(args.args)
        defaults = list(args.defaults)
        split = len(positional) - len(defaults)
        for i, arg in enumerate(positional):
            out.append(self.parameter(arg, defaults[i - split] if i >= split else None))
        if args.vararg is not None:
            out.append(self.parameter(args.vararg, None))
        for arg, default in zip(args.kwonlyargs, args.kw_defaults):
            out.append(self.parameter(arg, default))
        if args.kwarg is not None:
            out.append(self.parameter(args.kwarg, None))
        return out

    def parameter(self, arg: pyast.arg, default) -> AstNode:
        span = self.span_of(arg)
        name_span = (span[0], span[0] + len(arg.arg.encode("utf-8")))
        ident = AstNode(NodeKind.Identifier, name_span)
        if default is None:
            return AstNode(NodeKind.Parameter, name_span, [ident])
        dnode = self.convert_expr(default)
        return AstNode(NodeKind.DefaultParameter, (span[0], dnode.span[1]), [ident, dnode])

    # -- expressions -------------------------------------------------------

    def convert_expr(self, expr) -> AstNode:
        span = self.span_of(expr)
        if isinstance(expr, pyast.Name):
            return AstNode(NodeKind.Identifier, span)
        if isinstance(expr, pyast.Constant):
            return AstNode(self.constant_kind(expr.value), span)
        if isinstance(expr, pyast.JoinedStr):
            return AstNode(NodeKind.StringLit, span)
        if isinstance(expr, pyast.BinOp):
            node = AstNode(NodeKind.BinaryOp, span,
                           [self.convert_expr(expr.left), self.convert_expr(expr.right)])
            self.meta.append((node, "operators", (_BIN_OPS[type(expr.op)],)))
            return node
        if isinstance(expr, pyast.UnaryOp):
            node = AstNode(NodeKind.UnaryOp, span, [self.convert_expr(expr.operand)])
            self.meta.append((node, "operators", (_UNARY_OPS[type(expr.op)],)))
            return node
        if isinstance(expr, pyast.BoolOp):
            node = AstNode(NodeKind.BooleanOp, span, [self.convert_expr(v) for v in expr.values])
            self.meta.append((node, "operators", (_BOOL_OPS[type(expr.op)],)))
            return node
        if isinstance(expr, pyast.Compare):
            children = [self.convert_expr(expr.left)]
            children.extend(self.convert_expr(c) for c in expr.comparators)
            node = AstNode(NodeKind.Comparison, span, children)
            self.meta.append((node, "operators", tuple(_CMP_OPS[type(op)] for op in expr.ops)))
            return node
        if isinstance(expr, pyast.Call):
            return self.call(expr, span)
        if isinstance(expr, pyast.Attribute):
            value = self.convert_expr(expr.value)
            attr_span = self.find_identifier(expr.attr, value.span[1], skip=b").")
            ident = AstNode(NodeKind.Identifier, attr_span)
            return AstNode(NodeKind.Attribute, span, [value, ident])
        if isinstance(expr, pyast.Subscript):
            return AstNode(NodeKind.Subscript, span,
                           [self.convert_expr(expr.value), self.convert_expr(expr.slice)])
        if isinstance(expr, pyast.Slice):
            children = []
            parts = []
            for label, sub in (("lower", expr.lower), ("upper", expr.upper), ("step", expr.step)):
                if sub is not None:
                    children.append(self.convert_expr(sub))
                    parts.append(label)
            node = AstNode(NodeKind.Slice, span, children)
            self.meta.append((node, "slice_parts", tuple(parts)))
            return node
        if isinstance(expr, pyast.List):
            return AstNode(NodeKind.ListLiteral, span, [self.convert_expr(e) for e in expr.elts])
        if isinstance(expr, pyast.Tuple):
            return AstNode(NodeKind.TupleLiteral, span, [self.convert_expr(e) for e in expr.elts])
        if isinstance(expr, pyast.Set):
            return AstNode(NodeKind.SetLiteral, span, [self.convert_expr(e) for e in expr.elts])
        if isinstance(expr, pyast.Dict):
            return self.dict_literal(expr, span)
        if isinstance(expr, pyast.IfExp):
            return AstNode(NodeKind.ConditionalExpression, span,
                           [self.convert_expr(expr.body), self.convert_expr(expr.test),
                            self.convert_expr(expr.orelse)])
        if isinstance(expr, (pyast.ListComp, pyast.SetComp, pyast.GeneratorExp)):
            flavor = {"ListComp": "list", "SetComp": "set", "GeneratorExp": "generator"}[type(expr).__name__]
            return self.comprehension(expr, span, [expr.elt], flavor)
        if isinstance(expr, pyast.DictComp):
            return self.comprehension(expr, span, [expr.key, expr.value], "dict")
        if isinstance(expr, pyast.Starred):
            return self.convert_expr(expr.value)
        return self.unsupported(expr)

    def constant_kind(self, value) -> NodeKind:
        if isinstance(value, bool):
            return NodeKind.BoolLit
        if value is None:
            return NodeKind.NoneLit
        if isinstance(value, (int, float, complex)):
            return NodeKind.NumberLit
        if isinstance(value, (str, bytes)):
            return NodeKind.StringLit
        return NodeKind.NoneLit

    def call(self, expr: pyast.Call, span) -> AstNode:
        children = [self.convert_expr(expr.func)]
        wrapped = []
        for arg in expr.args:
            arg_span = self.span_of(arg)
            inner = self.convert_expr(arg)
            wrapped.append(AstNode(NodeKind.Argument, arg_span, [inner]))
        for kw in expr.keywords:
            kw_span = self.span_of(kw)
            value = self.convert_expr(kw.value)
            if kw.arg is None:
                wrapped.append(AstNode(NodeKind.KeywordArgument, kw_span, [value]))
            else:
                name_span = (kw_span[0], kw_span[0] + len(kw.arg.encode("utf-8")))
                ident = AstNode(NodeKind.Identifier, name_span)
                wrapped.append(AstNode(NodeKind.KeywordArgument, kw_span, [ident, value]))
        wrapped.sort(key=lambda n: n.span[0])
        children.extend(wrapped)
        return AstNode(NodeKind.Call, span, children)

    def dict_literal(self, expr: pyast.Dict, span) -> AstNode:
        pairs = []
        for key, value in zip(expr.keys, expr.values):
            vnode = self.convert_expr(value)
            if key is None:
                start = vnode.span[0]
                scan = start - 1
                while scan > 0 and self.data[scan:scan + 1] in b" \t\r\n":
                    scan -= 1
                if scan >= 1 and self.data[scan - 1:scan + 1] == b"**":
                    start = scan - 1
                pairs.append(AstNode(NodeKind.Pair, (start, vnode.span[1]), [vnode]))
            else:
                knode = self.convert_expr(key)
                pairs.append(AstNode(NodeKind.Pair, (knode.span[0], vnode.span[1]),
                                     [knode, vnode]))
        return AstNode(NodeKind.DictLiteral, span, pairs)

    def comprehension(self, expr, span, head_exprs, flavor: str) -> AstNode:
        for gen in expr.generators:
            if gen.is_async:
                return self.unsupported(expr)
        children = [self.convert_expr(e) for e in head_exprs]
        if_counts = []
        for gen in expr.generators:
            children.append(self.convert_expr(gen.target))
            children.append(self.convert_expr(gen.iter))
            for cond in gen.ifs:
                children.append(self.convert_expr(cond))
            if_counts.append(len(gen.ifs))
        kind = NodeKind.DictComprehension if flavor == "dict" else NodeKind.ListComprehension
        node = AstNode(kind, span, children)
        self.meta.append((node, "comp_shape", (flavor, tuple(if_counts))))
        return node
