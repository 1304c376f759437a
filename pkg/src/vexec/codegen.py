"""Lowering: walk the syntax tree and drive the interpreter.

Every supported statement is dispatched exactly once and every branch body
of every control-flow construct runs exactly once, under a context object
computed from its condition.  Expressions evaluate to abstract objects;
operators, collection displays, subscripts, attributes, and calls each
lower to a single lambda call over previously computed objects.

Function definitions execute their body once at definition time inside a
fresh scope, then compile the observed signature (function guess, parameters
before, return value, parameters after) into a single callable vector.
Calls to names bound by such a definition reuse the compiled vector; calls
to anything else run on a vector guessed from the callee alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autodiff as ad
from .config import Config
from .guesser import Guesser, TokenEncoding
from .interpreter import (RETURN_SLOT, AbstractObject, FunctionValue,
                          Interpreter, LambdaRecord, TraceEvent)
from .parser import STATEMENT_KINDS, AstNode, NodeKind, SyntaxTree

_AUG_FALLBACK = {"**=": "**"}

_COMP_CONTEXT = {
    "list": "__list_comprehension__",
    "set": "__list_comprehension__",
    "generator": "__generator__",
    "dict": "__dictionary_comprehension__",
}
_COMP_CLOSER = {
    "list": "__list_of__",
    "set": "__set_of__",
    "generator": "__list_of__",
    "dict": "__dictionary_of__",
}


class CodegenError(Exception):
    """A construct the lowering does not support, or a malformed node."""

    def __init__(self, node_id: int, kind: str, message: str):
        super().__init__(message)
        self.node_id = node_id
        self.kind = kind          # UnsupportedConstruct | MalformedNode
        self.message = message


@dataclass
class L1Sample:
    """A single-name assignment whose right side went through the executor."""
    name_node: AstNode
    name: str
    value: AbstractObject
    lhs_guess: ad.Tensor


@dataclass
class GenerationResult:
    tree: SyntaxTree
    interp: Interpreter
    encoding: TokenEncoding
    trace: list
    records: list
    statement_counts: dict
    branch_counts: dict
    l1_samples: list
    statement_dispatches: int

    @property
    def lambda_count(self) -> int:
        return len(self.records)


def _clean_label(text: str, cap: int = 32) -> str:
    return text.replace("\n", "\\n").replace("\t", "\\t")[:cap]


class CodeGenerator:
    def __init__(self, tree: SyntaxTree, interp: Interpreter, guesser: Guesser,
                 encoding: TokenEncoding, executor):
        self.tree = tree
        self.interp = interp
        self.guesser = guesser
        self.encoding = encoding
        self.executor = executor
        self.statement_counts: dict[int, int] = {}
        self.branch_counts: dict[int, int] = {}
        self.l1_samples: list[L1Sample] = []
        self.function_values: dict[int, FunctionValue] = {}
        self.statement_dispatches = 0

    # -- helpers -------------------------------------------------------------

    def _guess_vec(self, node: AstNode) -> ad.Tensor:
        return self.guesser.guess_vector(node, self.encoding)

    def _guess_obj(self, node: AstNode, label: str) -> AbstractObject:
        return self.interp.guess(self._guess_vec(node), node.node_id, _clean_label(label))

    def _none_object(self, node: AstNode) -> AbstractObject:
        row = self.interp.builtins.row("const_obj_tensor_default")
        return self.interp.guess(row, node.node_id, "None")

    def _call_builtin(self, name: str, args: list, guessed: ad.Tensor,
                      node: AstNode, pair_overrides=None) -> AbstractObject:
        fv = self.interp.builtins.function_value(name)
        return self.interp.lambda_call(fv, args, guessed, node.node_id,
                                       pair_overrides=pair_overrides)

    def _unsupported(self, node: AstNode) -> CodegenError:
        return CodegenError(node.node_id, "UnsupportedConstruct",
                            f"{node.kind.name} at bytes {node.span}")

    def _malformed(self, node: AstNode, what: str) -> CodegenError:
        return CodegenError(node.node_id, "MalformedNode",
                            f"{what} ({node.kind.name} at bytes {node.span})")

    # -- entry ----------------------------------------------------------------

    def generate(self) -> GenerationResult:
        for stmt in self.tree.root.children:
            self.exec_statement(stmt)
        return GenerationResult(
            tree=self.tree, interp=self.interp, encoding=self.encoding,
            trace=self.interp.trace, records=self.interp.records,
            statement_counts=self.statement_counts, branch_counts=self.branch_counts,
            l1_samples=self.l1_samples, statement_dispatches=self.statement_dispatches)

    # -- statements ------------------------------------------------------------

    def exec_statement(self, stmt: AstNode) -> None:
        if stmt.kind not in STATEMENT_KINDS:
            if stmt.kind is NodeKind.Unsupported:
                raise self._unsupported(stmt)
            raise self._malformed(stmt, "not a statement")
        self.statement_counts[stmt.node_id] = self.statement_counts.get(stmt.node_id, 0) + 1
        self.statement_dispatches += 1
        kind = stmt.kind
        if kind is NodeKind.Assignment:
            self._stmt_assignment(stmt)
        elif kind is NodeKind.AugmentedAssignment:
            self._stmt_aug_assignment(stmt)
        elif kind is NodeKind.ExpressionStatement:
            self.eval_expr(stmt.children[0])
        elif kind is NodeKind.Return:
            self._stmt_return(stmt)
        elif kind is NodeKind.If:
            self._stmt_if(stmt)
        elif kind is NodeKind.While:
            self._stmt_while(stmt)
        elif kind is NodeKind.For:
            self._stmt_for(stmt)
        elif kind is NodeKind.Try:
            self._stmt_try(stmt)
        elif kind is NodeKind.FunctionDefinition:
            self._stmt_function_definition(stmt)
        elif kind in (NodeKind.Import, NodeKind.ImportFrom):
            pass                      # no effect on memory or trace
        else:
            raise self._malformed(stmt, "unhandled statement")

    def exec_block(self, block: AstNode) -> None:
        self.branch_counts[block.node_id] = self.branch_counts.get(block.node_id, 0) + 1
        for stmt in block.children:
            self.exec_statement(stmt)

    def _stmt_assignment(self, stmt: AstNode) -> None:
        value = self.eval_expr(stmt.children[-1])
        targets = stmt.children[:-1]
        for target in targets:
            self.assign_target(target, value)
        if len(targets) == 1 and targets[0].kind is NodeKind.Identifier \
                and value.executed is not None:
            self.l1_samples.append(L1Sample(
                name_node=targets[0], name=self.tree.text(targets[0]), value=value,
                lhs_guess=self._guess_vec(targets[0])))

    def _operator(self, node: AstNode, fallback: str) -> str:
        symbols = self.tree.operators.get(node.node_id)
        return symbols[0] if symbols else fallback

    def _stmt_aug_assignment(self, stmt: AstNode) -> None:
        target, value_node = stmt.children
        op = self._operator(stmt, "+=")
        op = _AUG_FALLBACK.get(op, op)
        if target.kind is NodeKind.Identifier:
            name = self.tree.text(target)
            current = self.interp.lookup(name, target, guess_vector=self._guess_vec(target))
            value = self.eval_expr(value_node)
            result = self._call_builtin(op, [current, value], self._guess_vec(stmt), stmt)
            self.interp.store(name, result)
        elif target.kind in (NodeKind.Subscript, NodeKind.Attribute):
            base, key_obj = self._target_base_and_key(target)
            read = self._call_builtin(
                "__subscript__" if target.kind is NodeKind.Subscript else "__get_attr__",
                [base, key_obj], self._guess_vec(target), target)
            value = self.eval_expr(value_node)
            combined = self._call_builtin(op, [read, value], self._guess_vec(stmt), stmt)
            self._assign_into(target, base, key_obj, combined)
        else:
            raise self._malformed(target, "augmented assignment target")

    def _stmt_return(self, stmt: AstNode) -> None:
        if stmt.children:
            obj = self.eval_expr(stmt.children[0])
        else:
            obj = self._none_object(stmt)
        self.interp.emit_return(obj)
        self.interp.store_silent(RETURN_SLOT, obj)

    def _stmt_if(self, stmt: AstNode) -> None:
        cond, then_block, *rest = stmt.children
        cond_obj = self.eval_expr(cond)
        ctx = self._call_builtin("__if__", [cond_obj], self._guess_vec(cond), stmt)
        self.interp.push_context(stmt.node_id, "__if__", ctx)
        self.exec_block(then_block)
        self.interp.pop_context()
        if rest:
            tail = rest[0]
            else_ctx = self._call_builtin("__else__", [cond_obj], self._guess_vec(cond), tail)
            self.interp.push_context(tail.node_id, "__else__", else_ctx)
            if tail.kind is NodeKind.Elif:
                self._stmt_if(tail)
            elif tail.kind is NodeKind.Else:
                self.exec_block(tail.children[0])
            else:
                raise self._malformed(tail, "if tail")
            self.interp.pop_context()

    def _stmt_while(self, stmt: AstNode) -> None:
        cond, body, *rest = stmt.children
        cond_obj = self.eval_expr(cond)
        ctx = self._call_builtin("__while__", [cond_obj], self._guess_vec(cond), stmt)
        self.interp.push_context(stmt.node_id, "__while__", ctx)
        self.exec_block(body)
        self.interp.pop_context()
        self._lower_else_clause(rest, cond_obj)

    def _stmt_for(self, stmt: AstNode) -> None:
        target, iterable, body, *rest = stmt.children
        it_obj = self.eval_expr(iterable)
        ctx = self._call_builtin("__for_in__", [it_obj], self._guess_vec(iterable), stmt)
        self.interp.push_context(stmt.node_id, "__for_in__", ctx)
        self._bind_loop_target(target, it_obj)
        self.exec_block(body)
        self._call_builtin("__end_for_iterator__", [it_obj], self._guess_vec(iterable), stmt)
        self.interp.pop_context()
        self._lower_else_clause(rest, it_obj)

    def _lower_else_clause(self, rest: list, cond_obj: AbstractObject) -> None:
        if rest:
            tail = rest[0]
            ctx = self._call_builtin("__else__", [cond_obj],
                                     self._guess_vec(tail), tail)
            self.interp.push_context(tail.node_id, "__else__", ctx)
            self.exec_block(tail.children[0])
            self.interp.pop_context()

    def _bind_loop_target(self, target: AstNode, it_obj: AbstractObject) -> None:
        if target.kind is NodeKind.Identifier:
            self.interp.store(self.tree.text(target), it_obj)
        elif target.kind in (NodeKind.TupleLiteral, NodeKind.ListLiteral):
            self._unpack_into(target, it_obj)
        else:
            raise self._malformed(target, "loop target")

    def _stmt_try(self, stmt: AstNode) -> None:
        body = stmt.children[0]
        ctx = self._call_builtin("__try__", [], self._guess_vec(stmt), stmt)
        self.interp.push_context(stmt.node_id, "__try__", ctx)
        self.exec_block(body)
        self.interp.pop_context()
        for part in stmt.children[1:]:
            if part.kind is NodeKind.Except:
                self._lower_except(part)
            elif part.kind is NodeKind.Else:
                else_ctx = self._call_builtin("__else__", [], self._guess_vec(part), part)
                self.interp.push_context(part.node_id, "__else__", else_ctx)
                self.exec_block(part.children[0])
                self.interp.pop_context()
            elif part.kind is NodeKind.Finally:
                fin_ctx = self._call_builtin("__finally__", [], self._guess_vec(part), part)
                self.interp.push_context(part.node_id, "__finally__", fin_ctx)
                self.exec_block(part.children[0])
                self.interp.pop_context()
            else:
                raise self._malformed(part, "try clause")

    def _lower_except(self, part: AstNode) -> None:
        args = []
        if len(part.children) > 1:
            args.append(self.eval_expr(part.children[0]))
        block = part.children[-1]
        ctx = self._call_builtin("__except__", args, self._guess_vec(part), part)
        handler_name = self.tree.handler_names.get(part.node_id)
        self.interp.push_context(part.node_id, "__except__", ctx)
        if handler_name:
            self.interp.store(handler_name, ctx)
        self.exec_block(block)
        self.interp.pop_context()

    def _stmt_function_definition(self, stmt: AstNode) -> None:
        name_node, params, body = stmt.children
        fname = self.tree.text(name_node)
        self.interp.push_scope(fname)
        before = []
        for param in params.children:
            before.append(self._bind_parameter(param))
        self.exec_block(body)
        ret_obj = self.interp.find_in_top_scope(RETURN_SLOT)
        after = [self.interp.find_in_top_scope(self._param_name(p)) for p in params.children]
        self.interp.pop_scope()
        if ret_obj is None:
            ret_obj = self._none_object(stmt)
        g_f = self._guess_obj(stmt, f"def {fname}")
        args = [g_f] + before + [ret_obj] + after
        overrides = {1 + len(before): (ret_obj.vector, ret_obj.vector)}
        theta_obj = self.interp.lambda_call(
            self.interp.builtins.function_value("__compile_function__"),
            args, self._guess_vec(stmt), stmt.node_id, pair_overrides=overrides)
        self.interp.store(fname, theta_obj)
        self.function_values[theta_obj.object_id] = FunctionValue(
            kind="compiled", theta=theta_obj.vector, name=fname)

    def _param_name(self, param: AstNode) -> str:
        return self.tree.text(param.children[0])

    def _bind_parameter(self, param: AstNode) -> AbstractObject:
        name_node = param.children[0]
        pname = self.tree.text(name_node)
        if param.kind is NodeKind.Parameter:
            obj = self._guess_obj(name_node, pname)
        elif param.kind is NodeKind.DefaultParameter:
            default = self.eval_expr(param.children[1])
            key = self._guess_obj(name_node, pname)
            obj = self._call_builtin("__default_parameter__", [key, default],
                                     self._guess_vec(name_node), param)
        else:
            raise self._malformed(param, "parameter")
        self.interp.store(pname, obj)
        return obj

    # -- assignment targets -----------------------------------------------------

    def assign_target(self, target: AstNode, value: AbstractObject) -> None:
        if target.kind is NodeKind.Identifier:
            self.interp.store(self.tree.text(target), value)
        elif target.kind in (NodeKind.TupleLiteral, NodeKind.ListLiteral):
            self._unpack_into(target, value)
        elif target.kind in (NodeKind.Subscript, NodeKind.Attribute):
            base, key_obj = self._target_base_and_key(target)
            self._assign_into(target, base, key_obj, value)
        else:
            raise self._malformed(target, "assignment target")

    def _target_base_and_key(self, target: AstNode):
        base_node, key_node = target.children
        base = self.eval_expr(base_node)
        if target.kind is NodeKind.Subscript:
            key = self.eval_expr(key_node)
        else:
            key = self._guess_obj(key_node, self.tree.text(key_node))
        return base, key

    def _assign_into(self, target: AstNode, base: AbstractObject,
                     key: AbstractObject, value: AbstractObject) -> None:
        result = self._call_builtin("__subscript_assign__", [base, key, value],
                                    self._guess_vec(target), target)
        base_node = target.children[0]
        if base_node.kind is NodeKind.Identifier:
            self.interp.store(self.tree.text(base_node), result)

    def _unpack_into(self, target: AstNode, value: AbstractObject) -> None:
        for i, element in enumerate(target.children):
            idx_obj = self.interp.guess(self.executor.unpack_index_row(i),
                                        element.node_id, f"__unpack_index_{i}__")
            item = self._call_builtin("__unpack_k__", [value, idx_obj],
                                      self._guess_vec(element), element)
            self.assign_target(element, item)

    # -- expressions ---------------------------------------------------------------

    def eval_expr(self, node: AstNode) -> AbstractObject:
        kind = node.kind
        if kind is NodeKind.Identifier:
            name = self.tree.text(node)
            return self.interp.lookup(name, node, guess_vector=self._guess_vec(node))
        if kind in (NodeKind.StringLit, NodeKind.NumberLit, NodeKind.BoolLit,
                    NodeKind.NoneLit):
            return self._guess_obj(node, self.tree.text(node))
        if kind is NodeKind.BinaryOp:
            return self._expr_binary(node)
        if kind is NodeKind.UnaryOp:
            op = self._operator(node, "-")
            value = self.eval_expr(node.children[0])
            return self._call_builtin(op, [value], self._guess_vec(node), node)
        if kind is NodeKind.BooleanOp:
            op = self._operator(node, "and")
            values = [self.eval_expr(child) for child in node.children]
            return self._call_builtin(op, values, self._guess_vec(node), node)
        if kind is NodeKind.Comparison:
            return self._expr_comparison(node)
        if kind is NodeKind.Call:
            return self._expr_call(node)
        if kind is NodeKind.Attribute:
            value = self.eval_expr(node.children[0])
            attr = node.children[1]
            key = self._guess_obj(attr, self.tree.text(attr))
            return self._call_builtin("__get_attr__", [value, key],
                                      self._guess_vec(node), node)
        if kind is NodeKind.Subscript:
            value = self.eval_expr(node.children[0])
            index = self.eval_expr(node.children[1])
            return self._call_builtin("__subscript__", [value, index],
                                      self._guess_vec(node), node)
        if kind is NodeKind.Slice:
            parts = [self.eval_expr(child) for child in node.children]
            return self._call_builtin("__slice__", parts, self._guess_vec(node), node)
        if kind in (NodeKind.ListLiteral, NodeKind.TupleLiteral, NodeKind.SetLiteral):
            return self._expr_collection(node)
        if kind is NodeKind.DictLiteral:
            return self._expr_dict(node)
        if kind in (NodeKind.ListComprehension, NodeKind.DictComprehension):
            return self._expr_comprehension(node)
        if kind is NodeKind.ConditionalExpression:
            return self._expr_conditional(node)
        if kind is NodeKind.Pair:
            return self._expr_pair(node)
        if kind is NodeKind.Unsupported:
            raise self._unsupported(node)
        raise self._malformed(node, "expression")

    def _expr_binary(self, node: AstNode) -> AbstractObject:
        op = self._operator(node, "")
        if op == "@" or not op:
            raise self._unsupported(node)
        left = self.eval_expr(node.children[0])
        right = self.eval_expr(node.children[1])
        return self._call_builtin(op, [left, right], self._guess_vec(node), node)

    def _expr_comparison(self, node: AstNode) -> AbstractObject:
        ops = self.tree.operators.get(node.node_id, ())
        if len(ops) != len(node.children) - 1:
            raise self._malformed(node, "comparison shape")
        operands = [self.eval_expr(child) for child in node.children]
        links = []
        for i, op in enumerate(ops):
            negate = op in ("not in", "is not")
            base = {"not in": "in", "is not": "is"}.get(op, op)
            link = self._call_builtin(base, [operands[i], operands[i + 1]],
                                      self._guess_vec(node), node)
            if negate:
                link = self._call_builtin("not", [link], self._guess_vec(node), node)
            links.append(link)
        if len(links) == 1:
            return links[0]
        return self._call_builtin("and", links, self._guess_vec(node), node)

    def _expr_call(self, node: AstNode) -> AbstractObject:
        callee_node = node.children[0]
        fv = self._resolve_callee(callee_node)
        args = []
        for child in node.children[1:]:
            if child.kind is NodeKind.Argument:
                inner = child.children[0]
                value = self.eval_expr(inner)
                if self.tree.text(child).startswith("*"):
                    value = self._call_builtin("__list_splat__", [value],
                                               self._guess_vec(child), child)
                args.append(value)
            elif child.kind is NodeKind.KeywordArgument:
                if len(child.children) == 1:
                    value = self.eval_expr(child.children[0])
                    args.append(self._call_builtin("__dictionary_splat__", [value],
                                                   self._guess_vec(child), child))
                else:
                    key_node, value_node = child.children
                    key = self._guess_obj(key_node, self.tree.text(key_node))
                    value = self.eval_expr(value_node)
                    args.append(self._call_builtin("__keyword_argument__", [key, value],
                                                   self._guess_vec(child), child))
            else:
                raise self._malformed(child, "call argument")
        args = args[: self.interp.config.max_args]
        return self.interp.lambda_call(fv, args, self._guess_vec(node), node.node_id)

    def _resolve_callee(self, callee: AstNode) -> FunctionValue:
        if callee.kind is NodeKind.Identifier:
            name = self.tree.text(callee)
            obj = self.interp.lookup(name, callee, guess_vector=self._guess_vec(callee))
            compiled = self.function_values.get(obj.object_id)
            if compiled is not None:
                return compiled
            return FunctionValue(kind="guessed", theta=obj.vector, name=name)
        obj = self.eval_expr(callee)
        if callee.kind is NodeKind.Attribute:
            name = self.tree.text(callee.children[1])
        else:
            name = _clean_label(self.tree.text(callee))
        compiled = self.function_values.get(obj.object_id)
        if compiled is not None:
            return compiled
        return FunctionValue(kind="guessed", theta=obj.vector, name=name)

    def _expr_collection(self, node: AstNode) -> AbstractObject:
        elements = [self.eval_expr(child) for child in node.children]
        if node.kind is NodeKind.ListLiteral:
            builtin = "__list_of__"
        elif node.kind is NodeKind.SetLiteral:
            builtin = "__set_of__"
        elif self.tree.text(node).startswith("("):
            builtin = "__tuple_of__"
        else:
            builtin = "__expression_list_of__"
        return self._call_builtin(builtin, elements, self._guess_vec(node), node)

    def _expr_pair(self, node: AstNode) -> AbstractObject:
        if len(node.children) == 1:     # ** splat entry
            value = self.eval_expr(node.children[0])
            return self._call_builtin("__dictionary_splat__", [value],
                                      self._guess_vec(node), node)
        key = self.eval_expr(node.children[0])
        value = self.eval_expr(node.children[1])
        return self._call_builtin("__dictionary_key_value__", [key, value],
                                  self._guess_vec(node), node)

    def _expr_dict(self, node: AstNode) -> AbstractObject:
        pairs = [self._expr_pair(child) for child in node.children]
        return self._call_builtin("__dictionary_of__", pairs, self._guess_vec(node), node)

    def _expr_comprehension(self, node: AstNode) -> AbstractObject:
        flavor, if_counts = self.tree.comp_shape[node.node_id]
        head_len = 2 if flavor == "dict" else 1
        head = node.children[:head_len]
        rest = node.children[head_len:]
        ctx_builtin = _COMP_CONTEXT[flavor]
        self.interp.push_scope(f"<{flavor}comp>")
        pushed = 0
        cursor = 0
        for n_ifs in if_counts:
            target, iterable = rest[cursor], rest[cursor + 1]
            cursor += 2
            it_obj = self.eval_expr(iterable)
            ctx = self._call_builtin(ctx_builtin, [it_obj], self._guess_vec(iterable), node)
            self.interp.push_context(node.node_id, ctx_builtin, ctx)
            pushed += 1
            self._bind_loop_target(target, it_obj)
            for _ in range(n_ifs):
                cond = rest[cursor]
                cursor += 1
                cond_obj = self.eval_expr(cond)
                if_ctx = self._call_builtin("__if_clause__", [cond_obj],
                                            self._guess_vec(cond), cond)
                self.interp.push_context(cond.node_id, "__if_clause__", if_ctx)
                pushed += 1
        if flavor == "dict":
            key = self.eval_expr(head[0])
            value = self.eval_expr(head[1])
            entry = self._call_builtin("__dictionary_key_value__", [key, value],
                                       self._guess_vec(node), node)
            result = self._call_builtin(_COMP_CLOSER[flavor], [entry],
                                        self._guess_vec(node), node)
        else:
            item = self.eval_expr(head[0])
            result = self._call_builtin(_COMP_CLOSER[flavor], [item],
                                        self._guess_vec(node), node)
        for _ in range(pushed):
            self.interp.pop_context()
        self.interp.pop_scope()
        return result

    def _expr_conditional(self, node: AstNode) -> AbstractObject:
        body, test, orelse = node.children
        cond = self.eval_expr(test)
        ctx = self._call_builtin("__conditional_expression__", [cond],
                                 self._guess_vec(test), node)
        self.interp.push_context(node.node_id, "__conditional_expression__", ctx)
        a = self.eval_expr(body)
        b = self.eval_expr(orelse)
        result = self._call_builtin("__conditional_expression__", [a, b],
                                    self._guess_vec(node), node)
        self.interp.pop_context()
        return result


def generate(tree: SyntaxTree, interp: Interpreter, guesser: Guesser,
             encoding: TokenEncoding, executor) -> GenerationResult:
    return CodeGenerator(tree, interp, guesser, encoding, executor).generate()
