"""Corpus ingestion, filter rules, statistics, and a themed script synthesizer.

Ingestion accepts a directory of ``.py`` files or a JSON-lines file with one
``{"code": ...}`` object per line; script ids are content hashes, so equal
sources always collide to equal ids.

Filtering drops scripts that are longer than ``config.max_chars``, scripts
whose lowering raises, and labeled misuse scripts whose labels are
inconsistent with a tainted dry run.  The counts land in a FilterReport.

Synthesis emits small programs over themed name pools (temperature, money,
geometry) where each derived name is produced by a fixed rule, so the
mapping from computed values to names is learnable.  While a script is being
emitted, a symbolic twin of the lowering allocates object ids in the exact
order the real interpreter would, which yields two independent oracles per
script: the statement-dispatch count and the full data-flow edge set.

Misuse injection swaps one call argument for a different visible name and
records where, so tainted re-execution can verify the label.
"""

from __future__ import annotations

import ast
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .codegen import CodegenError
from .config import Config
from .misuse import MisuseExample, resolve_labels

ORIGIN_INGESTED = "ingested"
ORIGIN_SYNTHETIC = "synthetic"


class Ineligible(Exception):
    """A script offers no argument swap that a tainted replay could verify."""


@dataclass
class MisuseLabel:
    byte_offset: int
    correct_name: str
    wrong_name: str
    call_span: tuple

    def to_dict(self) -> dict:
        return {"byte_offset": self.byte_offset, "correct_name": self.correct_name,
                "wrong_name": self.wrong_name, "call_span": list(self.call_span)}


@dataclass
class Script:
    id: str
    code: str
    char_count: int
    origin: str
    oracle: dict | None = None

    @classmethod
    def make(cls, code: str, origin: str, oracle: dict | None = None) -> "Script":
        digest = hashlib.sha256(code.encode("utf-8")).hexdigest()[:12]
        return cls(id=digest, code=code, char_count=len(code),
                   origin=origin, oracle=oracle)


@dataclass
class FilterReport:
    total: int = 0
    too_long: int = 0
    codegen_error: int = 0
    misuse_label_error: int = 0
    retained: int = 0

    @property
    def retained_pct(self) -> float:
        return 100.0 * self.retained / self.total if self.total else 0.0

    def to_json(self) -> str:
        payload = {"total": self.total, "too_long": self.too_long,
                   "codegen_error": self.codegen_error,
                   "misuse_label_error": self.misuse_label_error,
                   "retained": self.retained,
                   "retained_pct": round(self.retained_pct, 2)}
        return json.dumps(payload, sort_keys=True)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def load_corpus(path: str) -> list:
    """Scripts from a directory of .py files or a JSONL file.

    Per-file problems are reported to stderr and skipped; they never abort
    the rest of the load.
    """
    scripts: list[Script] = []
    if os.path.isdir(path):
        for fname in sorted(os.listdir(path)):
            if not fname.endswith(".py"):
                continue
            full = os.path.join(path, fname)
            try:
                with open(full, encoding="utf-8") as fh:
                    code = fh.read()
            except (OSError, UnicodeDecodeError) as exc:
                print(f"corpus: skipping {full}: {exc}", file=sys.stderr)
                continue
            scripts.append(Script.make(code, ORIGIN_INGESTED))
        return scripts
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                code = raw["code"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                print(f"corpus: skipping {path}:{lineno}: {exc}", file=sys.stderr)
                continue
            scripts.append(Script.make(code, ORIGIN_INGESTED))
    return scripts


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

_HARNESS: dict = {}


def _filter_harness(config: Config):
    """Tiny throwaway model used only for dry-run lowering and taint replay."""
    from .guesser import Vocabulary
    from .model import Model

    key = (config.max_args,)
    model = _HARNESS.get(key)
    if model is None:
        tiny = Config(h=8, encoder_layers=1, encoder_heads=1,
                      executor_layers=1, executor_heads=1,
                      vocab_size=16, oov_buckets=8, max_args=config.max_args)
        model = Model.fresh(tiny, Vocabulary([], 8), seed=0)
        _HARNESS[key] = model
    return model


def _script_misuse_example(script: Script) -> MisuseExample | None:
    if script.oracle and script.oracle.get("misuse"):
        label = script.oracle["misuse"]
        return MisuseExample(code=script.code, has_misuse=True,
                             byte_offset=label["byte_offset"],
                             correct_name=label["correct_name"],
                             script_id=script.id)
    return None


def apply_filters(scripts, config: Config | None = None):
    """Length, lowering, and label checks; returns (retained, FilterReport)."""
    config = config or Config()
    harness = _filter_harness(config)
    report = FilterReport(total=len(scripts))
    retained = []
    for script in scripts:
        if script.char_count > config.max_chars:
            report.too_long += 1
            continue
        try:
            harness.dry_run(script.code)
        except (CodegenError, SyntaxError):
            report.codegen_error += 1
            continue
        example = _script_misuse_example(script)
        if example is not None:
            labels, reason = resolve_labels(harness, example, dry=True)
            if labels is None:
                report.misuse_label_error += 1
                continue
        retained.append(script)
    report.retained = len(retained)
    return retained, report


# ---------------------------------------------------------------------------
# synthesis: themed rules plus a symbolic twin of the lowering
# ---------------------------------------------------------------------------

_LITS = ("2", "3", "5", "10", "1.5", "0.5", "4", "8")

# Each rule is (lhs, left operand, operator, right operand or None for a
# literal).  The lhs is a fixed function of the rule, which is what makes
# value-to-name classification learnable.
_THEMES = (
    {
        "name": "temperature",
        "seeds": ("celsius", "offset", "gain"),
        "rules": (
            ("scaled", "celsius", "*", None),
            ("fahrenheit", "scaled", "+", None),
            ("kelvin", "celsius", "+", None),
            ("delta", "fahrenheit", "-", "celsius"),
            ("ratio", "fahrenheit", "/", "kelvin"),
            ("drift", "delta", "*", "gain"),
        ),
        "undef_calls": (
            ("reading", "read_sensor", ("celsius", "offset")),
            ("calibrated", "calibrate", ("reading", "gain")),
        ),
        "helper": {"fname": "to_fahrenheit", "params": ("celsius",),
                   "body": (("scaled", "celsius", "*", None),
                            ("fahrenheit", "scaled", "+", None)),
                   "ret": "fahrenheit"},
        "helper_call": ("converted", ("celsius",)),
        "list_name": "samples",
        "loop_var": "sample",
        "loop_rule": ("adjusted", "+"),
    },
    {
        "name": "money",
        "seeds": ("price", "rate", "units"),
        "rules": (
            ("tax", "price", "*", "rate"),
            ("total", "price", "+", "tax"),
            ("discount", "total", "*", None),
            ("subtotal", "total", "-", "discount"),
            ("owed", "subtotal", "+", "tax"),
            ("margin", "owed", "-", "price"),
        ),
        "undef_calls": (
            ("quote", "fetch_quote", ("price", "units")),
            ("fee", "apply_fee", ("total", "rate")),
        ),
        "helper": {"fname": "with_tax", "params": ("price", "rate"),
                   "body": (("tax", "price", "*", "rate"),
                            ("total", "price", "+", "tax")),
                   "ret": "total"},
        "helper_call": ("billed", ("price", "rate")),
        "list_name": "amounts",
        "loop_var": "amount",
        "loop_rule": ("charged", "*"),
    },
    {
        "name": "geometry",
        "seeds": ("width", "height", "scale"),
        "rules": (
            ("area", "width", "*", "height"),
            ("rim", "width", "+", "height"),
            ("perimeter", "rim", "*", None),
            ("volume", "area", "*", "scale"),
            ("aspect", "width", "/", "height"),
            ("footprint", "area", "+", "rim"),
        ),
        "undef_calls": (
            ("shape", "load_shape", ("width", "height")),
            ("bounds", "measure", ("shape", "scale")),
        ),
        "helper": {"fname": "box_area", "params": ("width", "height"),
                   "body": (("area", "width", "*", "height"),),
                   "ret": "area"},
        "helper_call": ("patch", ("width", "height")),
        "list_name": "sides",
        "loop_var": "side",
        "loop_rule": ("stretched", "+"),
    },
)


class _Sym:
    """Mirror of the interpreter's object-id allocation and scope rules."""

    def __init__(self):
        self.next_id = 1
        self.edges: set = set()
        self.stmts = 0
        self.scopes: list[dict] = [{}]

    def alloc(self) -> int:
        oid = self.next_id
        self.next_id += 1
        return oid

    def lookup(self, name: str) -> int:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        # an unbound read self-heals: guess a fresh object and bind it
        oid = self.alloc()
        self.scopes[-1][name] = oid
        return oid

    def store(self, name: str, oid: int) -> None:
        self.scopes[-1][name] = oid

    def lam(self, args) -> int:
        result = self.alloc()
        for arg in args:
            self.edges.add((int(arg), int(result)))
        return result


class _Emitter:
    """Writes source lines while driving the symbolic twin in lock step."""

    def __init__(self, rng, sim: _Sym):
        self.rng = rng
        self.sim = sim
        self.lines: list[str] = []

    def line(self, depth: int, text: str) -> None:
        self.lines.append("    " * depth + text)

    def lit(self) -> str:
        return _LITS[int(self.rng.integers(len(_LITS)))]

    def seed_assign(self, depth: int, name: str) -> None:
        self.line(depth, f"{name} = {self.lit()}")
        self.sim.store(name, self.sim.alloc())
        self.sim.stmts += 1

    def rule_assign(self, depth: int, rule) -> None:
        lhs, a, op, b = rule
        left = self.sim.lookup(a)
        if b is None:
            text = f"{lhs} = {a} {op} {self.lit()}"
            right = self.sim.alloc()
        else:
            text = f"{lhs} = {a} {op} {b}"
            right = self.sim.lookup(b)
        self.sim.store(lhs, self.sim.lam([left, right]))
        self.line(depth, text)
        self.sim.stmts += 1

    def call_assign(self, depth: int, lhs: str, fname: str, args) -> None:
        self.sim.lookup(fname)          # first use self-heals to a guess
        arg_ids = [self.sim.lookup(a) for a in args]
        self.sim.store(lhs, self.sim.lam(arg_ids))
        self.line(depth, f"{lhs} = {fname}({', '.join(args)})")
        self.sim.stmts += 1

    def list_assign(self, depth: int, lhs: str, names) -> None:
        ids = [self.sim.lookup(n) for n in names]
        self.sim.store(lhs, self.sim.lam(ids))
        self.line(depth, f"{lhs} = [{', '.join(names)}]")
        self.sim.stmts += 1

    def if_block(self, depth: int, a: str, b: str, then_rules, else_rules) -> None:
        cond = self.sim.lam([self.sim.lookup(a), self.sim.lookup(b)])
        self.sim.lam([cond])            # branch context
        self.line(depth, f"if {a} > {b}:")
        self.sim.stmts += 1
        for rule in then_rules:
            self.rule_assign(depth + 1, rule)
        if else_rules:
            self.sim.lam([cond])        # else context
            self.line(depth, "else:")
            for rule in else_rules:
                self.rule_assign(depth + 1, rule)

    def for_block(self, depth: int, var: str, list_name: str, body_rules) -> None:
        it = self.sim.lookup(list_name)
        self.sim.lam([it])              # loop context
        self.sim.store(var, it)         # the target binds the iterable itself
        self.line(depth, f"for {var} in {list_name}:")
        self.sim.stmts += 1
        for rule in body_rules:
            self.rule_assign(depth + 1, rule)
        self.sim.lam([it])              # iterator close

    def def_block(self, depth: int, helper: dict) -> None:
        fname, params = helper["fname"], helper["params"]
        self.line(depth, f"def {fname}({', '.join(params)}):")
        self.sim.scopes.append({})
        before = []
        for p in params:
            oid = self.sim.alloc()
            self.sim.store(p, oid)
            before.append(oid)
        for rule in helper["body"]:
            self.rule_assign(depth + 1, rule)
        ret = self.sim.lookup(helper["ret"])
        self.line(depth + 1, f"return {helper['ret']}")
        self.sim.stmts += 1
        after = [self.sim.lookup(p) for p in params]
        self.sim.scopes.pop()
        guess = self.sim.alloc()
        theta = self.sim.lam([guess] + before + [ret] + after)
        self.sim.store(fname, theta)
        self.sim.stmts += 1             # the def statement itself


def _applicable_rules(theme: dict, bound: set) -> list:
    return [r for r in theme["rules"]
            if r[1] in bound and (r[3] is None or r[3] in bound)]


def _synthesize_one(rng, size_range) -> Script:
    lo, hi = size_range
    lo = max(int(lo), 4)
    target = int(rng.integers(lo, int(hi) + 1))
    n_themes = 2 if target >= 20 and rng.random() < 0.55 else 1
    order = rng.permutation(len(_THEMES))[:n_themes]
    chosen = [_THEMES[int(i)] for i in order]

    sim = _Sym()
    em = _Emitter(rng, sim)
    state = {t["name"]: {"bound": set(), "helper": False, "list": False}
             for t in chosen}

    for theme in chosen:
        for name in theme["seeds"]:
            if sim.stmts >= target:
                break
            em.seed_assign(0, name)
            state[theme["name"]]["bound"].add(name)

    while sim.stmts < target:
        remaining = target - sim.stmts
        theme = chosen[int(rng.integers(len(chosen)))]
        st = state[theme["name"]]
        bound = st["bound"]
        rules = _applicable_rules(theme, bound)
        if not rules:                   # can only happen with truncated seeds
            missing = [s for s in theme["seeds"] if s not in bound]
            em.seed_assign(0, missing[0])
            bound.add(missing[0])
            continue

        options = ["rule", "rule", "rule", "rule"]
        calls = [c for c in theme["undef_calls"] if all(a in bound for a in c[2])]
        if calls:
            options += ["undef", "undef"]
        if remaining >= 3 and len(bound) >= 2:
            options += ["if"]
        if st["list"] and remaining >= 2:
            options += ["for"]
        if not st["list"] and len(bound) >= 2:
            options += ["list"]
        helper_cost = 2 + len(theme["helper"]["body"])
        if not st["helper"] and remaining >= helper_cost:
            options += ["def"]
        if st["helper"]:
            options += ["call_helper"]

        kind = options[int(rng.integers(len(options)))]
        if kind == "rule":
            rule = rules[int(rng.integers(len(rules)))]
            em.rule_assign(0, rule)
            bound.add(rule[0])
        elif kind == "undef":
            lhs, fname, args = calls[int(rng.integers(len(calls)))]
            em.call_assign(0, lhs, fname, args)
            bound.add(lhs)
        elif kind == "if":
            names = sorted(bound)
            a = names[int(rng.integers(len(names)))]
            others = [n for n in names if n != a] or [a]
            b = others[int(rng.integers(len(others)))]
            room = remaining - 1
            want_else = room >= 2 and rng.random() < 0.6
            then_n = 1 + int(rng.integers(2)) if room - (1 if want_else else 0) >= 2 else 1
            then_rules = [rules[int(rng.integers(len(rules)))] for _ in range(then_n)]
            else_rules = [rules[int(rng.integers(len(rules)))]] if want_else else []
            em.if_block(0, a, b, then_rules, else_rules)
            for rule in then_rules + else_rules:
                bound.add(rule[0])
        elif kind == "for":
            body_n = 1 if remaining < 3 else 1 + int(rng.integers(2))
            loop_lhs, loop_op = theme["loop_rule"]
            body = [(loop_lhs, theme["loop_var"], loop_op, None)]
            for _ in range(body_n - 1):
                body.append(rules[int(rng.integers(len(rules)))])
            em.for_block(0, theme["loop_var"], theme["list_name"], body)
            bound.add(theme["loop_var"])
            bound.add(loop_lhs)
            for rule in body[1:]:
                bound.add(rule[0])
        elif kind == "list":
            names = sorted(bound)
            members = [names[int(rng.integers(len(names)))] for _ in range(3)]
            em.list_assign(0, theme["list_name"], members)
            st["list"] = True
        elif kind == "def":
            em.def_block(0, theme["helper"])
            st["helper"] = True
        else:                           # call_helper
            lhs, args = theme["helper_call"]
            em.call_assign(0, lhs, theme["helper"]["fname"], args)
            bound.add(lhs)

    code = "\n".join(em.lines) + "\n"
    oracle = {"statement_count": sim.stmts,
              "dfg_edges": sorted(sim.edges),
              "misuse": None}
    return Script.make(code, ORIGIN_SYNTHETIC, oracle)


def synthesize(seed: int, n: int, size_range=(10, 120)) -> list:
    """n themed scripts; a fixed seed reproduces the corpus byte for byte."""
    scripts = []
    for i in range(n):
        rng = np.random.default_rng((int(seed), int(i), 0x51D5))
        scripts.append(_synthesize_one(rng, size_range))
    return scripts


# ---------------------------------------------------------------------------
# misuse injection
# ---------------------------------------------------------------------------


def _line_byte_starts(code: str) -> list:
    starts = [0]
    for line in code.split("\n")[:-1]:
        starts.append(starts[-1] + len(line.encode("utf-8")) + 1)
    return starts


def _byte_offset(starts, node) -> int:
    return starts[node.lineno - 1] + node.col_offset


def _stmt_bindings(stmt) -> set:
    names: set[str] = set()
    if isinstance(stmt, (ast.Assign, ast.AnnAssign, ast.AugAssign)):
        targets = stmt.targets if isinstance(stmt, ast.Assign) else [stmt.target]
        for target in targets:
            for node in ast.walk(target):
                if isinstance(node, ast.Name):
                    names.add(node.id)
    elif isinstance(stmt, (ast.For, ast.AsyncFor)):
        for node in ast.walk(stmt.target):
            if isinstance(node, ast.Name):
                names.add(node.id)
    elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
        names.add(stmt.name)
    elif isinstance(stmt, (ast.Import, ast.ImportFrom)):
        for alias in stmt.names:
            names.add((alias.asname or alias.name).split(".")[0])
    return names


def _calls_in_expr(expr):
    """Call nodes inside one expression, skipping lambda bodies (their code
    never executes at this point)."""
    skip: set[int] = set()
    for node in ast.walk(expr):
        if isinstance(node, ast.Lambda):
            for inner in ast.walk(node.body):
                skip.add(id(inner))
    for node in ast.walk(expr):
        if isinstance(node, ast.Call) and id(node) not in skip:
            yield node


def _swap_candidates(code: str):
    """Every (occurrence, original, replacement, call) swap whose label a
    tainted replay can verify: the occurrence is a direct positional name
    argument, every argument of that call is a plain name or literal, and
    the replacement is a different name already bound and visible there.

    The scan visits expressions in the order the lowering executes them
    (each statement and branch exactly once, in source order), so "bound"
    means bound by the time the call runs.
    """
    tree = ast.parse(code)
    starts = _line_byte_starts(code)
    found: list = []

    def scan_expr(expr, enclosing):
        visible: set[str] = set()
        for layer in enclosing:
            visible |= layer
        for call in _calls_in_expr(expr):
            if call.keywords:
                continue
            if not all(isinstance(a, (ast.Name, ast.Constant)) for a in call.args):
                continue
            end = _byte_offset(starts, call) + len(
                ast.get_source_segment(code, call).encode("utf-8"))
            span = (_byte_offset(starts, call), end)
            for k, arg in enumerate(call.args):
                if not isinstance(arg, ast.Name):
                    continue
                orig = arg.id
                if orig not in visible:
                    continue
                earlier = {a.id for a in call.args[:k] if isinstance(a, ast.Name)}
                for wrong in sorted(visible):
                    if wrong == orig or wrong in earlier:
                        continue
                    found.append((_byte_offset(starts, arg), orig, wrong, span))

    def walk(body, enclosing: list):
        scope = enclosing[-1]
        for stmt in body:
            if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                for default in list(stmt.args.defaults) + \
                        [d for d in stmt.args.kw_defaults if d is not None]:
                    scan_expr(default, enclosing)
                params = {a.arg for a in (stmt.args.args + stmt.args.posonlyargs
                                          + stmt.args.kwonlyargs)}
                walk(stmt.body, enclosing + [params])
                scope.add(stmt.name)
            elif isinstance(stmt, (ast.If, ast.While)):
                scan_expr(stmt.test, enclosing)
                walk(stmt.body, enclosing)
                walk(stmt.orelse, enclosing)
            elif isinstance(stmt, (ast.For, ast.AsyncFor)):
                scan_expr(stmt.iter, enclosing)
                scope |= _stmt_bindings(stmt)       # target binds before body
                walk(stmt.body, enclosing)
                walk(stmt.orelse, enclosing)
            elif isinstance(stmt, ast.Try):
                walk(stmt.body, enclosing)
                for handler in stmt.handlers:
                    if handler.name:
                        scope.add(handler.name)
                    walk(handler.body, enclosing)
                walk(stmt.orelse, enclosing)
                walk(stmt.finalbody, enclosing)
            elif isinstance(stmt, (ast.With, ast.AsyncWith)):
                for item in stmt.items:
                    scan_expr(item.context_expr, enclosing)
                    if item.optional_vars is not None:
                        for node in ast.walk(item.optional_vars):
                            if isinstance(node, ast.Name):
                                scope.add(node.id)
                walk(stmt.body, enclosing)
            elif isinstance(stmt, ast.ClassDef):
                scope.add(stmt.name)               # lowering rejects these,
                                                    # but keep the scan total
            else:
                scan_expr(stmt, enclosing)
                scope |= _stmt_bindings(stmt)

    walk(tree.body, [set()])
    return found


def inject_misuse(script: Script, rng):
    """Swap one call argument for another visible name.

    Returns (new Script, MisuseLabel).  The new script keeps the original's
    statement-count oracle (a name swap cannot change statement structure)
    but drops the data-flow oracle, which the swap invalidates.  Raises
    Ineligible when no verifiable swap exists.
    """
    try:
        candidates = _swap_candidates(script.code)
    except SyntaxError as exc:
        raise Ineligible(f"unparseable script: {exc}") from exc
    if not candidates:
        raise Ineligible("no call argument has a visible replacement")
    offset, orig, wrong, call_span = candidates[int(rng.integers(len(candidates)))]
    raw = script.code.encode("utf-8")
    patched = raw[:offset] + wrong.encode("utf-8") \
        + raw[offset + len(orig.encode("utf-8")):]
    code = patched.decode("utf-8")
    label = MisuseLabel(byte_offset=offset, correct_name=orig,
                        wrong_name=wrong, call_span=call_span)
    oracle = None
    if script.oracle is not None:
        oracle = {"statement_count": script.oracle.get("statement_count"),
                  "dfg_edges": None, "misuse": label.to_dict()}
    return Script.make(code, script.origin, oracle), label


def make_misuse_corpus(scripts, seed: int, fraction: float = 0.5) -> list:
    """Balanced labeled corpus: each script is kept clean or injected."""
    rng = np.random.default_rng((int(seed), 0x4D11))
    examples = []
    for script in scripts:
        inject = rng.random() < fraction
        if inject:
            try:
                bad, label = inject_misuse(script, rng)
            except Ineligible:
                inject = False
            else:
                examples.append(MisuseExample(
                    code=bad.code, has_misuse=True,
                    byte_offset=label.byte_offset,
                    correct_name=label.correct_name))
        if not inject:
            examples.append(MisuseExample(code=script.code, has_misuse=False))
    return examples


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _histogram(values, bin_width: int) -> list:
    bins: dict[int, int] = {}
    for v in values:
        bins[v // bin_width] = bins.get(v // bin_width, 0) + 1
    return [(b * bin_width, (b + 1) * bin_width, count)
            for b, count in sorted(bins.items())]


def char_histogram(scripts, bin_width: int = 500) -> list:
    return _histogram([s.char_count for s in scripts], bin_width)


def lambda_histogram(scripts, config: Config | None = None,
                     bin_width: int = 10) -> list:
    config = config or Config()
    harness = _filter_harness(config)
    counts = []
    for script in scripts:
        try:
            counts.append(len(harness.dry_run(script.code).records))
        except (CodegenError, SyntaxError):
            continue
    return _histogram(counts, bin_width)


def write_histograms(scripts, out_dir: str, config: Config | None = None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"chars": os.path.join(out_dir, "char_hist.csv"),
             "lambdas": os.path.join(out_dir, "lambda_hist.csv")}
    for key, rows in (("chars", char_histogram(scripts)),
                      ("lambdas", lambda_histogram(scripts, config))):
        with open(paths[key], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            writer.writerows(rows)
    return paths
