"""Execution-based training: data-flow graph and the three batch losses.

L1 (return-variable classification): can the executed value of an
assignment's right side pick out the guessed vector of its left-side name
among K candidates drawn from the batch?  L2 (argument discrimination):
does a call's return distinguish the genuine arguments from a corrupted
re-execution?  L3 (data-flow discrimination): do two object vectors reveal
whether a directed data-flow path connects them?

The batch engine runs one logical worker per in-flight script (pool size
batch/2).  Workers suspend at every lambda request; a coordinator gathers
the pending requests of all live workers into rounds, serves them in slot
order, and resumes the workers, so scheduling never depends on thread
timing.  Requests are served item-by-item inside each round, which keeps
batched results bit-identical to serial execution.  A shared per-batch
budget caps granted lambda calls; once it is spent, every in-flight script
is cut short and its partial trace still contributes to the losses.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .codegen import CodegenError, CodeGenerator, GenerationResult
from .config import Config
from .executor import ExecutorOutput
from .interpreter import ScriptTruncated
from .nets import init_linear, init_mlp, linear, mlp
from .parser import parse


def init_loss_params(store: ad.ParameterStore, rng, config: Config) -> None:
    init_mlp(store, rng, "loss.alpha", 2 * config.h, 2 * config.h, 1)
    init_mlp(store, rng, "loss.beta", config.h, config.h, 1)
    init_mlp(store, rng, "loss.phi", 2 * config.h, 2 * config.h, 1)


# ---------------------------------------------------------------------------
# data-flow graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataFlowGraph:
    nodes: frozenset
    edges: frozenset            # (arg_object_id, result_object_id)
    adjacency: dict

    def reachable_from(self, src: int) -> frozenset:
        seen = set()
        frontier = [src]
        while frontier:
            current = frontier.pop()
            for nxt in self.adjacency.get(current, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return frozenset(seen)

    def has_path(self, a: int, b: int) -> bool:
        return b in self.reachable_from(a)


def build_dfg(records) -> DataFlowGraph:
    nodes = set()
    edges = set()
    adjacency: dict[int, list] = {}
    for record in records:
        result_id = record.result.object_id
        nodes.add(result_id)
        for arg in record.args:
            nodes.add(arg.object_id)
            edge = (arg.object_id, result_id)
            if edge not in edges:
                edges.add(edge)
                adjacency.setdefault(arg.object_id, []).append(result_id)
    return DataFlowGraph(nodes=frozenset(nodes), edges=frozenset(edges),
                         adjacency=adjacency)


# ---------------------------------------------------------------------------
# the three losses (pure functions of results, parameters, and one rng)
# ---------------------------------------------------------------------------


@dataclass
class LossReport:
    loss: ad.Tensor | None
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def _mean(parts: list) -> ad.Tensor:
    total = parts[0]
    for part in parts[1:]:
        total = ad.add(total, part)
    return ad.scale(total, 1.0 / len(parts))


def loss_return_variable(store, results: list, config: Config, rng) -> LossReport:
    """Softmax cross-entropy over K candidate left-side name guesses."""
    items = []
    for result in results:
        if result is None:
            continue
        for sample in result.l1_samples:
            items.append((sample.value.executed, sample.lhs_guess, sample.name))
    if len(items) < config.k_negatives:
        return LossReport(None, 0, 0)
    picked = items
    if len(items) > config.samples_per_batch:
        chosen = rng.choice(len(items), size=config.samples_per_batch, replace=False)
        picked = [items[i] for i in sorted(chosen)]
    parts, correct = [], 0
    for r_vec, l_true, name in picked:
        other_indices = [i for i, it in enumerate(items) if it[2] != name]
        if len(other_indices) < config.k_negatives - 1:
            continue
        negatives = rng.choice(len(other_indices), size=config.k_negatives - 1,
                               replace=False)
        candidates = [items[other_indices[i]][1] for i in negatives]
        true_pos = int(rng.integers(config.k_negatives))
        candidates.insert(true_pos, l_true)
        rows = ad.concat([ad.concat([r_vec, cand], axis=1) for cand in candidates],
                         axis=0)
        logits = ad.transpose(mlp(store, "loss.alpha", rows))
        parts.append(ad.cross_entropy_logits(logits, true_pos))
        if int(np.argmax(logits.data)) == true_pos:
            correct += 1
    if not parts:
        return LossReport(None, 0, 0)
    return LossReport(_mean(parts), correct, len(parts))


def loss_argument_discrimination(store, executor, results: list, config: Config,
                                 rng) -> LossReport:
    """BCE between genuine call returns and one-argument-corrupted replays."""
    calls = []
    pool = []
    for slot, result in enumerate(results):
        if result is None:
            continue
        for record in result.records:
            for obj in record.args:
                pool.append(obj)
            pool.append(record.result)
            if record.args:
                calls.append(record)
    if not calls or len(pool) < 2:
        return LossReport(None, 0, 0)
    picked = calls
    if len(calls) > config.samples_per_batch:
        chosen = rng.choice(len(calls), size=config.samples_per_batch, replace=False)
        picked = [calls[i] for i in sorted(chosen)]
    parts, correct = [], 0
    for record in picked:
        ctx_vectors = [c.vector for c in record.contexts]
        if config.l2_negative_mode == "single_arg":
            corrupted = list(record.pairs)
            position = int(rng.integers(len(corrupted)))
            repl = pool[int(rng.integers(len(pool)))]
            corrupted[position] = (repl.guessed, repl.vector)
        else:
            corrupted = []
            for _ in record.pairs:
                repl = pool[int(rng.integers(len(pool)))]
                corrupted.append((repl.guessed, repl.vector))
        fake = executor.execute(record.callee.theta, ctx_vectors, corrupted)
        pos_logit = mlp(store, "loss.beta", record.result.executed)
        neg_logit = mlp(store, "loss.beta", fake.ret)
        parts.append(ad.add(ad.bce_with_logits(pos_logit, 1.0),
                            ad.bce_with_logits(neg_logit, 0.0)))
        correct += int(pos_logit.data.item() > 0.0) + int(neg_logit.data.item() <= 0.0)
    return LossReport(_mean(parts), correct, 2 * len(parts))


def _pair_partition(dfg: DataFlowGraph):
    ids = sorted(dfg.nodes)
    connected, unconnected = [], []
    reach = {a: dfg.reachable_from(a) for a in ids}
    for a in ids:
        for b in ids:
            if a == b:
                continue
            (connected if b in reach[a] else unconnected).append((a, b))
    return connected, unconnected


def loss_dataflow_discrimination(store, results: list, config: Config, rng) -> LossReport:
    """BCE on path-connected vs unconnected object pairs, one each per script."""
    parts, correct = [], 0
    for result in results:
        if result is None or not result.records:
            continue
        if len(parts) >= config.samples_per_batch:
            break
        dfg = build_dfg(result.records)
        connected, unconnected = _pair_partition(dfg)
        if not connected or not unconnected:
            continue
        objects = {}
        for record in result.records:
            for obj in record.args:
                objects[obj.object_id] = obj
            objects[record.result.object_id] = record.result
        pos = connected[int(rng.integers(len(connected)))]
        neg = unconnected[int(rng.integers(len(unconnected)))]
        pos_logit = mlp(store, "loss.phi", ad.concat(
            [objects[pos[0]].vector, objects[pos[1]].vector], axis=1))
        neg_logit = mlp(store, "loss.phi", ad.concat(
            [objects[neg[0]].vector, objects[neg[1]].vector], axis=1))
        parts.append(ad.add(ad.bce_with_logits(pos_logit, 1.0),
                            ad.bce_with_logits(neg_logit, 0.0)))
        correct += int(pos_logit.data.item() > 0.0) + int(neg_logit.data.item() <= 0.0)
    if not parts:
        return LossReport(None, 0, 0)
    return LossReport(_mean(parts), correct, 2 * len(parts))


# ---------------------------------------------------------------------------
# batch execution: workers suspend at lambda requests, coordinator serves rounds
# ---------------------------------------------------------------------------


_TRUNCATE = object()


class _ProxySemantics:
    """Interpreter backend that parks the worker until the round is served."""

    def __init__(self, task: "_ScriptTask"):
        self.task = task

    def execute(self, theta, contexts, arg_pairs) -> ExecutorOutput:
        task = self.task
        task.request = (theta, contexts, arg_pairs)
        task.request_ready.set()
        task.response_ready.wait()
        task.response_ready.clear()
        response = task.response
        task.response = None
        if response is _TRUNCATE:
            raise ScriptTruncated()
        return response


class _ScriptTask:
    def __init__(self, slot: int, code: str):
        self.slot = slot
        self.code = code
        self.request = None
        self.response = None
        self.request_ready = threading.Event()
        self.response_ready = threading.Event()
        self.done = False
        self.result: GenerationResult | None = None
        self.error: CodegenError | None = None
        self.crash: BaseException | None = None
        self.truncated = False
        self.generator: CodeGenerator | None = None
        self.thread: threading.Thread | None = None

    def partial_result(self) -> GenerationResult:
        gen = self.generator
        return GenerationResult(
            tree=gen.tree, interp=gen.interp, encoding=gen.encoding,
            trace=gen.interp.trace, records=gen.interp.records,
            statement_counts=gen.statement_counts, branch_counts=gen.branch_counts,
            l1_samples=gen.l1_samples,
            statement_dispatches=gen.statement_dispatches)


@dataclass
class BatchResult:
    results: list                # GenerationResult | None per slot
    skipped: int
    lambda_calls: int
    truncated_slots: list


def run_batch(model, codes: list, config: Config, serial: bool | None = None) -> BatchResult:
    """Execute one batch of scripts; pooled threads unless ``serial``."""
    pool = config.pool_size
    if serial is None:
        serial = pool <= 1 or len(codes) <= 1
    if serial:
        return _run_batch_serial(model, codes, config)
    return _run_batch_pooled(model, codes, config, pool)


def _prepare(model, task: _ScriptTask, semantics) -> bool:
    """Parse and encode on the coordinator thread; False on codegen error."""
    try:
        tree = parse(task.code)
    except SyntaxError:
        task.error = CodegenError(-1, "MalformedNode", "syntax error")
        return False
    encoding = model.guesser.encode(task.code)
    interp = model.interpreter(semantics=semantics)
    task.generator = CodeGenerator(tree, interp, model.guesser, encoding,
                                   model.executor)
    return True


def _run_batch_serial(model, codes: list, config: Config) -> BatchResult:
    results: list = [None] * len(codes)
    skipped = 0
    granted = 0
    truncated = []
    budget = {"left": config.lambda_cap_per_batch}

    class _BudgetSemantics:
        def __init__(self, executor):
            self.executor = executor

        def execute(self, theta, contexts, arg_pairs):
            if budget["left"] <= 0:
                raise ScriptTruncated()
            budget["left"] -= 1
            return self.executor.execute(theta, contexts, arg_pairs)

    semantics = _BudgetSemantics(model.executor)
    for slot, code in enumerate(codes):
        task = _ScriptTask(slot, code)
        if not _prepare(model, task, semantics):
            skipped += 1
            continue
        try:
            results[slot] = task.generator.generate()
        except ScriptTruncated:
            results[slot] = task.partial_result()
            truncated.append(slot)
        except CodegenError:
            skipped += 1
    granted = config.lambda_cap_per_batch - budget["left"]
    return BatchResult(results=results, skipped=skipped, lambda_calls=granted,
                       truncated_slots=truncated)


def _run_batch_pooled(model, codes: list, config: Config, pool: int) -> BatchResult:
    tasks = [_ScriptTask(slot, code) for slot, code in enumerate(codes)]
    results: list = [None] * len(codes)
    skipped = 0
    truncated = []
    # Builtin embedding slots are handed out on first use.  Workers racing
    # to resolve them would make the assignment depend on thread timing, so
    # warm the table in slot order first; dry runs resolve exactly the
    # builtins each script uses, in the order the serial path would.
    for task in tasks:
        try:
            model.dry_run(task.code)
        except (CodegenError, SyntaxError):
            pass
    budget_left = config.lambda_cap_per_batch
    pending = list(tasks)
    active: list = []

    def work(task: _ScriptTask):
        try:
            task.result = task.generator.generate()
        except ScriptTruncated:
            task.result = task.partial_result()
            task.truncated = True
        except CodegenError as err:
            task.error = err
        except BaseException as exc:       # faults must surface, not vanish
            task.crash = exc
        finally:
            task.done = True
            task.request_ready.set()

    while pending or active:
        while len(active) < pool and pending:
            task = pending.pop(0)
            if not _prepare(model, task, _ProxySemantics(task)):
                skipped += 1
                continue
            task.thread = threading.Thread(target=work, args=(task,), daemon=True)
            active.append(task)
            task.thread.start()
        if not active:
            continue
        for task in active:
            task.request_ready.wait()
        still_active = []
        for task in active:                      # slot order is creation order
            if task.done:
                task.thread.join()
                if task.crash is not None:
                    raise task.crash
                if task.error is not None:
                    skipped += 1
                else:
                    results[task.slot] = task.result
                    if task.truncated:
                        truncated.append(task.slot)
                continue
            still_active.append(task)
            theta, contexts, arg_pairs = task.request
            task.request = None
            task.request_ready.clear()
            if budget_left <= 0:
                task.response = _TRUNCATE
            else:
                budget_left -= 1
                task.response = model.executor.execute(theta, contexts, arg_pairs)
            task.response_ready.set()
        active = still_active
    granted = config.lambda_cap_per_batch - budget_left
    return BatchResult(results=results, skipped=skipped, lambda_calls=granted,
                       truncated_slots=sorted(truncated))


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class BatchMetrics:
    step: int
    l1: float
    l2: float
    l3: float
    acc1: float
    acc2: float
    acc3: float
    scripts_skipped: int
    lambda_calls: int

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "L1": self.l1, "L2": self.l2,
                           "L3": self.l3, "acc1": self.acc1, "acc2": self.acc2,
                           "acc3": self.acc3, "scripts_skipped": self.scripts_skipped,
                           "lambda_calls": self.lambda_calls}, sort_keys=True)


def batch_losses(model, batch: BatchResult, config: Config, rng):
    """All three loss reports for one executed batch."""
    r1 = loss_return_variable(model.store, batch.results, config, rng)
    r2 = loss_argument_discrimination(model.store, model.executor, batch.results,
                                      config, rng)
    r3 = loss_dataflow_discrimination(model.store, batch.results, config, rng)
    return r1, r2, r3


def _combined(reports) -> ad.Tensor | None:
    live = [r.loss for r in reports if r.loss is not None]
    if not live:
        return None
    total = live[0]
    for part in live[1:]:
        total = ad.add(total, part)
    return total


def train(model, codes: list, config: Config, log_path: str | None = None,
          serial: bool | None = None, log_header: dict | None = None) -> list:
    """Epoch loop: execute, compute L1+L2+L3, backward, step. Returns metrics."""
    rng = np.random.default_rng(config.seed)
    order_rng = np.random.default_rng((config.seed, 0x5EED))
    steps_per_epoch = max(1, (len(codes) + config.batch_size - 1) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    history: list[BatchMetrics] = []
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    if log and log_header is not None:
        log.write(json.dumps(log_header, sort_keys=True) + "\n")
    step = 0
    try:
        for _ in range(config.epochs):
            order = order_rng.permutation(len(codes))
            for start in range(0, len(codes), config.batch_size):
                chunk = [codes[i] for i in order[start:start + config.batch_size]]
                batch = run_batch(model, chunk, config, serial=serial)
                r1, r2, r3 = batch_losses(model, batch, config, rng)
                loss = _combined((r1, r2, r3))
                step += 1
                if loss is not None:
                    model.store.zero_grad()
                    ad.backward(loss)
                    lr = ad.linear_schedule(step, total_steps, config.lr,
                                            config.warmup_frac)
                    ad.optimizer_step(model.store, lr,
                                      weight_decay=config.weight_decay)
                metrics = BatchMetrics(
                    step=step,
                    l1=r1.loss.data.item() if r1.loss is not None else 0.0,
                    l2=r2.loss.data.item() if r2.loss is not None else 0.0,
                    l3=r3.loss.data.item() if r3.loss is not None else 0.0,
                    acc1=r1.accuracy, acc2=r2.accuracy, acc3=r3.accuracy,
                    scripts_skipped=batch.skipped, lambda_calls=batch.lambda_calls)
                history.append(metrics)
                if log:
                    log.write(metrics.to_json() + "\n")
    finally:
        if log:
            log.close()
    return history


def evaluate(model, codes: list, config: Config, rng=None,
             serial: bool | None = None) -> dict:
    """Frozen-parameter pass over a corpus; aggregates the three accuracies."""
    if rng is None:
        rng = np.random.default_rng((config.seed, 0xEA71))
    totals = {"l1": [0, 0], "l2": [0, 0], "l3": [0, 0],
              "loss1": 0.0, "loss2": 0.0, "loss3": 0.0, "batches": 0,
              "skipped": 0, "lambda_calls": 0}
    for start in range(0, len(codes), config.batch_size):
        chunk = codes[start:start + config.batch_size]
        batch = run_batch(model, chunk, config, serial=serial)
        r1, r2, r3 = batch_losses(model, batch, config, rng)
        for key, rep in (("l1", r1), ("l2", r2), ("l3", r3)):
            totals[key][0] += rep.correct
            totals[key][1] += rep.total
        totals["loss1"] += r1.loss.data.item() if r1.loss is not None else 0.0
        totals["loss2"] += r2.loss.data.item() if r2.loss is not None else 0.0
        totals["loss3"] += r3.loss.data.item() if r3.loss is not None else 0.0
        totals["batches"] += 1
        totals["skipped"] += batch.skipped
        totals["lambda_calls"] += batch.lambda_calls
    batches = max(1, totals["batches"])
    return {
        "acc1": totals["l1"][0] / totals["l1"][1] if totals["l1"][1] else 0.0,
        "acc2": totals["l2"][0] / totals["l2"][1] if totals["l2"][1] else 0.0,
        "acc3": totals["l3"][0] / totals["l3"][1] if totals["l3"][1] else 0.0,
        "L1": totals["loss1"] / batches, "L2": totals["loss2"] / batches,
        "L3": totals["loss3"] / batches,
        "scripts_skipped": totals["skipped"],
        "lambda_calls": totals["lambda_calls"],
    }
