"""Variable-misuse detection, localization, and repair over executed scripts.

Every head reads the same evidence a person debugging the script would:
the sequence of call returns, the per-argument read-outs of one call, and
re-executions of that call with candidate substitutions.  Five heads:

  kappa  script-level misuse probability, read from a marker row prepended
         to the sequence of call returns
  eta    per-return corruption scores; a training-only auxiliary signal,
         inference never consults it
  psi    which call first consumed the misused value (softmax over calls)
  tau    which argument of that call carries it (softmax over the call's
         argument read-outs)
  pi     which visible variable should replace it (softmax over candidate
         substitutions replayed through the same call)

Ground truth for training comes from taint tracking: mark the object read
at one identifier occurrence, propagate through call results, and the first
tainted call/argument plus the replaced name label psi, tau, and pi.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import Config
from .interpreter import RETURN_SLOT, Interpreter
from .executor import NullSemantics
from .nets import encoder_forward, init_encoder, init_linear, linear
from .parser import NodeKind, parse
from .training import LossReport, build_dfg

#: widest record sequence the positional table supports
POSITION_CAP = 2048


def init_head_params(store: ad.ParameterStore, rng, config: Config) -> None:
    store.add("mis.pos_emb", rng.normal(0.0, 0.02, size=(POSITION_CAP, config.h)))
    store.add("mis.cls", rng.normal(0.0, 0.02, size=(1, config.h)))
    for prefix in ("mis.kappa", "mis.eta", "mis.psi"):
        init_encoder(store, rng, prefix, 1, config.h, config.ffn_mult)
        init_linear(store, rng, prefix + "_out", config.h, 1)
    init_linear(store, rng, "mis.tau", config.h, 1)
    init_linear(store, rng, "mis.pi", config.h, 1)


# ---------------------------------------------------------------------------
# head forwards
# ---------------------------------------------------------------------------


def _return_sequence(store, records, include_marker: bool) -> ad.Tensor:
    """Rows of call returns plus positions; optionally a leading marker row.

    Position i+1 always refers to record i whether or not the marker row is
    present, so the heads share one positional vocabulary.
    """
    pos = store["mis.pos_emb"]
    rows = []
    if include_marker:
        rows.append(ad.add(store["mis.cls"], ad.row(pos, 0)))
    for i, record in enumerate(records[: POSITION_CAP - 1]):
        rows.append(ad.add(record.result.vector, ad.row(pos, i + 1)))
    return rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)


def misuse_logit(store, config: Config, records) -> ad.Tensor:
    """kappa: scalar logit that the script contains a misuse, shape (1, 1)."""
    x = _return_sequence(store, records, include_marker=True)
    y = encoder_forward(store, "mis.kappa", 1, config.executor_heads, x)
    return linear(store, "mis.kappa_out", ad.slice_rows(y, 0, 1))


def contamination_logits(store, config: Config, records) -> ad.Tensor:
    """eta: one corruption logit per call return, shape (R, 1)."""
    x = _return_sequence(store, records, include_marker=False)
    y = encoder_forward(store, "mis.eta", 1, config.executor_heads, x)
    return linear(store, "mis.eta_out", y)


def source_logits(store, config: Config, records) -> ad.Tensor:
    """psi: one logit per call for being the first consumer, shape (R, 1)."""
    x = _return_sequence(store, records, include_marker=False)
    y = encoder_forward(store, "mis.psi", 1, config.executor_heads, x)
    return linear(store, "mis.psi_out", y)


def argument_logits(store, executor, record) -> ad.Tensor:
    """tau: one logit per argument of ``record``, shape (1, N).

    The call replays through the executor so each argument position gets a
    read-out vector conditioned on the whole call.
    """
    out = executor.execute(record.callee.theta,
                           [c.vector for c in record.contexts], record.pairs)
    rows = ad.concat(out.arg_outputs, axis=0) if len(out.arg_outputs) > 1 \
        else out.arg_outputs[0]
    return ad.transpose(linear(store, "mis.tau", rows))


def repair_logits(store, executor, record, arg_index: int, candidates) -> ad.Tensor:
    """pi: one logit per candidate substitution, shape (1, C).

    Each candidate object replaces the argument at ``arg_index`` and the
    call replays; the substituted return is scored.
    """
    outs = []
    for _, obj in candidates:
        pairs = list(record.pairs)
        pairs[arg_index] = (obj.guessed, obj.vector)
        out = executor.execute(record.callee.theta,
                               [c.vector for c in record.contexts], pairs)
        outs.append(out.ret)
    rows = outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)
    return ad.transpose(linear(store, "mis.pi", rows))


# ---------------------------------------------------------------------------
# script execution with per-call memory snapshots
# ---------------------------------------------------------------------------


def visible_bindings(interp: Interpreter) -> list:
    """(name, object) pairs visible right now: shadowed names resolve to the
    innermost binding, the return slot is excluded, and the list is ordered
    by ascending object id (name breaks ties)."""
    seen: dict[str, object] = {}
    for scope in reversed(interp.scopes):
        for name, var in scope.table.items():
            if name != RETURN_SLOT and name not in seen:
                seen[name] = var.current
    return sorted(seen.items(), key=lambda kv: (kv[1].object_id, kv[0]))


@dataclass
class SnapshotRun:
    result: object                    # GenerationResult
    snapshots: list                   # per record: list of (name, object)
    source_record: int | None         # first tainted call, when taint is on
    flags: list                       # per-record bool taint flags

    @property
    def records(self) -> list:
        return self.result.records


def run_with_snapshots(model, code: str, taint_node: int | None = None,
                       dry: bool = False) -> SnapshotRun:
    """Execute ``code`` capturing visible memory at the moment of each call.

    When ``taint_node`` names an identifier occurrence, the object read
    there is marked and the mark propagates through call results.  With
    ``dry`` the run uses zero semantics: taint, snapshots, and record
    structure are identical but no vectors are computed, which is all
    label validation needs.
    """
    if dry:
        interp = model.interpreter(semantics=NullSemantics(model.config.h))
        runner = model.dry_run
    else:
        interp = model.interpreter()
        runner = model.run
    snapshots: list = []

    def hook(record_id, callee, contexts, args):
        snapshots.append(visible_bindings(interp))

    interp.on_lambda = hook
    interp.contaminate_node = taint_node
    result = runner(code, interp=interp)
    flags = [record.result.contaminated for record in result.records]
    return SnapshotRun(result=result, snapshots=snapshots,
                       source_record=interp.first_contaminated_record, flags=flags)


def misuse_identifier_node(tree, byte_offset: int) -> int | None:
    """Node id of the identifier whose span starts at ``byte_offset``."""
    for node in tree.nodes():
        if node.kind is NodeKind.Identifier and node.span[0] == byte_offset:
            return node.node_id
    return None


# ---------------------------------------------------------------------------
# labeled examples
# ---------------------------------------------------------------------------


@dataclass
class MisuseExample:
    code: str
    has_misuse: bool
    byte_offset: int | None = None
    correct_name: str | None = None
    script_id: str = ""

    def __post_init__(self):
        if not self.script_id:
            self.script_id = hashlib.sha256(self.code.encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> str:
        payload: dict = {"code": self.code, "has_misuse": self.has_misuse}
        if self.has_misuse:
            payload["misuse_byte_offset"] = self.byte_offset
            payload["correct_name"] = self.correct_name
        return json.dumps(payload, sort_keys=True)


def save_misuse_corpus(examples, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(example.to_json() + "\n")


def load_misuse_corpus(path: str) -> list:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            examples.append(MisuseExample(
                code=raw["code"],
                has_misuse=bool(raw["has_misuse"]),
                byte_offset=raw.get("misuse_byte_offset"),
                correct_name=raw.get("correct_name")))
    return examples


@dataclass
class ResolvedLabels:
    """Everything a misuse script's labels pin down, after one tainted run."""
    run: SnapshotRun
    source_record: int
    arg_index: int
    candidates: list                  # (name, object) at the source call
    target_candidate: int


def resolve_labels(model, example: MisuseExample, dry: bool = False):
    """Tainted execution of a labeled misuse script.

    Returns ``(ResolvedLabels, None)`` on success or ``(None, reason)`` when
    the labels are inconsistent with execution: the byte offset does not
    start an identifier, the taint never reaches a call, the tainted value
    is not an argument of that call, or the replaced name is not visible at
    the call site.
    """
    tree = parse(example.code)
    node_id = misuse_identifier_node(tree, example.byte_offset)
    if node_id is None:
        return None, "offset is not an identifier"
    run = run_with_snapshots(model, example.code, taint_node=node_id, dry=dry)
    if run.source_record is None:
        return None, "taint reaches no call"
    record = run.records[run.source_record]
    arg_index = next((i for i, a in enumerate(record.args) if a.contaminated), None)
    if arg_index is None:
        return None, "tainted call has no tainted argument"
    candidates = run.snapshots[run.source_record]
    target = next((i for i, (name, _) in enumerate(candidates)
                   if name == example.correct_name), None)
    if target is None:
        return None, "replaced name not visible at the call"
    return ResolvedLabels(run=run, source_record=run.source_record,
                          arg_index=arg_index, candidates=candidates,
                          target_candidate=target), None


# ---------------------------------------------------------------------------
# the five training objectives
# ---------------------------------------------------------------------------


HEAD_NAMES = ("classify", "flags", "source", "argument", "repair")


@dataclass
class MisuseBatchReport:
    reports: dict                     # head name -> LossReport
    label_errors: int
    scripts_skipped: int

    def combined(self) -> ad.Tensor | None:
        parts = [r.loss for r in self.reports.values() if r.loss is not None]
        if not parts:
            return None
        total = parts[0]
        for part in parts[1:]:
            total = ad.add(total, part)
        return ad.scale(total, 1.0 / len(parts))


def misuse_batch_losses(model, examples, config: Config) -> MisuseBatchReport:
    """All five objectives over one batch of labeled examples.

    Scripts whose labels cannot be reproduced by execution are dropped from
    every objective and counted as label errors; scripts that fail to lower
    are counted as skipped.
    """
    store = model.store
    parts: dict[str, list] = {name: [] for name in HEAD_NAMES}
    hits: dict[str, int] = {name: 0 for name in HEAD_NAMES}
    totals: dict[str, int] = {name: 0 for name in HEAD_NAMES}
    label_errors = 0
    skipped = 0

    for example in examples:
        try:
            if example.has_misuse:
                resolved, _reason = resolve_labels(model, example)
                if resolved is None:
                    label_errors += 1
                    continue
                run = resolved.run
            else:
                run = run_with_snapshots(model, example.code)
        except Exception:
            skipped += 1
            continue
        records = run.records
        if example.has_misuse and not records:
            label_errors += 1
            continue

        logit = misuse_logit(store, config, records)
        label = 1.0 if example.has_misuse else 0.0
        parts["classify"].append(ad.bce_with_logits(logit, label))
        totals["classify"] += 1
        if (logit.item() > 0.0) == example.has_misuse:
            hits["classify"] += 1

        if records:
            flag_logits = contamination_logits(store, config, records)
            flag_parts = []
            for i, flag in enumerate(run.flags[: POSITION_CAP - 1]):
                one = ad.slice_rows(flag_logits, i, i + 1)
                flag_parts.append(ad.bce_with_logits(one, 1.0 if flag else 0.0))
                totals["flags"] += 1
                if (one.item() > 0.0) == flag:
                    hits["flags"] += 1
            total = flag_parts[0]
            for part in flag_parts[1:]:
                total = ad.add(total, part)
            parts["flags"].append(ad.scale(total, 1.0 / len(flag_parts)))

        if not example.has_misuse:
            continue

        if resolved.source_record < POSITION_CAP - 1:
            logits = ad.transpose(source_logits(store, config, records))
            parts["source"].append(
                ad.cross_entropy_logits(logits, resolved.source_record))
            totals["source"] += 1
            if int(np.argmax(logits.data)) == resolved.source_record:
                hits["source"] += 1

        record = records[resolved.source_record]
        logits = argument_logits(store, model.executor, record)
        parts["argument"].append(ad.cross_entropy_logits(logits, resolved.arg_index))
        totals["argument"] += 1
        if int(np.argmax(logits.data)) == resolved.arg_index:
            hits["argument"] += 1

        logits = repair_logits(store, model.executor, record,
                               resolved.arg_index, resolved.candidates)
        parts["repair"].append(
            ad.cross_entropy_logits(logits, resolved.target_candidate))
        totals["repair"] += 1
        if int(np.argmax(logits.data)) == resolved.target_candidate:
            hits["repair"] += 1

    reports = {}
    for name in HEAD_NAMES:
        if parts[name]:
            total = parts[name][0]
            for part in parts[name][1:]:
                total = ad.add(total, part)
            loss = ad.scale(total, 1.0 / len(parts[name]))
        else:
            loss = None
        reports[name] = LossReport(loss, hits[name], totals[name])
    return MisuseBatchReport(reports=reports, label_errors=label_errors,
                             scripts_skipped=skipped)


def train_misuse(model, examples, config: Config, log_path: str | None = None,
                 seed: int | None = None, log_header: dict | None = None) -> list:
    """Fine-tune on labeled misuse scripts; returns per-batch metric dicts."""
    base = config.seed if seed is None else seed
    order_rng = np.random.default_rng((base, 0x4D15))
    n_batches = max(1, (len(examples) + config.batch_size - 1) // config.batch_size)
    total_steps = n_batches * config.epochs
    history = []
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    if log and log_header is not None:
        log.write(json.dumps(log_header, sort_keys=True) + "\n")
    try:
        step = 0
        for _epoch in range(config.epochs):
            order = order_rng.permutation(len(examples))
            for start in range(0, len(examples), config.batch_size):
                batch = [examples[i] for i in order[start:start + config.batch_size]]
                model.store.zero_grad()
                report = misuse_batch_losses(model, batch, config)
                combined = report.combined()
                if combined is not None:
                    ad.backward(combined)
                    lr = ad.linear_schedule(step, total_steps, config.lr,
                                            config.warmup_frac)
                    ad.optimizer_step(model.store, lr,
                                      weight_decay=config.weight_decay)
                step += 1
                row = {"step": step}
                for name in HEAD_NAMES:
                    rep = report.reports[name]
                    row["loss_" + name] = rep.loss.item() if rep.loss is not None else None
                    row["acc_" + name] = rep.accuracy
                row["label_errors"] = report.label_errors
                row["scripts_skipped"] = report.scripts_skipped
                history.append(row)
                if log:
                    log.write(json.dumps(row, sort_keys=True) + "\n")
                    log.flush()
    finally:
        if log:
            log.close()
    return history


# ---------------------------------------------------------------------------
# inference: classify, localize, repair, explain
# ---------------------------------------------------------------------------


@dataclass
class MisusePrediction:
    script_id: str
    p_misuse: float
    call_record: int | None = None
    arg_index: int | None = None
    repair_name: str | None = None
    explanation_path: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "script_id": self.script_id,
            "p_misuse": self.p_misuse,
            "call_record": self.call_record,
            "arg_index": self.arg_index,
            "repair_name": self.repair_name,
            "explanation_path": self.explanation_path,
        }, sort_keys=True)


def explanation_path(records, start: int) -> list:
    """Record ids the flagged value flows through, starting at its source."""
    dfg = build_dfg(records)
    reach = dfg.reachable_from(records[start].result.object_id)
    path = [records[start].record_id]
    for record in records[start + 1:]:
        if any(a.object_id == records[start].result.object_id
               or a.object_id in reach for a in record.args):
            path.append(record.record_id)
    return path


def predict(model, code: str, script_id: str = "") -> MisusePrediction:
    """The full white-box pipeline on one unlabeled script."""
    if not script_id:
        script_id = hashlib.sha256(code.encode("utf-8")).hexdigest()[:12]
    run = run_with_snapshots(model, code)
    records = run.records
    store = model.store
    config = model.config
    p = float(ad.sigmoid(misuse_logit(store, config, records)).item())
    prediction = MisusePrediction(script_id=script_id, p_misuse=p)
    if not records:
        return prediction
    eligible = [i for i, record in enumerate(records[: POSITION_CAP - 1])
                if record.args]
    if not eligible:
        return prediction
    logits = source_logits(store, config, records).data.ravel()
    best = min(eligible, key=lambda i: (-logits[i], i))
    record = records[best]
    prediction.call_record = record.record_id

    arg_scores = argument_logits(store, model.executor, record).data.ravel()
    prediction.arg_index = int(np.argmax(arg_scores))

    candidates = run.snapshots[best]
    if candidates:
        repair_scores = repair_logits(store, model.executor, record,
                                      prediction.arg_index, candidates)
        prediction.repair_name = candidates[int(np.argmax(repair_scores.data))][0]
    prediction.explanation_path = explanation_path(records, best)
    return prediction


def write_predictions(model, examples, path: str) -> list:
    predictions = []
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            prediction = predict(model, example.code, example.script_id)
            predictions.append(prediction)
            fh.write(prediction.to_json() + "\n")
    return predictions


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def rank_auc(labels, scores) -> float:
    """Probability a positive outranks a negative, ties counted half."""
    positives = [s for s, y in zip(scores, labels) if y]
    negatives = [s for s, y in zip(scores, labels) if not y]
    if not positives or not negatives:
        return float("nan")
    better = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                better += 1.0
            elif p == n:
                better += 0.5
    return better / (len(positives) * len(negatives))


def evaluate_misuse(model, examples, config: Config) -> dict:
    """Classification AUC plus localization and repair accuracy with the
    matching chance level (mean reciprocal candidate-set size)."""
    labels, scores = [], []
    loc_hits = loc_total = 0
    arg_hits = 0
    repair_hits = 0
    chance_sum = 0.0
    label_errors = 0
    skipped = 0
    for example in examples:
        try:
            prediction = predict(model, example.code, example.script_id)
        except Exception:
            skipped += 1
            continue
        labels.append(example.has_misuse)
        scores.append(prediction.p_misuse)
        if not example.has_misuse:
            continue
        resolved, _reason = resolve_labels(model, example)
        if resolved is None:
            label_errors += 1
            continue
        loc_total += 1
        if prediction.call_record == resolved.run.records[resolved.source_record].record_id:
            loc_hits += 1
            if prediction.arg_index == resolved.arg_index:
                arg_hits += 1
        truth = resolved.candidates[resolved.target_candidate][0]
        if prediction.repair_name == truth:
            repair_hits += 1
        chance_sum += 1.0 / len(resolved.candidates)
    return {
        "auc": rank_auc(labels, scores),
        "n": len(labels),
        "localization_accuracy": loc_hits / loc_total if loc_total else 0.0,
        "argument_accuracy": arg_hits / loc_total if loc_total else 0.0,
        "repair_accuracy": repair_hits / loc_total if loc_total else 0.0,
        "repair_chance": chance_sum / loc_total if loc_total else 0.0,
        "label_errors": label_errors,
        "scripts_skipped": skipped,
    }
