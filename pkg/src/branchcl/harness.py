"""Sequential training harness over a synthetic task stream.

`run_seed` trains and evaluates each configured method on one stream and
assembles a per-seed report; `run_experiment` repeats that over seeds and
aggregates medians. Wall-clock timings are collected separately from the
report so reports stay byte-for-byte reproducible.

Frozen state is actively policed: after every task boundary the harness
re-reads the bytes of everything that is supposed to be immutable
(backbones, the head, frozen branches, finished routers and keys) and
aborts on any drift.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_model
from .config import ExperimentConfig
from .errors import ContractError, ParameterError
from .metrics import EvalMatrix, compute_metrics
from .model import ContinualModel, ModelConfig, build_model
from .optim import make_optimizer
from .routing import FreezeLedger, UsageStats, apply_freeze, select_freeze_set
from .selector import SampleEmbeddings, alignment_loss, select_task, selector_accuracy, total_loss
from .stream import SyntheticTask, TaskStream, generate_stream, stream_fingerprint
from .tensor import Matrix, Tape, backward, cross_entropy

_TRAIN_TAGS = {"lora": 21, "moelora": 22, "branchlora": 23, "multitask": 24}


class ImmutabilityGuard:
    """Byte-level watchdog over matrices that must never change again."""

    def __init__(self):
        self._frozen: dict[str, bytes] = {}

    def freeze(self, name: str, m: Matrix) -> None:
        self._frozen[name] = m.data.tobytes()

    def verify(self, named: list[tuple[str, Matrix]]) -> None:
        lookup = dict(named)
        for name, expected in self._frozen.items():
            m = lookup.get(name)
            if m is None:
                raise ContractError(f"immutability guard: tensor {name} disappeared")
            if m.data.tobytes() != expected:
                raise ContractError(f"immutability guard: frozen tensor {name} changed")


@dataclass
class TrainStats:
    first_loss: float
    last_loss: float
    batches: int
    batch_seconds: list[float] = field(default_factory=list)


def _embeddings_for(x: np.ndarray) -> list[SampleEmbeddings]:
    return [SampleEmbeddings.from_input(row) for row in x]


def train_task(
    model: ContinualModel,
    x_train: np.ndarray,
    y_train: np.ndarray,
    task_id: int | None,
    epochs: int,
    batch_size: int,
    lr: float,
    optimizer: str,
    rng: np.random.Generator,
    usage: list[UsageStats] | None = None,
    embeds: list[SampleEmbeddings] | None = None,
) -> TrainStats:
    """Train the model's adapter parameters on one task's data.

    For branchlora runs, `usage` collects per-layer gate observations and
    `embeds` supplies the per-sample views for the key alignment loss.
    """
    if model.kind == "zero_shot":
        raise ParameterError("zero_shot models have nothing to train")
    params = model.trainable_params(task_id)
    # Sparse gating keeps unselected branches off the tape, so a branch
    # model's optimizer must tolerate parameters with no gradient.
    opt = make_optimizer(
        optimizer, params, lr, allow_missing=model.kind == "branchlora"
    )
    n = x_train.shape[0]
    align_weight = model.hp.align_weight
    keys = model.keys.get(task_id) if model.kind == "branchlora" else None
    first_loss = None
    last_loss = None
    batches = 0
    batch_seconds: list[float] = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb = Matrix(x_train[idx])
            yb = y_train[idx]
            t0 = time.perf_counter()
            with Tape() as tape:
                logits, gates = model.forward(xb, task_id)
                loss = cross_entropy(logits, yb)
                if keys is not None:
                    align = alignment_loss([embeds[i] for i in idx], keys)
                    loss_total = total_loss(loss, align, align_weight)
                else:
                    loss_total = loss
                backward(tape, loss_total)
            opt.step()
            batch_seconds.append(time.perf_counter() - t0)
            if usage is not None:
                for st, gate in zip(usage, gates):
                    st.record_gate(gate)
            value = loss.item()
            if first_loss is None:
                first_loss = value
            last_loss = value
            batches += 1
    return TrainStats(first_loss, last_loss, batches, batch_seconds)


def evaluate(
    model: ContinualModel,
    task: SyntheticTask,
    selector: str = "oracle",
) -> float:
    """Accuracy on a task's test split. `selector` matters only for
    branchlora: "oracle" routes by the true task id, "auto" picks the
    task via key similarity per sample."""
    if selector not in ("oracle", "auto"):
        raise ParameterError(f"selector must be 'oracle' or 'auto', got {selector!r}")
    x, y = task.x_test, task.y_test
    if model.kind in ("zero_shot", "lora"):
        # no router: rows are independent, evaluate as one batch
        logits, _ = model.forward(Matrix(x))
        pred = np.argmax(logits.data, axis=1)
        return float((pred == y).mean())
    hits = 0
    for i in range(x.shape[0]):
        xi = Matrix(x[i : i + 1])
        if model.kind == "branchlora":
            tid = task.task_id
            if selector == "auto":
                tid = select_task(SampleEmbeddings.from_input(x[i]), model.keys)
            logits, _ = model.forward(xi, tid)
        else:
            logits, _ = model.forward(xi)
        hits += int(np.argmax(logits.data[0]) == y[i])
    return hits / x.shape[0]


def _freeze_after_task(
    model: ContinualModel,
    task_id: int,
    usage: list[UsageStats],
    width: int,
    by: str,
    ledger: FreezeLedger,
) -> list[list[int]]:
    newly_frozen = []
    for li, layer in enumerate(model.layers):
        st = usage[li]
        chosen = select_freeze_set(st, width, layer.frozen, by=by)
        mass = st.normalized_mass()
        apply_freeze(layer, chosen)
        ledger.record(task_id, li, chosen, mass)
        newly_frozen.append(chosen)
    return newly_frozen


def _method_kind(method: str) -> str:
    return "lora" if method == "multitask" else method


def run_seed(
    config: ExperimentConfig,
    seed: int,
    out_dir=None,
    keep_snapshots: bool = False,
    stream: TaskStream | None = None,
) -> dict:
    """Run every configured method on one seed's stream.

    Returns {"report": ..., "timings": ..., "snapshots": ..., "models": ...}.
    Only "report" is deterministic; timings are wall-clock measurements.
    """
    s, a, t = config.stream, config.adapter, config.train
    if stream is None:
        stream = generate_stream(
            tasks=s.tasks,
            train_samples=s.train_samples,
            test_samples=s.test_samples,
            dim=s.dim,
            classes=s.classes,
            seed=seed,
            separation=s.separation,
            noise=s.noise,
        )
    fingerprint = stream_fingerprint(stream)
    hp = a.hyperparams()
    mcfg = ModelConfig(width=stream.dim, classes=stream.classes, layers=a.layers)
    methods_out: dict[str, dict] = {}
    timings: dict[str, dict] = {}
    snapshots: dict[str, list] = {}
    models: dict[str, ContinualModel] = {}

    for method in config.methods:
        kind = _method_kind(method)
        model = build_model(kind, mcfg, hp, seed)
        models[method] = model
        guard = ImmutabilityGuard()
        for name, m in model.all_named_matrices():
            if not m.trainable:
                guard.freeze(name, m)
        entry: dict = {"stream_fingerprint": fingerprint}
        batch_seconds: list[float] = []

        if method == "zero_shot":
            accs = [evaluate(model, task) for task in stream.tasks]
            rows = [[accs[k] for k in range(i + 1)] for i in range(len(stream))]
            entry["trainable_params_per_task"] = [0] * len(stream)
        elif method == "multitask":
            x_all = np.concatenate([task.x_train for task in stream.tasks])
            y_all = np.concatenate([task.y_train for task in stream.tasks])
            rng = np.random.default_rng(np.random.SeedSequence([seed, _TRAIN_TAGS[method]]))
            stats = train_task(
                model, x_all, y_all, None, t.epochs, t.batch_size, t.lr, t.optimizer, rng
            )
            batch_seconds.extend(stats.batch_seconds)
            guard.verify(model.all_named_matrices())
            accs = [evaluate(model, task) for task in stream.tasks]
            rows = [[accs[k] for k in range(i + 1)] for i in range(len(stream))]
            entry["trainable_params_per_task"] = [model.count_trainable_params()]
        else:
            rng = np.random.default_rng(np.random.SeedSequence([seed, _TRAIN_TAGS[method]]))
            ledger = FreezeLedger()
            rows = []
            params_per_task = []
            method_snapshots = []
            for task in stream.tasks:
                tid = task.task_id
                usage = None
                embeds = None
                if kind == "branchlora":
                    model.start_task(tid)
                    usage = [UsageStats(hp.experts, hp.top_k) for _ in model.layers]
                    embeds = _embeddings_for(task.x_train)
                params_per_task.append(model.count_trainable_params(tid))
                stats = train_task(
                    model,
                    task.x_train,
                    task.y_train,
                    tid,
                    t.epochs,
                    t.batch_size,
                    t.lr,
                    t.optimizer,
                    rng,
                    usage=usage,
                    embeds=embeds,
                )
                batch_seconds.extend(stats.batch_seconds)
                # catch any drift of already-frozen state during this task
                guard.verify(model.all_named_matrices())
                if kind == "branchlora":
                    newly_frozen = _freeze_after_task(
                        model, tid, usage, a.effective_freeze_width(), a.freeze_by, ledger
                    )
                    model.finish_task(tid)
                    for li, layer in enumerate(model.layers):
                        for j in newly_frozen[li]:
                            guard.freeze(f"layer{li}.branch{j}", layer.branches[j])
                        guard.freeze(f"layer{li}.router.task{tid}", layer.routers[tid])
                    keys = model.keys.get(tid)
                    guard.freeze(f"keys.task{tid}.img", keys.k_img)
                    guard.freeze(f"keys.task{tid}.txt", keys.k_txt)
                selector = "auto" if kind == "branchlora" else "oracle"
                rows.append(
                    [evaluate(model, stream.tasks[k], selector) for k in range(tid + 1)]
                )
                if keep_snapshots and kind == "moelora":
                    method_snapshots.append(
                        [
                            [(a_m.data.copy(), b_m.data.copy()) for a_m, b_m in layer.experts]
                            for layer in model.layers
                        ]
                    )
                if out_dir is not None:
                    save_model(_ckpt_dir(out_dir, seed, method, tid), model)
            entry["trainable_params_per_task"] = params_per_task
            if kind == "branchlora":
                entry["freeze_ledger"] = ledger.to_obj()
                entry["oracle_final_row"] = [
                    evaluate(model, task, "oracle") for task in stream.tasks
                ]
                samples = [
                    (SampleEmbeddings.from_input(x), task.task_id)
                    for task in stream.tasks
                    for x in task.x_test
                ]
                entry["selector_accuracy"] = selector_accuracy(samples, model.keys)
            if method_snapshots:
                snapshots[method] = method_snapshots

        if out_dir is not None and method in ("zero_shot", "multitask"):
            save_model(_ckpt_dir(out_dir, seed, method, len(stream) - 1), model)

        matrix = EvalMatrix(rows)
        m = compute_metrics(matrix)
        entry["eval_matrix"] = matrix.rows
        entry["diagonal"] = matrix.diagonal()
        entry["final_row"] = matrix.final_row()
        entry["metrics"] = {"acc": m.acc, "maa": m.maa, "bwt": m.bwt}
        methods_out[method] = entry
        if batch_seconds:
            timings[method] = {
                "batches": len(batch_seconds),
                "mean_ms": 1e3 * statistics.fmean(batch_seconds),
                "std_ms": 1e3 * (statistics.pstdev(batch_seconds) if len(batch_seconds) > 1 else 0.0),
            }

    report = {
        "seed": seed,
        "stream_fingerprint": fingerprint,
        "methods": methods_out,
    }
    return {"report": report, "timings": timings, "snapshots": snapshots, "models": models}


def _ckpt_dir(out_dir, seed: int, method: str, task_id: int):
    from pathlib import Path

    return Path(out_dir) / "checkpoints" / f"seed{seed}" / method / f"task{task_id}"


def aggregate_reports(config_dict: dict, per_seed: dict[int, dict]) -> dict:
    """Combine per-seed reports into the experiment-level report."""
    seeds = sorted(per_seed)
    methods = list(config_dict["methods"])
    aggregate: dict[str, dict] = {}
    for method in methods:
        stats: dict[str, dict] = {}
        for metric in ("acc", "maa", "bwt"):
            values = [per_seed[s]["methods"][method]["metrics"][metric] for s in seeds]
            stats[metric] = {"per_seed": values, "median": statistics.median(values)}
        sel = [
            per_seed[s]["methods"][method].get("selector_accuracy")
            for s in seeds
            if per_seed[s]["methods"][method].get("selector_accuracy") is not None
        ]
        if sel:
            stats["selector_accuracy"] = {"per_seed": sel, "median": statistics.median(sel)}
        aggregate[method] = stats
    return {
        "config": config_dict,
        "seeds": seeds,
        "per_seed": {str(s): per_seed[s] for s in seeds},
        "aggregate": aggregate,
    }
