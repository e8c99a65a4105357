"""Experiment orchestration.

``run_experiment`` executes one (dataset, model, strategy, seed) cell and
emits per-epoch metrics plus a summary.  ``compare`` runs a strategy matrix
over repeated seeds, optionally across processes, and aggregates it into a
table.  ``verify_lemma`` Monte-Carlo-checks the convergence bound for
single-sample SGD on a quadratic testbed.

Reproducibility contract: all run-level randomness comes from one
xoshiro256** stream seeded with the run seed, drawn in a fixed order --
model init first (mlp1 only), then per epoch the shuffle, then per batch
whatever the strategy samples.  Repeats of the same config are bit-identical
except wall-clock fields.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import comparators, hiding, model as model_mod, optim as optim_mod
from .data import Dataset, SampleStore, gen_synthetic, load_csv, load_idx
from .hiding import EpochPlan, HidingConfig
from .optim import OptimConfig, SgdState
from .rng import Xoshiro256StarStar, splitmix64

STRATEGIES = ("baseline", "kakurenbo", "iswr", "sb", "forget")

_EVAL_CHUNK = 2048


class PreconditionViolated(Exception):
    pass


# ======================================================================
# Configuration
# ======================================================================


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | idx | csv
    kind: str = "blobs"
    n: int = 2000
    d: int = 2
    k: int = 3
    seed: int = 7
    test_n: int = 400
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    path: str = ""
    label_column: str = "label"
    test_fraction: float = 0.2

    def validate(self) -> None:
        if self.source not in ("synthetic", "idx", "csv"):
            raise ValueError("dataset.source must be synthetic, idx, or csv")
        if self.source == "synthetic":
            if self.n < 1 or self.test_n < 1:
                raise ValueError("synthetic needs n >= 1 and test_n >= 1")
        if self.source == "idx":
            for p in (self.train_images, self.train_labels,
                      self.test_images, self.test_labels):
                if not p:
                    raise ValueError("idx source needs all four file paths")
        if self.source == "csv":
            if not self.path:
                raise ValueError("csv source needs dataset.path")
            if not 0.0 < self.test_fraction < 1.0:
                raise ValueError("test_fraction must be in (0, 1)")


@dataclass
class ModelConfig:
    arch: str = "mlp1"
    hidden: int = 32

    def validate(self) -> None:
        if self.arch not in (model_mod.ARCH_SOFTMAX, model_mod.ARCH_MLP1):
            raise ValueError(f"arch must be {model_mod.ARCH_SOFTMAX} or {model_mod.ARCH_MLP1}")
        if self.arch == model_mod.ARCH_MLP1 and self.hidden < 1:
            raise ValueError("mlp1 needs hidden >= 1")


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    hiding: HidingConfig = field(default_factory=HidingConfig)
    strategy: str = "baseline"
    batch_size: int = 128
    epochs: int = 10
    seed: int = 42
    jobs: int = 1
    sb_beta: float = 1.0
    sb_window: int = 1024
    forget_count_epochs: int = 20

    def validate(self) -> None:
        self.dataset.validate()
        self.model.validate()
        self.optim.validate()
        self.hiding.validate()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.sb_window < 1:
            raise ValueError("sb_window must be >= 1")
        if self.sb_beta < 0:
            raise ValueError("sb_beta must be >= 0")
        if self.forget_count_epochs < 1:
            raise ValueError("forget_count_epochs must be >= 1")


@dataclass
class MetricsRecord:
    epoch: int
    phase: str            # train | counting | pruned
    train_loss: float     # mean loss over this epoch's gradient-pass forwards
    test_top1: float
    f_e: float
    f_star: float
    moved_back: int
    hidden_again: int
    forward_count: int
    backward_count: int
    eta_e: float
    wall_clock_ms: float

    def to_dict(self) -> dict:
        return {"type": "epoch", **dataclasses.asdict(self)}


@dataclass
class RunResult:
    config: RunConfig
    records: list
    summary: dict
    model: model_mod.Model
    store: SampleStore


# ======================================================================
# Dataset assembly
# ======================================================================


def build_datasets(dcfg: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Build the (train, test) pair for a run; deterministic per config."""
    dcfg.validate()
    if dcfg.source == "synthetic":
        full = gen_synthetic(dcfg.kind, dcfg.n + dcfg.test_n, dcfg.d, dcfg.k, dcfg.seed)
        train = Dataset(full.features[: dcfg.n], full.labels[: dcfg.n], full.k)
        test = Dataset(full.features[dcfg.n :], full.labels[dcfg.n :], full.k)
        return train, test
    if dcfg.source == "idx":
        train = load_idx(dcfg.train_images, dcfg.train_labels)
        test = load_idx(dcfg.test_images, dcfg.test_labels)
        k = max(train.k, test.k)
        return (Dataset(train.features, train.labels, k),
                Dataset(test.features, test.labels, k))
    # csv: deterministic permutation split keyed by the dataset seed
    full = load_csv(dcfg.path, dcfg.label_column)
    perm = np.random.default_rng(dcfg.seed).permutation(full.n)
    n_test = max(1, int(dcfg.test_fraction * full.n))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    return (Dataset(full.features[train_idx], full.labels[train_idx], full.k),
            Dataset(full.features[test_idx], full.labels[test_idx], full.k))


# ======================================================================
# Run state
# ======================================================================


@dataclass
class RunState:
    train: Dataset
    test: Dataset
    model: model_mod.Model
    sgd: SgdState
    store: SampleStore
    rng: Xoshiro256StarStar
    iswr: comparators.IswrState | None = None
    sb: comparators.SbState | None = None
    forget: comparators.ForgetState | None = None
    kept: np.ndarray | None = None        # forget: surviving indices, sorted
    prev_hidden: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    grad_samples: int = 0                 # independent tally of sample-gradients
    dump_dir: str | None = None


def _fresh_learner(cfg: RunConfig, train: Dataset):
    """Model, optimizer state, store, and run stream from the run seed."""
    rng = Xoshiro256StarStar(cfg.seed)
    mdl = model_mod.init_model(cfg.model.arch, train.d, train.k,
                               h=cfg.model.hidden, rng=rng)
    return mdl, SgdState.for_model(mdl), SampleStore(train.n), rng


def init_run(cfg: RunConfig, train: Dataset | None = None,
             test: Dataset | None = None) -> RunState:
    cfg.validate()
    if train is None or test is None:
        train, test = build_datasets(cfg.dataset)
    if cfg.batch_size > train.n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds train size {train.n}")
    mdl, sgd, store, rng = _fresh_learner(cfg, train)
    state = RunState(train=train, test=test, model=mdl, sgd=sgd, store=store, rng=rng)
    if cfg.strategy == "iswr":
        state.iswr = comparators.IswrState.for_n(train.n)
    elif cfg.strategy == "sb":
        state.sb = comparators.SbState(beta=cfg.sb_beta, capacity=cfg.sb_window)
    elif cfg.strategy == "forget":
        state.forget = comparators.ForgetState.for_n(train.n)
    return state


def eval_top1(mdl: model_mod.Model, ds: Dataset) -> float:
    correct = 0
    for lo in range(0, ds.n, _EVAL_CHUNK):
        hi = min(lo + _EVAL_CHUNK, ds.n)
        out = model_mod.forward(mdl, ds.features[lo:hi], ds.labels[lo:hi])
        correct += int(out.pa.sum())
    return correct / ds.n


# ======================================================================
# Epoch bodies
# ======================================================================


def _train_pass(state: RunState, cfg: RunConfig, indices: np.ndarray,
                lr: float, epoch: int) -> tuple[float, int]:
    """SGD over `indices` in order, chunked into batches.

    Records lagging statistics for every forward.  Returns (loss sum,
    samples backpropagated).
    """
    ds, mdl = state.train, state.model
    b = cfg.batch_size
    loss_sum = 0.0
    backward = 0
    for lo in range(0, indices.size, b):
        batch = indices[lo : lo + b]
        out, grad = model_mod.forward_backward(mdl, ds.features[batch], ds.labels[batch])
        state.store.record_batch(batch, out.loss, out.pa, out.pc, epoch)
        optim_mod.sgd_step(mdl, grad, lr, state.sgd, cfg.optim)
        state.grad_samples += batch.size
        loss_sum += float(out.loss.sum())
        backward += int(batch.size)
    return loss_sum, backward


def _shuffled(state: RunState, pool: np.ndarray) -> np.ndarray:
    idxs = pool.copy()
    state.rng.shuffle(idxs)
    return idxs


def run_epoch(cfg: RunConfig, state: RunState, epoch: int,
              phase: str = "train") -> MetricsRecord:
    """One full epoch of the configured strategy; returns its metrics row."""
    t0 = time.monotonic_ns()
    state.store.begin_epoch()
    base_lr = optim_mod.base_lr_at(cfg.optim, epoch)
    n = state.train.n

    f_e = f_star = 0.0
    moved_back = hidden_again = 0
    eta = base_lr

    if cfg.strategy == "kakurenbo":
        plan = hiding.select_hidden(state.store, cfg.hiding, epoch, base_lr, state.rng)
        _check_partition(plan, n)
        state.store.set_hidden(plan.hidden_list)
        eta = plan.eta_e
        loss_sum, backward = _train_pass(state, cfg, plan.training_list, eta, epoch)
        hiding.refresh_hidden(state.model, state.train, plan, state.store)
        if not (state.store.refreshed_at == epoch).all():
            raise AssertionError("not every sample was refreshed this epoch")
        f_e, f_star, moved_back = plan.f_e, plan.f_star, plan.moved_back
        hidden_again = int(np.intersect1d(plan.hidden_list, state.prev_hidden).size)
        state.prev_hidden = plan.hidden_list
        if state.dump_dir:
            hiding.dump_plan(plan, state.dump_dir)
        trained = plan.training_list.size
        loss_denom = max(trained, 1)

    elif cfg.strategy == "iswr":
        loss_sum = 0.0
        backward = 0
        drawn = 0
        while drawn < n:
            b = min(cfg.batch_size, n - drawn)
            batch = comparators.iswr_draw(state.iswr, b, state.rng)
            out, grad = model_mod.forward_backward(
                state.model, state.train.features[batch], state.train.labels[batch])
            state.store.record_batch(batch, out.loss, out.pa, out.pc, epoch)
            state.iswr.update(batch, out.loss)
            optim_mod.sgd_step(state.model, grad, eta, state.sgd, cfg.optim)
            state.grad_samples += b
            loss_sum += float(out.loss.sum())
            backward += b
            drawn += b
        loss_denom = n

    elif cfg.strategy == "sb":
        idxs = _shuffled(state, np.arange(n, dtype=np.int64))
        loss_sum = 0.0
        backward = 0
        for lo in range(0, n, cfg.batch_size):
            batch = idxs[lo : lo + cfg.batch_size]
            x, yk = state.train.features[batch], state.train.labels[batch]
            out = model_mod.forward(state.model, x, yk)
            state.store.record_batch(batch, out.loss, out.pa, out.pc, epoch)
            sel = comparators.sb_select(state.sb, out.loss, state.rng)
            if sel.size:
                _, grad = model_mod.forward_backward(state.model, x[sel], yk[sel])
                optim_mod.sgd_step(state.model, grad, eta, state.sgd, cfg.optim)
                state.grad_samples += int(sel.size)
                backward += int(sel.size)
            loss_sum += float(out.loss.sum())
        loss_denom = n

    elif cfg.strategy == "forget" and phase == "pruned":
        idxs = _shuffled(state, state.kept)
        loss_sum, backward = _train_pass(state, cfg, idxs, eta, epoch)
        loss_denom = max(idxs.size, 1)

    else:  # baseline, or a forget counting epoch
        idxs = _shuffled(state, np.arange(n, dtype=np.int64))
        loss_sum, backward = _train_pass(state, cfg, idxs, eta, epoch)
        if cfg.strategy == "forget":
            comparators.forget_update(state.forget, idxs, state.store.pa[idxs])
        loss_denom = n

    record = MetricsRecord(
        epoch=epoch,
        phase=phase,
        train_loss=loss_sum / loss_denom,
        test_top1=eval_top1(state.model, state.test),
        f_e=f_e,
        f_star=f_star,
        moved_back=moved_back,
        hidden_again=hidden_again,
        forward_count=state.store.forwards_this_epoch,
        backward_count=backward,
        eta_e=eta,
        wall_clock_ms=(time.monotonic_ns() - t0) / 1e6,
    )
    return record


def _check_partition(plan: EpochPlan, n: int) -> None:
    counts = np.zeros(n, dtype=np.int64)
    for part in (plan.training_list, plan.hidden_list, plan.dropped_top_list):
        counts[part] += 1
    if not (counts == 1).all():
        raise AssertionError("epoch plan does not partition the sample indices")


# ======================================================================
# Whole runs
# ======================================================================


def run_experiment(cfg: RunConfig, out_dir: str | None = None,
                   dump_plans_dir: str | None = None,
                   train: Dataset | None = None,
                   test: Dataset | None = None,
                   progress=None) -> RunResult:
    """Run one experiment cell end to end.

    FORGET runs its counting epochs first, prunes, then restarts from a
    fresh model/optimizer/stream (re-seeded from the same run seed) on the
    surviving samples; its wall clock includes the counting phase and its
    pruned epochs are numbered from 0 again.  ``progress``, if given, is
    called with each MetricsRecord as it is produced.
    """
    state = init_run(cfg, train=train, test=test)
    state.dump_dir = dump_plans_dir
    records: list[MetricsRecord] = []
    pruned_count = 0

    def _emit(rec: MetricsRecord) -> None:
        records.append(rec)
        if progress is not None:
            progress(rec)

    if cfg.strategy == "forget":
        for epoch in range(cfg.forget_count_epochs):
            _emit(run_epoch(cfg, state, epoch, phase="counting"))
        pruned = comparators.forget_prune(state.forget, cfg.hiding.max_fraction)
        pruned_count = int(pruned.size)
        kept_mask = np.ones(state.train.n, dtype=bool)
        kept_mask[pruned] = False
        kept = np.nonzero(kept_mask)[0].astype(np.int64)
        # restart: fresh everything, stream re-created from the run seed
        state.model, state.sgd, state.store, state.rng = _fresh_learner(cfg, state.train)
        state.kept = kept
        for epoch in range(cfg.epochs):
            _emit(run_epoch(cfg, state, epoch, phase="pruned"))
    else:
        for epoch in range(cfg.epochs):
            _emit(run_epoch(cfg, state, epoch))

    if sum(r.backward_count for r in records) != state.grad_samples:
        raise AssertionError("backward_count totals disagree with optimizer tally")

    best = max(records, key=lambda r: (r.test_top1, -r.epoch))
    summary = {
        "type": "summary",
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "arch": cfg.model.arch,
        "n_train": state.train.n,
        "n_test": state.test.n,
        "d": state.train.d,
        "k": state.train.k,
        "best_test_top1": best.test_top1,
        "best_epoch": best.epoch,
        "final_test_top1": records[-1].test_top1,
        "final_train_loss": records[-1].train_loss,
        "total_forward": sum(r.forward_count for r in records),
        "total_backward": sum(r.backward_count for r in records),
        "total_wall_clock_ms": sum(r.wall_clock_ms for r in records),
        "counting_epochs": cfg.forget_count_epochs if cfg.strategy == "forget" else 0,
        "pruned_count": pruned_count,
    }

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics(os.path.join(out_dir, "metrics.jsonl"), records, summary)
        model_mod.save_checkpoint(state.model, os.path.join(out_dir, "model.ckpt"))

    return RunResult(config=cfg, records=records, summary=summary,
                     model=state.model, store=state.store)


def write_metrics(path: str, records: list, summary: dict) -> None:
    with open(path, "w") as f:
        for r in records:
            row = r if isinstance(r, dict) else r.to_dict()
            f.write(json.dumps(row) + "\n")
        f.write(json.dumps(summary) + "\n")


def read_metrics(path: str) -> tuple[list[dict], dict]:
    records, summary = [], {}
    with open(path) as f:
        for line in f:
            row = json.loads(line)
            if row.get("type") == "summary":
                summary = row
            else:
                records.append(row)
    return records, summary


# ======================================================================
# Strategy comparison
# ======================================================================


@dataclass
class ComparisonResult:
    strategies: list
    seeds: list
    rows: list          # aggregated, one dict per strategy
    cells: dict         # (strategy, seed) -> {"records": [...], "summary": {...}}


def _run_cell(args: tuple) -> tuple:
    cfg, = args
    result = run_experiment(cfg)
    return cfg.strategy, cfg.seed, [r.to_dict() for r in result.records], result.summary


def compare(base_cfg: RunConfig, strategies: list, repeats: int = 1,
            jobs: int = 1, progress=None) -> ComparisonResult:
    """Run every strategy at seeds base..base+repeats-1 and aggregate.

    All cells share the dataset config (identical bits, since dataset
    generation is deterministic).  Results are independent of `jobs`; the
    pool only changes scheduling.  ``progress``, if given, is called with
    (strategy, seed, summary) as each cell completes.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not strategies:
        raise ValueError("need at least one strategy")
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    # duplicate entries are allowed here (they aggregate to a zero diff);
    # the CLI rejects them as a usage error before reaching this point
    seeds = [base_cfg.seed + r for r in range(repeats)]
    tasks = []
    seen = set()
    for s in strategies:
        for seed in seeds:
            if (s, seed) in seen:
                continue
            seen.add((s, seed))
            cfg = dataclasses.replace(base_cfg, strategy=s, seed=seed)
            tasks.append((cfg,))

    cells = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for strategy, seed, records, summary in pool.map(_run_cell, tasks):
                cells[(strategy, seed)] = {"records": records, "summary": summary}
                if progress is not None:
                    progress(strategy, seed, summary)
    else:
        for task in tasks:
            strategy, seed, records, summary = _run_cell(task)
            cells[(strategy, seed)] = {"records": records, "summary": summary}
            if progress is not None:
                progress(strategy, seed, summary)

    rows = aggregate_rows(cells, strategies, seeds)
    return ComparisonResult(strategies=list(strategies), seeds=seeds,
                            rows=rows, cells=cells)


def aggregate_rows(cells: dict, strategies: list, seeds: list) -> list[dict]:
    """Aggregate per-cell summaries into one row per strategy (mean and
    population std over seeds, plus the difference to baseline's mean)."""
    rows = []
    base_mean = None
    for s in strategies:
        best = np.array([cells[(s, seed)]["summary"]["best_test_top1"] for seed in seeds])
        backward = np.array([cells[(s, seed)]["summary"]["total_backward"] for seed in seeds])
        wall = np.array([cells[(s, seed)]["summary"]["total_wall_clock_ms"] for seed in seeds])
        row = {
            "strategy": s,
            "repeats": len(seeds),
            "best_top1_mean": float(best.mean()),
            "best_top1_std": float(best.std()),
            "total_backward_mean": float(backward.mean()),
            "wall_clock_ms_mean": float(wall.mean()),
        }
        if s == "baseline":
            base_mean = row["best_top1_mean"]
        rows.append(row)
    for row in rows:
        row["diff_vs_baseline"] = (
            row["best_top1_mean"] - base_mean if base_mean is not None else None
        )
    return rows


# ======================================================================
# Convergence-bound verifier
# ======================================================================


@dataclass
class LemmaConfig:
    """One Monte-Carlo cell for the quadratic-testbed bound.

    The objective is the average of f_i(w) = (L_i / 2) ||w - b_i||^2 and the
    sampler is single-sample SGD at constant step eta, started from w0.
    """

    curvatures: tuple
    targets: tuple      # m rows, each a dim-tuple
    eta: float
    steps: int
    trials: int
    seed: int
    w0: tuple
    name: str = ""

    def validate(self) -> None:
        if len(self.curvatures) < 1 or len(self.curvatures) != len(self.targets):
            raise ValueError("need matching curvature/target lists, len >= 1")
        if any(l <= 0 for l in self.curvatures):
            raise ValueError("curvatures must be > 0")
        dims = {len(t) for t in self.targets} | {len(self.w0)}
        if len(dims) != 1:
            raise ValueError("all targets and w0 must share one dimension")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class LemmaReport:
    name: str
    eta: float
    steps: int
    trials: int
    w_star: tuple
    sigma2: float
    lam: float
    c_hat: float
    r_sigma: float
    bound: float
    empirical: float
    stderr: float
    passed: bool
    deterministic: bool
    exact_expected: float | None = None
    exact_rel_err: float | None = None


def pl_constant(curvatures) -> float:
    """Curvature constant of the averaged objective.

    The average of (L_i/2)||w - b_i||^2 is (mean L / 2)||w||^2 plus linear
    terms, so its strong-convexity (and PL) constant is mean(L_i).
    """
    return float(np.mean(np.asarray(curvatures, dtype=np.float64)))


def verify_lemma(cfg: LemmaConfig) -> LemmaReport:
    """Check E||w_T - w*||^2 <= (1 - 2 eta C)^T ||w_0 - w*||^2 + eta sigma^2 / C.

    C = lambda (1 - eta sup L) with lambda the curvature constant of the
    averaged objective; sigma^2 is the average squared gradient norm at the
    optimum.  Requires eta <= 1/sup L.  PASS means the Monte-Carlo estimate
    does not exceed the bound by more than 3 standard errors.
    """
    cfg.validate()
    L = np.asarray(cfg.curvatures, dtype=np.float64)
    b = np.asarray(cfg.targets, dtype=np.float64)
    w0 = np.asarray(cfg.w0, dtype=np.float64)
    sup_l = float(L.max())
    if cfg.eta > 1.0 / sup_l:
        raise PreconditionViolated(
            f"eta = {cfg.eta} exceeds 1 / sup L = {1.0 / sup_l}"
        )

    if np.all(b == b[0]):
        w_star = b[0].copy()  # exact; the weighted mean would round
    else:
        w_star = (L[:, None] * b).sum(axis=0) / L.sum()
    sigma2 = float((L**2 * ((b - w_star) ** 2).sum(axis=1)).mean())
    lam = pl_constant(L)
    c_hat = lam * (1.0 - cfg.eta * sup_l)
    if sigma2 == 0.0:
        r_sigma = 0.0
    elif c_hat <= 0.0:
        r_sigma = math.inf
    else:
        r_sigma = sigma2 / c_hat
    delta0 = float(((w0 - w_star) ** 2).sum())
    rate = 1.0 - 2.0 * cfg.eta * c_hat
    if cfg.steps == 0:
        bound = delta0  # nothing iterated yet, no noise term accrued
    else:
        bound = rate**cfg.steps * delta0 + cfg.eta * r_sigma

    g = np.random.default_rng(splitmix64(cfg.seed))
    m = L.size
    w = np.tile(w0, (cfg.trials, 1))
    for _ in range(cfg.steps):
        i = g.integers(0, m, size=cfg.trials)
        w -= cfg.eta * L[i, None] * (w - b[i])
    sq = ((w - w_star) ** 2).sum(axis=1)
    empirical = float(sq.mean())
    stderr = float(sq.std(ddof=1) / math.sqrt(cfg.trials)) if cfg.trials > 1 else 0.0
    passed = empirical <= bound + 3.0 * stderr

    deterministic = sigma2 == 0.0 and bool(np.all(L == L[0]))
    exact = rel = None
    if deterministic:
        exact = (1.0 - cfg.eta * L[0]) ** (2 * cfg.steps) * delta0
        if exact > 0:
            rel = abs(empirical - exact) / exact
        else:
            rel = 0.0 if empirical == 0.0 else math.inf

    return LemmaReport(
        name=cfg.name, eta=cfg.eta, steps=cfg.steps, trials=cfg.trials,
        w_star=tuple(float(v) for v in w_star), sigma2=sigma2, lam=lam,
        c_hat=c_hat, r_sigma=r_sigma, bound=bound, empirical=empirical,
        stderr=stderr, passed=passed, deterministic=deterministic,
        exact_expected=exact, exact_rel_err=rel,
    )


def default_lemma_grid(trials: int = 10_000) -> list[LemmaConfig]:
    """Default verification grid: >= 20 cells spanning eta, horizon, and
    curvature spread, plus noiseless cells that contract deterministically."""
    cells = []
    # the symmetric pair: starts at the optimum, so the bound is eta * R_sigma
    cells.append(LemmaConfig(name="symmetric-pair", curvatures=(1.0, 1.0),
                             targets=((-1.0,), (1.0,)), eta=0.5, steps=400,
                             trials=trials, seed=101, w0=(0.0,)))
    spreads = {
        "uniform": (1.0, 1.0, 1.0, 1.0),
        "mild": (0.5, 1.0, 1.5, 2.0),
        "wide": (0.2, 1.0, 5.0),
    }
    seed = 200
    for sname, L in spreads.items():
        m = len(L)
        targets = tuple((float(v),) for v in np.linspace(-1.0, 1.0, m))
        for eta_frac in (0.2, 0.5, 0.9):
            for steps in (200, 600):
                cells.append(LemmaConfig(
                    name=f"{sname}-eta{eta_frac}-T{steps}",
                    curvatures=L, targets=targets,
                    eta=eta_frac / max(L), steps=steps,
                    trials=trials, seed=seed, w0=(2.0,)))
                seed += 1
    # a couple of 3-d clouds
    cloud = ((1.0, 0.0, -1.0), (-1.0, 1.0, 0.0), (0.0, -1.0, 1.0), (0.5, 0.5, 0.5))
    for eta_frac in (0.3, 0.8):
        cells.append(LemmaConfig(
            name=f"cloud3d-eta{eta_frac}",
            curvatures=(0.5, 1.0, 2.0, 4.0), targets=cloud,
            eta=eta_frac / 4.0, steps=300, trials=trials,
            seed=seed, w0=(1.0, -1.0, 0.5)))
        seed += 1
    # the eta = 1/sup L boundary: C becomes 0, so the bound degenerates but
    # must still hold
    cells.append(LemmaConfig(
        name="edge-eta-at-supL", curvatures=(0.5, 1.0, 1.5),
        targets=((-1.0,), (0.0,), (1.0,)), eta=1.0 / 1.5, steps=200,
        trials=trials, seed=seed, w0=(2.0,)))
    seed += 1
    # noiseless: identical curvatures and all targets at the origin, so
    # every trial is the same deterministic contraction of w0 and the
    # iterates stay exactly comparable to the closed form
    for lval, eta_frac, steps in ((1.0, 0.5, 50), (2.0, 0.25, 80),
                                  (0.7, 0.9, 120), (1.5, 0.8, 60)):
        cells.append(LemmaConfig(
            name=f"noiseless-L{lval}-eta{eta_frac}",
            curvatures=(lval,) * 3, targets=((0.0, 0.0),) * 3,
            eta=eta_frac / lval, steps=steps, trials=trials,
            seed=seed, w0=(1.3, 0.8)))
        seed += 1
    return cells
