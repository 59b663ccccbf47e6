"""Teacher / student self-training with a weighted, per-source label-smoothed loss.

Pipeline: (optional) masked-LM pretraining of the encoder, supervised teacher
training on human labels, pseudo-labeling of unlabeled text with the sliding
window decoder, then a student trained from the initial weights on both
sources. The student can replace the teacher for further rounds; every
candidate is scored on the human-labeled validation set.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import EncodedExample, LabeledExample, Vocabulary, chunk_for_training, encode, encode_words
from .decode import WindowSpec, decode_many
from .errors import ConfigError, TrainingError
from .labels import ENGLISH4, LabelSet, PunctLabel, Source, get_label_set
from .loss import SmoothingSpec, batch_loss, check_beta
from .metrics import Metrics, score
from .model import (
    AdamState,
    Batch,
    ModelConfig,
    ModelParams,
    collate,
    encoder_backward,
    encoder_forward,
    forward,
    backward,
    init_params,
    log_softmax,
    optimizer_step,
    softmax,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class STConfig:
    alpha: float = 1.0
    smoothing: SmoothingSpec = SmoothingSpec()
    st_iterations: int = 1
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    selection_metric: str = "overall_f1"
    pseudo_ratio: float = 1.0
    max_len: int = 64
    chunk_overlap: int = 16
    window: WindowSpec = WindowSpec()
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if self.st_iterations < 1:
            raise ConfigError("st_iterations must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.selection_metric != "overall_f1":
            raise ConfigError(f"unsupported selection metric {self.selection_metric!r}")
        if self.pseudo_ratio <= 0:
            raise ConfigError("pseudo_ratio must be > 0")

    def replace(self, **changes) -> "STConfig":
        if "beta_human" in changes or "beta_pseudo" in changes:
            s = self.smoothing
            changes["smoothing"] = SmoothingSpec(changes.pop("beta_human", s.beta_human),
                                                 changes.pop("beta_pseudo", s.beta_pseudo))
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "STConfig":
        d = dict(d)
        if "smoothing" in d and isinstance(d["smoothing"], dict):
            d["smoothing"] = SmoothingSpec(**d["smoothing"])
        if "window" in d and isinstance(d["window"], dict):
            d["window"] = WindowSpec(**d["window"])
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_metrics: list[dict] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    chosen_checkpoint: str = "init"
    best_val_f1: float = float("nan")
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_clock: float = field(default=0.0, compare=False)
    params_fingerprint: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainingData:
    """Human train/validation splits already bound to a vocabulary."""

    vocab: Vocabulary
    train: list[LabeledExample]
    val: list[LabeledExample]
    label_set: LabelSet = ENGLISH4

    def __post_init__(self):
        self.label_set = get_label_set(self.label_set)
        if any(e.source != Source.HUMAN for e in self.val):
            raise ConfigError("validation data must be human-labeled")
        self._val_encoded = [encode(e, self.vocab) for e in self.val]

    @property
    def val_encoded(self) -> list[EncodedExample]:
        return self._val_encoded


def _make_chunks(examples: Iterable[LabeledExample], vocab: Vocabulary, config: STConfig) -> list[EncodedExample]:
    out = []
    for ex in examples:
        out.extend(chunk_for_training(encode(ex, vocab), config.max_len, config.chunk_overlap))
    return out


def evaluate(params: ModelParams, data: TrainingData, window: WindowSpec, examples=None) -> Metrics:
    """Sliding-window decode of human-labeled examples, scored against their labels."""
    if examples is None:
        encoded = data.val_encoded
        gold_examples = data.val
    else:
        gold_examples = list(examples)
        encoded = [encode(e, data.vocab) for e in gold_examples]
    if any(e.source != Source.HUMAN for e in gold_examples):
        raise ConfigError("evaluation requires human-labeled examples")
    pred = decode_many(params, encoded, window, pad_id=data.vocab.pad_id)
    gold = [np.asarray([int(x) for x in e.labels]) for e in gold_examples]
    return score(pred, gold, data.label_set)


def _clip(grads: dict[str, np.ndarray], max_norm: float | None) -> None:
    if max_norm is None:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total


def _train(
    human_chunks: list[EncodedExample],
    pseudo_chunks: list[EncodedExample],
    init: ModelParams,
    config: STConfig,
    data: TrainingData,
) -> tuple[ModelParams, TrainReport]:
    t0 = time.perf_counter()
    report = TrainReport(seed=config.seed, config=config.to_dict())
    if config.epochs == 0 or not human_chunks:
        report.params_fingerprint = init.fingerprint()
        report.wall_clock = time.perf_counter() - t0
        return init, report
    rng = np.random.default_rng([config.seed, 17])
    drop_rng = np.random.default_rng([config.seed, 29])
    bs = config.batch_size
    pbs = max(1, int(round(bs * config.pseudo_ratio))) if pseudo_chunks else 0
    steps_per_epoch = -(-len(human_chunks) // bs)
    state = AdamState(total_steps=config.epochs * steps_per_epoch)
    beta_h = config.smoothing.beta_human
    beta_p = config.smoothing.beta_pseudo
    pad = data.vocab.pad_id

    pseudo_order: list[int] = []

    def next_pseudo(n):
        nonlocal pseudo_order
        out = []
        while len(out) < n:
            if not pseudo_order:
                pseudo_order = list(rng.permutation(len(pseudo_chunks)))
            out.append(pseudo_chunks[pseudo_order.pop()])
        return out

    params = init
    best = (-1.0, init, "init")
    for epoch in range(config.epochs):
        order = rng.permutation(len(human_chunks))
        losses = []
        for s in range(steps_per_epoch):
            hb = [human_chunks[i] for i in order[s * bs : (s + 1) * bs]]
            pb = next_pseudo(pbs) if pbs else []
            batch = collate(hb + pb, pad)
            logits, cache = forward(params, batch, train_mode=True, rng=drop_rng)
            nh = len(hb)
            loss_h, grad_h, _ = batch_loss(logits[:nh], batch.labels[:nh], batch.target_mask[:nh], beta_h)
            dlogits = np.empty_like(logits)
            dlogits[:nh] = grad_h
            loss = loss_h
            if pb:
                loss_p, grad_p, _ = batch_loss(logits[nh:], batch.labels[nh:], batch.target_mask[nh:],
                                               beta_p, weight=config.alpha)
                dlogits[nh:] = grad_p
                loss += loss_p
            if not np.isfinite(loss):
                report.wall_clock = time.perf_counter() - t0
                raise TrainingError(f"non-finite loss at epoch {epoch} step {s}; report so far: {report}")
            grads = backward(params, cache, dlogits)
            _clip(grads, config.grad_clip)
            params, state = optimizer_step(params, grads, state, config.learning_rate)
            losses.append(loss)
        report.train_loss.append(float(np.mean(losses)))
        metrics = evaluate(params, data, config.window)
        report.val_metrics.append(metrics.to_dict())
        report.val_f1.append(metrics.f1)
        logger.info("epoch %d loss %.4f val F1 %.4f", epoch, report.train_loss[-1], metrics.f1)
        if metrics.f1 > best[0]:
            best = (metrics.f1, params, f"epoch-{epoch}")
    report.best_val_f1, params, report.chosen_checkpoint = best
    report.params_fingerprint = params.fingerprint()
    report.wall_clock = time.perf_counter() - t0
    return params, report


def train_supervised(data: TrainingData, init: ModelParams, config: STConfig,
                     beta: float | None = None) -> tuple[ModelParams, TrainReport]:
    """Cross-entropy training on human labels only; best epoch by validation F1.

    ``beta`` defaults to the config's human smoothing factor; pass 0 for the
    plain supervised baseline.
    """
    if not data.train:
        raise ConfigError("no training data")
    if any(e.source != Source.HUMAN for e in data.train):
        raise ConfigError("the teacher is trained on human-labeled data only")
    if beta is not None:
        config = config.replace(beta_human=beta)
    return _train(_make_chunks(data.train, data.vocab, config), [], init, config, data)


def pseudo_label(params: ModelParams, unlabeled: Sequence[Sequence[str]], vocab: Vocabulary,
                 window: WindowSpec, batch_size: int = 64) -> list[LabeledExample]:
    """Argmax labels for every unlabeled word sequence, tagged as pseudo-labeled."""
    if params.vocab_fingerprint and params.vocab_fingerprint != vocab.fingerprint():
        raise ConfigError("model was trained with a different vocabulary")
    unlabeled = [list(u.words) if isinstance(u, LabeledExample) else list(u) for u in unlabeled]
    encoded = [encode_words(words, vocab) for words in unlabeled]
    preds = decode_many(params, encoded, window, batch_size=batch_size, pad_id=vocab.pad_id)
    return [
        LabeledExample(tuple(words), tuple(PunctLabel(int(c)) for c in pred), Source.PSEUDO)
        for words, pred in zip(unlabeled, preds)
    ]


def train_student(data: TrainingData, pseudo: Sequence[LabeledExample], init: ModelParams,
                  config: STConfig) -> tuple[ModelParams, TrainReport]:
    """Train on human + pseudo data with loss mean_h(beta1) + alpha * mean_p(beta2).

    ``init`` should be the pretrained / initial weights, not the teacher.
    """
    if any(e.source != Source.PSEUDO for e in pseudo):
        raise ConfigError("pseudo data must be flagged PSEUDO")
    human_chunks = _make_chunks(data.train, data.vocab, config)
    pseudo_chunks = _make_chunks(pseudo, data.vocab, config)
    return _train(human_chunks, pseudo_chunks, init, config, data)


@dataclass
class SelfTrainReport:
    teacher: TrainReport
    students: list[TrainReport]
    iteration_f1: list[float]
    best_iteration: int
    best_val_f1: float
    pseudo_fingerprints: list[str]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def labels_fingerprint(examples: Sequence[LabeledExample]) -> str:
    """Hash of the label sequences, for checking that two pseudo-label runs agree."""
    h = hashlib.sha256()
    for e in examples:
        h.update(bytes(int(x) for x in e.labels))
        h.update(b"|")
    return h.hexdigest()


def self_train_loop(data: TrainingData, unlabeled: Sequence[Sequence[str]], config: STConfig,
                    init: ModelParams, teacher_beta: float | None = None
                    ) -> tuple[ModelParams, SelfTrainReport, list[list[LabeledExample]]]:
    """Teacher, then ``st_iterations`` rounds of pseudo-label + student.

    Each new student becomes the next teacher. Returns the candidate (the
    initial teacher included, as iteration 0) with the best validation F1.
    """
    teacher, t_report = train_supervised(data, init, config, beta=teacher_beta)
    candidates = [(t_report.best_val_f1, 0, teacher)]
    students, pseudo_sets, fps = [], [], []
    for it in range(1, config.st_iterations + 1):
        pseudo = pseudo_label(teacher, unlabeled, data.vocab, config.window)
        pseudo_sets.append(pseudo)
        fps.append(labels_fingerprint(pseudo))
        student, s_report = train_student(data, pseudo, init, config)
        students.append(s_report)
        candidates.append((s_report.best_val_f1, it, student))
        teacher = student
    best_f1, best_it, best_params = max(candidates, key=lambda c: (c[0], -c[1]))
    report = SelfTrainReport(t_report, students, [c[0] for c in candidates], best_it, best_f1, fps)
    return best_params, report, pseudo_sets


# ---------------------------------------------------------------------------
# hyperparameter search


@dataclass
class LeaderboardRow:
    alpha: float
    beta_human: float
    beta_pseudo: float
    val_f1: float
    report: TrainReport = field(repr=False, compare=False, default=None)


def grid_points(alphas: Sequence[float], betas_human: Sequence[float], betas_pseudo: Sequence[float]):
    return list(itertools.product(alphas, betas_human, betas_pseudo))


DEFAULT_GRID = grid_points((0.25, 0.5, 1.0), (0.0, 0.05, 0.1), (0.05, 0.1, 0.2))


def tune_hyperparams(data: TrainingData, pseudo: Sequence[LabeledExample], init: ModelParams,
                     config: STConfig, grid: Sequence[tuple[float, float, float]] = DEFAULT_GRID,
                     ) -> tuple[STConfig, list[LeaderboardRow]]:
    """Exhaustive student search over (alpha, beta_human, beta_pseudo).

    Leaderboard is sorted by validation F1, ties going to smaller alpha, then
    smaller beta_pseudo, then smaller beta_human.
    """
    if not grid:
        raise ConfigError("empty grid")
    rows = []
    for alpha, b1, b2 in grid:
        check_beta(b1)
        check_beta(b2)
        cfg = config.replace(alpha=alpha, beta_human=b1, beta_pseudo=b2)
        _, rep = train_student(data, pseudo, init, cfg)
        rows.append(LeaderboardRow(alpha, b1, b2, rep.best_val_f1, rep))
    rows.sort(key=lambda r: (-r.val_f1, r.alpha, r.beta_pseudo, r.beta_human))
    best = rows[0]
    return config.replace(alpha=best.alpha, beta_human=best.beta_human, beta_pseudo=best.beta_pseudo), rows


def tune_window(params: ModelParams, data: TrainingData, window: int,
                overlaps: Sequence[tuple[int, int]]) -> tuple[WindowSpec, list[tuple[WindowSpec, float]]]:
    """Pick (left, right) overlaps by validation F1; ties go to the larger step."""
    rows = []
    for lo, ro in overlaps:
        spec = WindowSpec(window, lo, ro)
        rows.append((spec, evaluate(params, data, spec).f1))
    rows.sort(key=lambda r: (-r[1], -r[0].step, -r[0].left_overlap))
    return rows[0][0], rows


# ---------------------------------------------------------------------------
# masked-LM pretraining


@dataclass
class MLMReport:
    train_loss: list[float] = field(default_factory=list)
    heldout_loss: list[float] = field(default_factory=list)


def mask_tokens(ids: np.ndarray, key_mask: np.ndarray, vocab: Vocabulary, rate: float,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """BERT-style corruption: pick ``rate`` of real tokens; 80% -> MASK, 10% random, 10% kept.

    Returns (corrupted ids, boolean target mask).
    """
    chosen = (rng.random(ids.shape) < rate) & key_mask
    r = rng.random(ids.shape)
    n_special = 3
    random_ids = rng.integers(n_special, len(vocab), size=ids.shape)
    out = ids.copy()
    out[chosen & (r < 0.8)] = vocab.mask_id
    swap = chosen & (r >= 0.8) & (r < 0.9)
    out[swap] = random_ids[swap]
    return out, chosen


def _mlm_step(params, head, batch, ids_in, targets, target_mask, train_mode, rng):
    b = Batch(ids_in, batch.key_mask, batch.gather, batch.word_mask, batch.labels, batch.target_mask)
    hidden, cache = encoder_forward(params, b, train_mode, rng)
    n = int(target_mask.sum())
    if n == 0:
        return 0.0, None, cache, hidden
    h = hidden[target_mask]
    logits = h @ head["mlm.w"] + head["mlm.b"]
    tgt = targets[target_mask]
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), tgt].mean())
    dlogits = softmax(logits)
    dlogits[np.arange(n), tgt] -= 1.0
    dlogits /= n
    return loss, (h, dlogits), cache, hidden


def mlm_loss(params: ModelParams, head: dict, examples: Sequence[EncodedExample], vocab: Vocabulary,
             rate: float = 0.15, seed: int = 0, batch_size: int = 32) -> float:
    rng = np.random.default_rng([seed, 3])
    total, count = 0.0, 0
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i : i + batch_size], vocab.pad_id)
        ids_in, tmask = mask_tokens(batch.ids, batch.key_mask, vocab, rate, rng)
        loss, _, _, _ = _mlm_step(params, head, batch, ids_in, batch.ids, tmask, False, None)
        n = int(tmask.sum())
        total += loss * n
        count += n
    return total / max(count, 1)


def pretrain_mlm(corpus: Sequence[Sequence[str]], vocab: Vocabulary, model_config: ModelConfig,
                 epochs: int = 1, mask_rate: float = 0.15, learning_rate: float = 1e-3,
                 batch_size: int = 32, max_len: int = 64, seed: int = 0,
                 heldout: Sequence[Sequence[str]] = (), init: ModelParams | None = None,
                 ) -> tuple[ModelParams, MLMReport]:
    """Masked-token pretraining of the encoder.

    A temporary output layer over the vocabulary is trained alongside and then
    dropped; the classifier head of the returned params is left as initialised.
    """
    if not 0.0 <= mask_rate < 1.0:
        raise ConfigError(f"mask_rate must be in [0, 1), got {mask_rate}")
    params = init if init is not None else init_params(model_config, seed, vocab.fingerprint())
    rng = np.random.default_rng([seed, 41])
    head_rng = np.random.default_rng([seed, 43])
    D, V = model_config.d_model, model_config.vocab_size
    dt = np.dtype(model_config.dtype)
    bound = 1.0 / np.sqrt(D)
    head = {"mlm.w": head_rng.uniform(-bound, bound, (D, V)).astype(dt), "mlm.b": np.zeros(V, dt)}

    def chunks(seqs):
        out = []
        for words in seqs:
            out.extend(chunk_for_training(encode_words(list(words), vocab), max_len, 0))
        return out

    train_chunks = chunks(corpus)
    held_chunks = chunks(heldout)
    steps_per_epoch = -(-len(train_chunks) // batch_size)
    state = AdamState(total_steps=max(1, epochs * steps_per_epoch))
    report = MLMReport()
    if held_chunks:
        report.heldout_loss.append(mlm_loss(params, head, held_chunks, vocab, mask_rate, seed))
    for _ in range(epochs):
        order = rng.permutation(len(train_chunks))
        losses = []
        for s in range(steps_per_epoch):
            batch = collate([train_chunks[i] for i in order[s * batch_size : (s + 1) * batch_size]], vocab.pad_id)
            ids_in, tmask = mask_tokens(batch.ids, batch.key_mask, vocab, mask_rate, rng)
            loss, extra, cache, hidden = _mlm_step(params, head, batch, ids_in, batch.ids, tmask, True, rng)
            losses.append(loss)
            dhidden = np.zeros_like(hidden)
            grads_head = {"mlm.w": np.zeros_like(head["mlm.w"]), "mlm.b": np.zeros_like(head["mlm.b"])}
            if extra is not None:
                h, dlogits = extra
                grads_head["mlm.w"] = h.T @ dlogits
                grads_head["mlm.b"] = dlogits.sum(0)
                dhidden[tmask] = dlogits @ head["mlm.w"].T
            grads = encoder_backward(params, cache, dhidden)
            grads["cls.w"] = np.zeros_like(params["cls.w"])
            grads["cls.b"] = np.zeros_like(params["cls.b"])
            combined = ModelParams(model_config, {**params.tensors, **head}, params.vocab_fingerprint)
            combined, state = optimizer_step(combined, {**grads, **grads_head}, state, learning_rate)
            head = {k: combined.tensors.pop(k) for k in ("mlm.w", "mlm.b")}
            params = ModelParams(model_config, combined.tensors, params.vocab_fingerprint)
        report.train_loss.append(float(np.mean(losses)) if losses else 0.0)
        if held_chunks:
            report.heldout_loss.append(mlm_loss(params, head, held_chunks, vocab, mask_rate, seed))
    return params, report
