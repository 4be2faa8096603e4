"""Training and evaluation harness.

One optimizer step per iteration on the combined loss; the gradient-flow
partition of the model (the main loss reaches no pretext-head parameter and
the pretext loss reaches no main-head parameter) makes that step identical to
separate per-head updates.

Determinism contract: with a fixed seed, two runs on the same data produce
identical metrics files and checkpoints. Separate RNG streams drive batch
order, rotation sampling, and evaluation, so optional computations (for
example evaluating target accuracy when target labels happen to exist) never
shift the training trajectory.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields, asdict

import numpy as np
import torch

from .data import PairedSample
from .errors import ConfigError, DataError, NumericalError
from .losses import (ABSOLUTE_ROTATION, ADAPT_METHODS, AFN, GRL, METHODS, MMD,
                     PRETEXT_METHODS, SOURCE_ONLY, DomainDiscriminator,
                     afn_adapt, combine, entropy_loss, grl_adapt, main_loss,
                     mmd_loss, pretext_loss)
from .models import (CONV_HEAD, FC_HEAD, BackboneSpec, ModelBundle,
                     build_bundle)
from .rotation import (ABSOLUTE, RELATIVE, RotationBatch,
                       make_absolute_rotation_batch, make_rotation_batch)

PRETEXT_BOTH = "both"
PRETEXT_TARGET_ONLY = "target-only"
PRETEXT_DOMAIN_CHOICES = (PRETEXT_BOTH, PRETEXT_TARGET_ONLY)

CHECKPOINT_FORMAT = "rotadapt-ckpt-v1"
METRICS_VERSION = "rotadapt-metrics-v1"
METRICS_COLUMNS = ("epoch", "loss_main", "loss_pretext", "loss_entropy",
                   "loss_adapt", "loss_total", "acc_source", "acc_target",
                   "pretext_acc_source", "pretext_acc_target",
                   "feat_norm_source", "feat_norm_target")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    Defaults: SGD with momentum 0.9, learning rate 3e-4, batch size 64,
    weight decay 0.05, dropout 0.5; auxiliary-loss weight 1.0 and entropy
    weight 0.1. Weight decay covers batch-norm scales unless
    decay_bn_scales is switched off.
    """

    method: str = "relative-rotation"
    epochs: int = 30
    batch_size: int = 64
    lr: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 0.05
    dropout: float = 0.5
    lambda_p: float = 1.0
    lambda_ent: float = 0.1
    lambda_adapt: float = 1.0
    delta_r: float = 1.0
    pretext_domains: str = PRETEXT_BOTH
    pretext_head: str = CONV_HEAD
    eval_every: int = 1
    seed: int = 0
    decay_bn_scales: bool = True
    backbone: BackboneSpec = field(default_factory=BackboneSpec)

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneSpec.from_dict(self.backbone)
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.pretext_domains not in PRETEXT_DOMAIN_CHOICES:
            raise ConfigError(
                f"pretext_domains must be one of {PRETEXT_DOMAIN_CHOICES}, "
                f"got {self.pretext_domains!r}")
        if self.pretext_head not in (CONV_HEAD, FC_HEAD):
            raise ConfigError(f"pretext_head must be conv or fc, got {self.pretext_head!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(
                f"batch_size must be >= 2 (batch norm needs it), got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("lambda_p", "lambda_ent", "lambda_adapt"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.delta_r <= 0:
            raise ConfigError(f"delta_r must be positive, got {self.delta_r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_toml(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "backbone":
                continue
            lines.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        lines.append("")
        lines.append("[backbone]")
        for key, value in self.backbone.to_dict().items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, path: str) -> "TrainConfig":
        import tomli

        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}")
        return cls.from_dict(raw)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError(f"cannot serialize non-finite float {value}")
        text = repr(value)
        return text if ("." in text or "e" in text or "E" in text) else text + ".0"
    if isinstance(value, str):
        return json.dumps(value)
    raise ConfigError(f"cannot serialize config value {value!r}")


@dataclass
class RunMetrics:
    """Per-epoch loss and accuracy records for one run.

    Wall-clock time is kept as an attribute but never written into the CSV,
    so fixed-seed runs emit byte-identical metrics files.
    """

    config: TrainConfig
    rows: list
    wall_clock_s: float = 0.0

    def to_csv(self) -> str:
        header = [f"# {METRICS_VERSION}",
                  "# config: " + json.dumps(self.config.to_dict(), sort_keys=True),
                  ",".join(METRICS_COLUMNS)]
        lines = header
        for row in self.rows:
            cells = []
            for col in METRICS_COLUMNS:
                v = row.get(col)
                if v is None:
                    cells.append("")
                elif col == "epoch":
                    cells.append(str(int(v)))
                else:
                    cells.append(f"{v:.6f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


@dataclass
class EvalResult:
    accuracy: float
    per_class: list
    count: int


class _Cycler:
    """Endless shuffled iteration over a sample list, reshuffling per pass."""

    def __init__(self, samples: list, rng: np.random.Generator):
        self.samples = samples
        self.rng = rng
        self.order = rng.permutation(len(samples))
        self.pos = 0

    def take(self, n: int) -> list:
        out = []
        while len(out) < n:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.samples))
                self.pos = 0
            out.append(self.samples[int(self.order[self.pos])])
            self.pos += 1
        return out


def _image_tensor(arrays: list) -> torch.Tensor:
    stacked = np.stack(arrays).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(stacked))


def _main_tensors(samples: list, need_labels: bool):
    color = _image_tensor([s.color for s in samples])
    depth = _image_tensor([s.depth for s in samples])
    if not need_labels:
        return color, depth, None
    for s in samples:
        if s.label is None:
            raise DataError(f"sample {s.id} has no label")
    labels = torch.tensor([s.label for s in samples], dtype=torch.int64)
    return color, depth, labels


def _rotation_tensors(batch: RotationBatch):
    color = _image_tensor(list(batch.color))
    depth = _image_tensor(list(batch.depth))
    z = torch.from_numpy(batch.z)
    return color, depth, z


def pretext_fused(bundle: ModelBundle, color: torch.Tensor, depth: torch.Tensor,
                  task: str) -> torch.Tensor:
    """Fused features feeding the pretext head.

    The relative task fuses both streams. The absolute task is defined on the
    color modality alone, so the depth half of the fused map is zeroed: the
    head sees no second modality that could leak the relative cue.
    """
    if task == RELATIVE:
        return bundle.extract_features(color, depth)
    if task == ABSOLUTE:
        feats = bundle.E_color(color)
        return torch.cat([feats, torch.zeros_like(feats)], dim=1)
    raise ValueError(f"unknown pretext task {task!r}")


def evaluate(bundle: ModelBundle, samples: list, batch_size: int = 64) -> EvalResult:
    """Accuracy of the object classifier; the pretext head is never invoked."""
    if not samples:
        raise DataError("cannot evaluate on an empty dataset")
    for s in samples:
        if s.label is None:
            raise DataError(f"cannot evaluate: sample {s.id} has no label")
    num_classes = bundle.num_classes
    correct = np.zeros(num_classes, dtype=np.int64)
    total = np.zeros(num_classes, dtype=np.int64)
    was_training = bundle.training
    bundle.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            color, depth, labels = _main_tensors(chunk, need_labels=True)
            pred = bundle.classify(color, depth).argmax(dim=1)
            for y, p in zip(labels.tolist(), pred.tolist()):
                total[y] += 1
                correct[y] += int(y == p)
    bundle.train(was_training)
    per_class = [correct[c] / total[c] if total[c] else float("nan")
                 for c in range(num_classes)]
    return EvalResult(accuracy=float(correct.sum() / total.sum()),
                      per_class=per_class, count=int(total.sum()))


def evaluate_pretext(bundle: ModelBundle, samples: list, rng: np.random.Generator,
                     task: str = RELATIVE, batch_size: int = 64,
                     episodes: int = 1) -> float:
    """Rotation-prediction accuracy of the pretext head; chance level is 0.25.

    Each episode draws one fresh rotation pair per sample; episodes > 1
    re-covers the dataset with new draws to tighten the estimate.
    """
    if not samples:
        raise DataError("cannot evaluate pretext on an empty dataset")
    maker = make_rotation_batch if task == RELATIVE else make_absolute_rotation_batch
    was_training = bundle.training
    bundle.eval()
    correct = 0
    total = 0
    with torch.no_grad():
        for _ in range(episodes):
            for start in range(0, len(samples), batch_size):
                batch = maker(samples[start:start + batch_size], rng)
                color, depth, z = _rotation_tensors(batch)
                probs = bundle.pretext_probs(pretext_fused(bundle, color, depth, task))
                pred = probs.argmax(dim=1)
                correct += int((pred == z).sum())
                total += len(z)
    bundle.train(was_training)
    return correct / total


def feature_norms(bundle: ModelBundle, samples: list, batch_size: int = 64) -> float:
    """Mean L2 norm of the classifier's last-hidden-layer features."""
    if not samples:
        raise DataError("cannot compute feature norms on an empty dataset")
    was_training = bundle.training
    bundle.eval()
    norm_sum = 0.0
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            color, depth, _ = _main_tensors(chunk, need_labels=False)
            hidden = bundle.main_hidden(bundle.extract_features(color, depth))
            norm_sum += float(hidden.norm(p=2, dim=1).sum())
    bundle.train(was_training)
    return norm_sum / len(samples)


def _optimizer(config: TrainConfig, bundle: ModelBundle,
               extra: torch.nn.Module | None) -> torch.optim.SGD:
    modules = [bundle] + ([extra] if extra is not None else [])
    if config.decay_bn_scales:
        params = [p for m in modules for p in m.parameters()]
        return torch.optim.SGD(params, lr=config.lr, momentum=config.momentum,
                               weight_decay=config.weight_decay)
    bn_params, other_params = [], []
    for m in modules:
        for mod in m.modules():
            if isinstance(mod, (torch.nn.BatchNorm1d, torch.nn.BatchNorm2d)):
                bn_params.extend(mod.parameters(recurse=False))
    bn_ids = {id(p) for p in bn_params}
    for m in modules:
        other_params.extend(p for p in m.parameters() if id(p) not in bn_ids)
    return torch.optim.SGD(
        [{"params": other_params, "weight_decay": config.weight_decay},
         {"params": bn_params, "weight_decay": 0.0}],
        lr=config.lr, momentum=config.momentum)


def _infer_num_classes(samples: list) -> int:
    labels = [s.label for s in samples if s.label is not None]
    if len(labels) != len(samples):
        raise DataError("source dataset must be fully labeled")
    c = max(labels) + 1
    if c < 2:
        raise DataError(f"need at least 2 classes, found {c}")
    return c


def _check_geometry(samples: list, name: str) -> int:
    h, w = samples[0].color.shape[:2]
    if h != w:
        raise DataError(f"{name} images must be square, got {h}×{w}")
    for s in samples:
        if s.color.shape[:2] != (h, w):
            raise DataError(f"{name} sample {s.id} has size {s.color.shape[:2]}, expected {h}×{w}")
    return h


def train(config: TrainConfig, source: list, target: list | None = None,
          source_eval: list | None = None, target_eval: list | None = None,
          resume_from: str | None = None) -> tuple:
    """Run the training loop and return (bundle, metrics).

    source must be fully labeled. target labels, if present, are used only
    for the reported target accuracy; they never reach the optimizer, which
    is why stripping them leaves checkpoints bit-identical.

    Per iteration: a labeled source mini-batch drives the classification
    loss; methods that use the target domain additionally load an unlabeled
    target mini-batch; rotation methods load freshly transformed mini-batches
    for the rotation loss. Terms whose weight is zero are skipped outright,
    so relative-rotation with lambda_p = lambda_ent = 0 retraces source-only
    training exactly.
    """
    started = time.perf_counter()
    method = config.method
    if source is None or len(source) == 0:
        raise DataError("empty source dataset")
    task = ABSOLUTE if method == ABSOLUTE_ROTATION else RELATIVE
    do_pretext = method in PRETEXT_METHODS and config.lambda_p > 0
    do_adapt = method in ADAPT_METHODS and config.lambda_adapt > 0
    do_entropy = method != SOURCE_ONLY and config.lambda_ent > 0
    needs_target_main = do_entropy or do_adapt
    pretext_uses_source = do_pretext and config.pretext_domains == PRETEXT_BOTH
    needs_target = needs_target_main or do_pretext
    if needs_target:
        if target is None:
            raise ConfigError(f"method {method!r} needs a target dataset")
        if len(target) == 0:
            raise DataError("empty target dataset")

    num_classes = _infer_num_classes(source)
    size = _check_geometry(source, "source")
    if target:
        tsize = _check_geometry(target, "target")
        if tsize != size:
            raise DataError(f"source images are {size}px but target images are {tsize}px")

    torch.manual_seed(config.seed)
    start_epoch = 0
    if resume_from is not None:
        bundle, _, start_epoch = checkpoint_load(resume_from, expected_config=config)
        if bundle.num_classes != num_classes:
            raise ConfigError(
                f"checkpoint has {bundle.num_classes} classes, data has {num_classes}")
        if config.epochs <= start_epoch:
            raise ConfigError(
                f"checkpoint already at epoch {start_epoch}, config.epochs = {config.epochs}")
    else:
        bundle = build_bundle(num_classes, backbone=config.backbone, input_size=size,
                              pretext_head=config.pretext_head, dropout=config.dropout)
    discriminator = None
    if method == GRL:
        discriminator = DomainDiscriminator(2 * bundle.feature_channels)
    optimizer = _optimizer(config, bundle, discriminator)

    # independent streams: consuming one never shifts the others
    streams = np.random.SeedSequence(config.seed).spawn(5)
    rng_order_source = np.random.default_rng(streams[0])
    rng_order_target = np.random.default_rng(streams[1])
    rng_pretext_source = np.random.default_rng(streams[2])
    rng_pretext_target = np.random.default_rng(streams[3])
    rng_rotation = np.random.default_rng(streams[4])

    target_cycler = _Cycler(target, rng_order_target) if needs_target_main else None
    pre_src_cycler = _Cycler(source, rng_pretext_source) if pretext_uses_source else None
    pre_tgt_cycler = _Cycler(target, rng_pretext_target) if do_pretext else None

    b = config.batch_size
    iters = math.ceil(len(source) / b)
    total_planned = config.epochs * iters
    source_eval = source_eval if source_eval is not None else source
    target_eval = target_eval if target_eval is not None else target
    target_eval_labeled = bool(target_eval) and all(
        s.label is not None for s in target_eval)

    rows = []
    last_acc = {"acc_source": None, "acc_target": None, "pretext_acc_source": None,
                "pretext_acc_target": None, "feat_norm_source": None,
                "feat_norm_target": None}
    for epoch in range(start_epoch + 1, config.epochs + 1):
        bundle.train()
        if discriminator is not None:
            discriminator.train()
        perm = rng_order_source.permutation(len(source))
        sums = {"loss_main": 0.0, "loss_pretext": 0.0, "loss_entropy": 0.0,
                "loss_adapt": 0.0, "loss_total": 0.0}
        steps = 0
        for it in range(iters):
            idx = perm[it * b:(it + 1) * b]
            if len(idx) < 2:
                continue  # a single-row batch would break batch norm
            batch_s = [source[int(i)] for i in idx]
            color_s, depth_s, y_s = _main_tensors(batch_s, need_labels=True)
            fused_s = bundle.extract_features(color_s, depth_s)
            probs_s = bundle.main_probs(fused_s)
            l_main = main_loss(probs_s, y_s)

            batch_t = None
            fused_t = None
            if needs_target_main:
                batch_t = target_cycler.take(b)
                color_t, depth_t, _ = _main_tensors(batch_t, need_labels=False)
                fused_t = bundle.extract_features(color_t, depth_t)

            l_entropy = None
            if do_entropy:
                l_entropy = entropy_loss(bundle.main_probs(fused_t))

            l_pretext = None
            if do_pretext:
                maker = (make_rotation_batch if task == RELATIVE
                         else make_absolute_rotation_batch)
                probs_ps = z_ps = None
                if pretext_uses_source:
                    rb = maker(pre_src_cycler.take(b), rng_rotation)
                    pc, pd, z_ps = _rotation_tensors(rb)
                    probs_ps = bundle.pretext_probs(pretext_fused(bundle, pc, pd, task))
                rb = maker(pre_tgt_cycler.take(b), rng_rotation)
                pc, pd, z_pt = _rotation_tensors(rb)
                probs_pt = bundle.pretext_probs(pretext_fused(bundle, pc, pd, task))
                l_pretext = pretext_loss(probs_ps, z_ps, probs_pt, z_pt)

            l_adapt = None
            if do_adapt:
                if method == GRL:
                    pooled = torch.cat([fused_s.mean(dim=(2, 3)),
                                        fused_t.mean(dim=(2, 3))], dim=0)
                    domains = torch.cat([
                        torch.zeros(fused_s.shape[0], dtype=torch.int64),
                        torch.ones(fused_t.shape[0], dtype=torch.int64)])
                    progress = ((epoch - 1) * iters + it) / max(total_planned, 1)
                    l_adapt = grl_adapt(pooled, domains, discriminator, progress)
                elif method == MMD:
                    l_adapt = mmd_loss(bundle.main_hidden(fused_s),
                                       bundle.main_hidden(fused_t))
                elif method == AFN:
                    hidden = torch.cat([bundle.main_hidden(fused_s),
                                        bundle.main_hidden(fused_t)], dim=0)
                    l_adapt = afn_adapt(hidden, config.delta_r)

            total, report = combine(method, l_main, pretext=l_pretext,
                                    entropy=l_entropy, adapt=l_adapt,
                                    lambda_p=config.lambda_p,
                                    lambda_ent=config.lambda_ent,
                                    lambda_adapt=config.lambda_adapt)
            if not torch.isfinite(total.detach()).item():
                src_ids = [s.id for s in batch_s]
                tgt_ids = [s.id for s in batch_t] if batch_t else []
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} iteration {it}; "
                    f"source batch ids {src_ids}; target batch ids {tgt_ids}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            sums["loss_main"] += report.main
            sums["loss_pretext"] += report.pretext
            sums["loss_entropy"] += report.entropy
            sums["loss_adapt"] += report.adapt
            sums["loss_total"] += report.total
            steps += 1

        row = {"epoch": epoch}
        row.update({k: v / max(steps, 1) for k, v in sums.items()})
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            last_acc["acc_source"] = evaluate(bundle, source_eval).accuracy
            last_acc["feat_norm_source"] = feature_norms(bundle, source_eval)
            eval_rng = np.random.default_rng([config.seed, epoch, 101])
            last_acc["pretext_acc_source"] = evaluate_pretext(
                bundle, source_eval, eval_rng, task=task)
            if target_eval:
                if target_eval_labeled:
                    last_acc["acc_target"] = evaluate(bundle, target_eval).accuracy
                last_acc["feat_norm_target"] = feature_norms(bundle, target_eval)
                eval_rng = np.random.default_rng([config.seed, epoch, 102])
                last_acc["pretext_acc_target"] = evaluate_pretext(
                    bundle, target_eval, eval_rng, task=task)
        row.update(last_acc)
        rows.append(row)

    metrics = RunMetrics(config=config, rows=rows,
                         wall_clock_s=time.perf_counter() - started)
    return bundle, metrics


def checkpoint_save(path: str, bundle: ModelBundle, config: TrainConfig,
                    epoch: int) -> None:
    """Write the four parameter groups plus config and epoch to one file.

    The archive embeds the file's basename, so byte-level comparisons between
    runs must save under the same basename (directories may differ).
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "epoch": int(epoch),
        "num_classes": bundle.num_classes,
        "input_size": bundle.input_size,
        "config": config.to_dict(),
        "state": {
            "E_color": bundle.E_color.state_dict(),
            "E_depth": bundle.E_depth.state_dict(),
            "M": bundle.M.state_dict(),
            "P": bundle.P.state_dict(),
        },
    }
    torch.save(payload, path)


_STRUCTURAL_FIELDS = ("pretext_head", "dropout")


def checkpoint_load(path: str, expected_config: TrainConfig | None = None) -> tuple:
    """Load (bundle, config, epoch) from a checkpoint file.

    When expected_config is given, structural fields (backbone, pretext head,
    dropout) must match; mismatches are configuration errors, not silent
    partial loads.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    except Exception as exc:
        raise DataError(f"corrupt or unreadable checkpoint {path}: {exc}")
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    config = TrainConfig.from_dict(payload["config"])
    if expected_config is not None:
        mismatches = [name for name in _STRUCTURAL_FIELDS
                      if getattr(config, name) != getattr(expected_config, name)]
        if config.backbone.to_dict() != expected_config.backbone.to_dict():
            mismatches.append("backbone")
        if mismatches:
            raise ConfigError(
                f"checkpoint is structurally incompatible with the requested "
                f"config (fields: {', '.join(sorted(mismatches))})")
    state = payload["state"]
    expected_groups = {"E_color", "E_depth", "M", "P"}
    if set(state.keys()) != expected_groups:
        raise ConfigError(
            f"checkpoint parameter groups {sorted(state.keys())} do not match "
            f"{sorted(expected_groups)}")
    bundle = build_bundle(payload["num_classes"], backbone=config.backbone,
                          input_size=payload["input_size"],
                          pretext_head=config.pretext_head, dropout=config.dropout)
    for group in ("E_color", "E_depth", "M", "P"):
        try:
            getattr(bundle, group).load_state_dict(state[group])
        except RuntimeError as exc:
            raise ConfigError(f"parameter key mismatch in group {group}: {exc}")
    return bundle, config, int(payload["epoch"])
