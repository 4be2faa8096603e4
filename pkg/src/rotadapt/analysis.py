"""Post-hoc analysis: saliency maps, 2-D feature embeddings, run reports.

Saliency uses guided backpropagation: the gradient of the correct-class
rotation logit is taken w.r.t. both input images, with every rectified-linear
backward zeroing positions whose forward activation was <= 0 or whose
incoming gradient is negative. The embedding projects the classifier's
last-hidden-layer features to 2-D for a source-vs-target scatter.
"""

from __future__ import annotations

import base64
import copy
import html
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import SOURCE, TARGET, PairedSample
from .errors import ConfigError, DataError, NumericalError
from .models import ModelBundle
from .rotation import RELATIVE
from .training import METRICS_VERSION, _image_tensor, pretext_fused

REDUCE_MAX = "max"
REDUCE_L2 = "l2"


class _GuidedReLUFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x.clamp(min=0)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        keep = (x > 0) & (grad_output > 0)
        return grad_output * keep.to(grad_output.dtype)


class GuidedReLU(nn.Module):
    """ReLU whose backward drops negative incoming gradients as well."""

    def forward(self, x):
        return _GuidedReLUFn.apply(x)


def _swap_relus(module: nn.Module) -> None:
    for name, child in module.named_children():
        if isinstance(child, nn.ReLU):
            setattr(module, name, GuidedReLU())
        else:
            _swap_relus(child)


@dataclass
class SaliencyMap:
    """Per-modality nonnegative relevance for one rotation episode."""

    color: np.ndarray
    depth: np.ndarray
    sample_id: str
    true_label: int
    predicted_label: int

    def binary(self, percentile: float = 95.0) -> tuple:
        return (binarize_saliency(self.color, percentile),
                binarize_saliency(self.depth, percentile))


def _reduce(grad: torch.Tensor, reduction: str) -> np.ndarray:
    if reduction == REDUCE_MAX:
        out = grad.abs().max(dim=0).values
    elif reduction == REDUCE_L2:
        out = grad.pow(2).sum(dim=0).sqrt()
    else:
        raise ConfigError(f"unknown saliency reduction {reduction!r}")
    return out.detach().numpy().astype(np.float32)


def _saliency(bundle: ModelBundle, sample: PairedSample, pretext_label: int,
              task: str, reduction: str, guided: bool) -> SaliencyMap:
    if not 0 <= int(pretext_label) <= 3:
        raise ValueError(f"pretext label must be in [0,3], got {pretext_label}")
    for p in bundle.parameters():
        if not torch.isfinite(p).all():
            raise NumericalError("model has non-finite weights; cannot attribute")
    net = copy.deepcopy(bundle)
    if guided:
        _swap_relus(net)
    net.eval()
    color = _image_tensor([sample.color]).requires_grad_(True)
    depth = _image_tensor([sample.depth]).requires_grad_(True)
    fused = pretext_fused(net, color, depth, task)
    logits = net.P.logits(fused)
    predicted = int(logits[0].argmax())
    logits[0, int(pretext_label)].backward()
    color_rel = _reduce(color.grad[0], reduction)
    if depth.grad is None:
        depth_rel = np.zeros(sample.depth.shape[:2], dtype=np.float32)
    else:
        depth_rel = _reduce(depth.grad[0], reduction)
    return SaliencyMap(color=color_rel, depth=depth_rel, sample_id=sample.id,
                       true_label=int(pretext_label), predicted_label=predicted)


def guided_backprop(bundle: ModelBundle, sample: PairedSample, pretext_label: int,
                    task: str = RELATIVE, reduction: str = REDUCE_MAX) -> SaliencyMap:
    """Guided-backprop relevance of the given rotation label's logit.

    The sample's color/depth arrays are taken as already rotated; relevance
    is the per-pixel channel reduction of the modified input gradient.
    """
    return _saliency(bundle, sample, pretext_label, task, reduction, guided=True)


def input_gradient(bundle: ModelBundle, sample: PairedSample, pretext_label: int,
                   task: str = RELATIVE, reduction: str = REDUCE_MAX) -> SaliencyMap:
    """Plain (unguided) input-gradient relevance, for comparison."""
    return _saliency(bundle, sample, pretext_label, task, reduction, guided=False)


def binarize_saliency(relevance: np.ndarray, percentile: float) -> np.ndarray:
    """Top-(100-p)% mask: ceil((100-p)/100 * H*W) ones, ties by scan order."""
    if not 0.0 < percentile < 100.0:
        raise ConfigError(f"percentile must be in (0, 100), got {percentile}")
    if relevance.ndim != 2:
        raise ValueError(f"expected an H×W map, got shape {relevance.shape}")
    flat = relevance.reshape(-1)
    if float(flat.max()) == float(flat.min()):
        raise DataError("degenerate saliency: relevance map is constant")
    k = math.ceil((100.0 - percentile) / 100.0 * flat.size)
    order = np.argsort(-flat, kind="stable")
    binary = np.zeros(flat.size, dtype=np.uint8)
    binary[order[:k]] = 1
    return binary.reshape(relevance.shape)


@dataclass
class Embedding2D:
    points: np.ndarray  # (n, 2)
    domains: np.ndarray  # (n,) domain tag per point
    ids: list
    labels: list  # class label per point, None where unknown


def embed_features_2d(bundle: ModelBundle, source: list, target: list,
                      perplexity: float = 30.0, seed: int = 0,
                      iterations: int = 1000, batch_size: int = 64) -> Embedding2D:
    """Project last-hidden-layer classifier features of both domains to 2-D."""
    from sklearn.manifold import TSNE

    samples = list(source) + list(target)
    if len(samples) == 0:
        raise DataError("cannot embed an empty dataset")
    if perplexity >= len(samples):
        raise ConfigError(
            f"perplexity {perplexity} needs more than {len(samples)} samples")
    feats = []
    was_training = bundle.training
    bundle.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            color = _image_tensor([s.color for s in chunk])
            depth = _image_tensor([s.depth for s in chunk])
            hidden = bundle.main_hidden(bundle.extract_features(color, depth))
            feats.append(hidden.numpy())
    bundle.train(was_training)
    matrix = np.concatenate(feats, axis=0)
    kwargs = dict(n_components=2, perplexity=perplexity, init="pca",
                  random_state=seed, learning_rate="auto")
    try:
        tsne = TSNE(max_iter=iterations, **kwargs)
    except TypeError:
        tsne = TSNE(n_iter=iterations, **kwargs)
    points = tsne.fit_transform(matrix).astype(np.float64)
    domains = np.array([s.domain for s in samples])
    return Embedding2D(points=points, domains=domains,
                       ids=[s.id for s in samples],
                       labels=[s.label for s in samples])


def plot_embedding(embedding: Embedding2D, path: str, title: str = "feature embedding") -> None:
    """Scatter with source points in red and target points in blue."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    for domain, color in ((SOURCE, "red"), (TARGET, "blue")):
        mask = embedding.domains == domain
        if mask.any():
            ax.scatter(embedding.points[mask, 0], embedding.points[mask, 1],
                       s=8, c=color, label=domain, alpha=0.6, linewidths=0)
    ax.legend()
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_saliency_panel(sample: PairedSample, saliency: SaliencyMap, path: str,
                        percentile: float = 95.0) -> None:
    """Six-tile panel: inputs, relevance heatmaps, binarized maps."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bin_color, bin_depth = saliency.binary(percentile)
    fig, axes = plt.subplots(2, 3, figsize=(7.5, 5))
    tiles = [(sample.color, "color input", None),
             (saliency.color, "color relevance", "magma"),
             (bin_color, "color binary", "gray"),
             (sample.depth, "depth input", None),
             (saliency.depth, "depth relevance", "magma"),
             (bin_depth, "depth binary", "gray")]
    for ax, (img, name, cmap) in zip(axes.ravel(), tiles):
        ax.imshow(img, cmap=cmap)
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.suptitle(f"{saliency.sample_id}: rotation label {saliency.true_label}, "
                 f"predicted {saliency.predicted_label}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def read_metrics_csv(path: str) -> tuple:
    """Parse a metrics file into (config dict, column names, rows of strings)."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise DataError(f"metrics file not found: {path}")
    if not lines or lines[0] != f"# {METRICS_VERSION}":
        raise DataError(f"{path} is not a {METRICS_VERSION} metrics file")
    config = {}
    body = []
    for line in lines[1:]:
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif line and not line.startswith("#"):
            body.append(line)
    if not body:
        raise DataError(f"{path} has no header row")
    columns = body[0].split(",")
    rows = [dict(zip(columns, line.split(","))) for line in body[1:]]
    return config, columns, rows


def _plot_losses_png(columns: list, rows: list) -> bytes:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for col in columns:
        if not col.startswith("loss_"):
            continue
        values = [float(r[col]) if r[col] else float("nan") for r in rows]
        ax.plot(epochs, values, label=col)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110)
    plt.close(fig)
    return buf.getvalue()


def _img_tag(png_bytes: bytes, alt: str) -> str:
    encoded = base64.b64encode(png_bytes).decode("ascii")
    return f'<img alt="{html.escape(alt)}" src="data:image/png;base64,{encoded}"/>'


_MISSING = '<p class="missing">missing: {}</p>'


def emit_report(run_dir: str, out_name: str = "report.html") -> str:
    """Write a single-file HTML summary of a run directory.

    Sections: loss curves, accuracy table, saliency grid, embedding plot.
    Missing artifacts are listed and flagged in place; the report is still
    emitted.
    """
    missing = []
    sections = []

    metrics_path = os.path.join(run_dir, "metrics.csv")
    columns = rows = None
    try:
        config, columns, rows = read_metrics_csv(metrics_path)
    except DataError:
        missing.append("metrics.csv")

    if rows:
        sections.append("<h2>Loss curves</h2>" +
                        _img_tag(_plot_losses_png(columns, rows), "loss curves"))
        acc_cols = [c for c in columns if not c.startswith("loss_")]
        head = "".join(f"<th>{html.escape(c)}</th>" for c in acc_cols)
        body = []
        for r in rows:
            cells = "".join(f"<td>{html.escape(r[c])}</td>" for c in acc_cols)
            body.append(f"<tr>{cells}</tr>")
        sections.append("<h2>Accuracy</h2><table><thead><tr>" + head +
                        "</tr></thead><tbody>" + "".join(body) + "</tbody></table>")
    else:
        sections.append("<h2>Loss curves</h2>" + _MISSING.format("metrics.csv"))
        sections.append("<h2>Accuracy</h2>" + _MISSING.format("metrics.csv"))

    saliency_dir = os.path.join(run_dir, "saliency")
    tags = []
    if os.path.isdir(saliency_dir):
        for name in sorted(os.listdir(saliency_dir)):
            if name.endswith(".png"):
                with open(os.path.join(saliency_dir, name), "rb") as fh:
                    tags.append(_img_tag(fh.read(), name))
    if tags:
        sections.append("<h2>Saliency</h2>" + "".join(tags))
    else:
        missing.append("saliency/")
        sections.append("<h2>Saliency</h2>" + _MISSING.format("saliency images"))

    embed_path = os.path.join(run_dir, "embed", "embedding.png")
    if os.path.isfile(embed_path):
        with open(embed_path, "rb") as fh:
            sections.append("<h2>Embedding</h2>" + _img_tag(fh.read(), "embedding"))
    else:
        missing.append("embed/embedding.png")
        sections.append("<h2>Embedding</h2>" + _MISSING.format("embedding plot"))

    note = ""
    if missing:
        items = "".join(f"<li>{html.escape(m)}</li>" for m in missing)
        note = f"<p>Missing artifacts:</p><ul>{items}</ul>"
    doc = ("<!doctype html><html><head><meta charset='utf-8'>"
           "<title>run report</title><style>"
           "body{font-family:sans-serif;margin:2em}img{max-width:100%}"
           "table{border-collapse:collapse}td,th{border:1px solid #999;"
           "padding:2px 8px;font-size:13px}.missing{color:#a00}"
           "</style></head><body><h1>Run report</h1>" + note +
           "".join(sections) + "</body></html>")
    out_path = os.path.join(run_dir, out_name)
    with open(out_path, "w") as fh:
        fh.write(doc)
    return out_path
