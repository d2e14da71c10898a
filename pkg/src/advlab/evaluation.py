"""Epsilon sweeps, transfer experiments, and their CSV/SVG reports.

Accuracy here comes in two flavours:

* *relative*: the adversarial image's top-k contains the model's own clean
  top-1 prediction (what the sweep plots show);
* *ground truth*: the adversarial image's top-k contains the true label.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .attacks import (ALL_METHODS, DEFAULT_ALPHA, DEFAULT_ITERATIONS, AttackConfig,
                      AttackMethod, RandomTarget, attack_batch, pick_random_target)
from .datasets import Dataset, sample_subset
from .network import Network, dumps_checkpoint, probs_batch
from .tensor_core import DTYPE, box_clamp

DEFAULT_EPS_GRID = (0.0, 0.01, 0.02, 0.05, 0.1)
DEFAULT_SUBSET_SIZE = 20


def _topk_hits(probs: np.ndarray, classes: np.ndarray, k: int) -> np.ndarray:
    """Whether ``classes[i]`` is among the top ``k`` of ``probs[i]`` (ties to lower index)."""
    if not 1 <= k <= probs.shape[1]:
        raise ValueError(f"k must be in [1, {probs.shape[1]}]")
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return np.any(order == np.asarray(classes)[:, None], axis=1)


def relative_topk_accuracy(net: Network, clean_images, adv_images, k: int) -> float:
    """Fraction of pairs whose clean top-1 class stays in the adversarial top-k."""
    clean_images = np.asarray(clean_images, dtype=DTYPE)
    adv_images = np.asarray(adv_images, dtype=DTYPE)
    if len(clean_images) != len(adv_images):
        raise ValueError(f"{len(clean_images)} clean images but {len(adv_images)} "
                         "adversarial images")
    if len(clean_images) == 0:
        raise ValueError("need at least one image pair")
    k = min(k, net.class_count)
    clean_top = np.argmax(probs_batch(net, clean_images), axis=1)
    return float(np.mean(_topk_hits(probs_batch(net, adv_images), clean_top, k)))


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepConfig:
    methods: Sequence[AttackMethod] = ALL_METHODS
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID
    subset_size: int = DEFAULT_SUBSET_SIZE
    alpha: float = DEFAULT_ALPHA
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        self.methods = tuple(AttackMethod(m) for m in self.methods)
        self.eps_grid = tuple(float(e) for e in self.eps_grid)
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.eps_grid:
            raise ValueError("eps_grid must not be empty")
        if any(e < 0 for e in self.eps_grid):
            raise ValueError("epsilons must be non-negative")
        if any(b <= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ValueError("eps_grid must be strictly ascending")
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")


@dataclass
class SweepRow:
    method: str
    epsilon: float
    n_samples: int
    top1_rel: float
    top5_rel: float
    top1_gt: float
    top5_gt: float
    mean_linf: float
    mean_iterations: float
    seed: int


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)
    row_type = SweepRow


@dataclass
class TransferRow:
    source_model_id: str
    target_model_id: str
    method: str
    epsilon: float
    n_samples: int
    transfer_top1_rel: float
    noise_control_top1_rel: float
    seed: int


@dataclass
class TransferReport:
    rows: list[TransferRow] = field(default_factory=list)
    row_type = TransferRow


def _method_iterations(method: AttackMethod, iterations: int) -> int:
    return 1 if method is AttackMethod.FAST_GRADIENT_SIGN else iterations


def run_sweep(net: Network, data: Dataset, cfg: SweepConfig | None = None) -> SweepReport:
    """Attack one seeded subset with every (method, epsilon) pair.

    Rows come out in (method, epsilon) order. Targeted cells draw a fresh
    random wrong class for each image at each epsilon from the sweep seed.
    """
    cfg = cfg or SweepConfig()
    seeds = np.random.SeedSequence(cfg.seed)
    subset_seed, target_seed = (int(s.generate_state(1)[0]) for s in seeds.spawn(2))
    subset = sample_subset(data, cfg.subset_size, subset_seed)
    target_rng = np.random.default_rng(target_seed)
    x, y = subset.images, subset.labels
    n = len(subset)
    clean_top = np.argmax(probs_batch(net, x), axis=1)
    k5 = min(5, net.class_count)
    report = SweepReport()
    for method in cfg.methods:
        for eps in cfg.eps_grid:
            targeted = method is AttackMethod.ITERATIVE_TARGETED
            attack = AttackConfig(method, eps, cfg.alpha, cfg.iterations,
                                  target=RandomTarget(target_seed) if targeted else None)
            targets = None
            if targeted:
                targets = np.array([pick_random_target(target_rng, net.class_count, int(t))
                                    for t in y])
            adv = attack_batch(net, x, y, attack, targets)
            p = probs_batch(net, adv)
            linf = np.abs(adv - x).reshape(n, -1).max(axis=1)
            report.rows.append(SweepRow(
                method=method.value,
                epsilon=eps,
                n_samples=n,
                top1_rel=float(np.mean(_topk_hits(p, clean_top, 1))),
                top5_rel=float(np.mean(_topk_hits(p, clean_top, k5))),
                top1_gt=float(np.mean(_topk_hits(p, y, 1))),
                top5_gt=float(np.mean(_topk_hits(p, y, k5))),
                mean_linf=float(np.mean(linf)),
                mean_iterations=float(_method_iterations(method, cfg.iterations)),
                seed=cfg.seed,
            ))
    return report


def model_id(net: Network) -> str:
    """Short content hash of the network's checkpoint."""
    return hashlib.sha256(dumps_checkpoint(net).encode()).hexdigest()[:12]


def uniform_sign_noise(images: np.ndarray, epsilon: float, seed) -> np.ndarray:
    """Random +-epsilon per pixel, clipped to [0, 1]: the same L-inf budget as an attack."""
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=images.shape)
    return box_clamp(images + epsilon * signs, 0.0, 1.0)


def run_transfer(source: Network, target: Network, attack: AttackConfig, data: Dataset,
                 seed: int = 0, n: int = DEFAULT_SUBSET_SIZE) -> TransferReport:
    """Craft attacks on ``source`` and score them on ``target``.

    The report holds one row with the attack's relative top-1 accuracy on
    the target next to a control where random sign noise of the same
    epsilon replaces the attack.
    """
    if source.input_shape != target.input_shape:
        raise ValueError("source and target models take different input shapes")
    if source.class_count != target.class_count:
        raise ValueError("source and target models have different class counts")
    seeds = np.random.SeedSequence(seed)
    subset_seed, target_seed, noise_seed = (int(s.generate_state(1)[0])
                                            for s in seeds.spawn(3))
    subset = sample_subset(data, n, subset_seed)
    x, y = subset.images, subset.labels
    targets = None
    if attack.method is AttackMethod.ITERATIVE_TARGETED:
        rng = np.random.default_rng(target_seed)
        if isinstance(attack.target, int):
            targets = np.full(len(y), attack.target)
        else:
            targets = np.array([pick_random_target(rng, source.class_count, int(t)) for t in y])
    adv = attack_batch(source, x, y, attack, targets)
    noisy = uniform_sign_noise(x, attack.epsilon, noise_seed)
    row = TransferRow(
        source_model_id=model_id(source),
        target_model_id=model_id(target),
        method=attack.method.value,
        epsilon=attack.epsilon,
        n_samples=len(subset),
        transfer_top1_rel=relative_topk_accuracy(target, x, adv, 1),
        noise_control_top1_rel=relative_topk_accuracy(target, x, noisy, 1),
        seed=seed,
    )
    return TransferReport([row])


# ---------------------------------------------------------------------------
# CSV

def _format_field(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def report_csv_text(report) -> str:
    names = [f.name for f in dataclasses.fields(report.row_type)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in report.rows:
        writer.writerow([_format_field(getattr(row, name)) for name in names])
    return buf.getvalue()


def write_report_csv(report, destination) -> int:
    """Write ``report`` as CSV; returns the byte count."""
    data = report_csv_text(report).encode("utf-8")
    Path(destination).write_bytes(data)
    return len(data)


def parse_report_csv(text: str):
    """Inverse of `report_csv_text`; the report type is inferred from the header."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    for report_cls in (SweepReport, TransferReport):
        fields = dataclasses.fields(report_cls.row_type)
        if header == [f.name for f in fields]:
            break
    else:
        raise ValueError(f"unrecognised report header {header}")
    casts = {"float": float, "int": int, "str": str}
    rows = []
    for record in reader:
        rows.append(report_cls.row_type(*(casts[f.type](v) for f, v in zip(fields, record))))
    return report_cls(rows)


def read_report_csv(path):
    return parse_report_csv(Path(path).read_text())


# ---------------------------------------------------------------------------
# SVG

# Plot geometry. Data maps linearly: pixel_y = PLOT_BOTTOM - value * PLOT_HEIGHT.
SVG_WIDTH, SVG_HEIGHT = 640, 420
PLOT_LEFT, PLOT_RIGHT = 70, 470
PLOT_TOP, PLOT_BOTTOM = 40, 360
PLOT_WIDTH = PLOT_RIGHT - PLOT_LEFT
PLOT_HEIGHT = PLOT_BOTTOM - PLOT_TOP
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

METRICS = ("top1_rel", "top5_rel", "top1_gt", "top5_gt")


def x_range(report: SweepReport) -> tuple[float, float]:
    eps = [r.epsilon for r in report.rows]
    lo, hi = min(eps), max(eps)
    if hi == lo:
        hi = lo + 1.0
    return lo, hi


def data_to_px(eps: float, value: float, lo: float, hi: float) -> tuple[float, float]:
    px = PLOT_LEFT + (eps - lo) / (hi - lo) * PLOT_WIDTH
    py = PLOT_BOTTOM - value * PLOT_HEIGHT
    return px, py


def px_to_value(py: float) -> float:
    return (PLOT_BOTTOM - py) / PLOT_HEIGHT


def render_plot_svg(report: SweepReport, metric: str = "top1_rel") -> str:
    """Line chart of ``metric`` against epsilon, one polyline per method."""
    if not report.rows:
        raise ValueError("cannot plot an empty report")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    lo, hi = x_range(report)
    methods = list(dict.fromkeys(r.method for r in report.rows))
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f"<title>{escape(metric)} accuracy under attack</title>",
        f"<desc>x: epsilon {lo:g} to {hi:g} maps to {PLOT_LEFT} to {PLOT_RIGHT}; "
        f"y: value 0 to 1 maps to {PLOT_BOTTOM} to {PLOT_TOP}</desc>",
        '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
        f'<g stroke="black" stroke-width="1">'
        f'<line x1="{PLOT_LEFT}" y1="{PLOT_BOTTOM}" x2="{PLOT_RIGHT}" y2="{PLOT_BOTTOM}"/>'
        f'<line x1="{PLOT_LEFT}" y1="{PLOT_TOP}" x2="{PLOT_LEFT}" y2="{PLOT_BOTTOM}"/></g>',
    ]
    ticks = ['<g font-family="sans-serif" font-size="11" fill="black">']
    for i in range(6):
        v = i / 5
        _, py = data_to_px(lo, v, lo, hi)
        ticks.append(f'<line x1="{PLOT_LEFT - 5}" y1="{py:.2f}" x2="{PLOT_LEFT}" '
                     f'y2="{py:.2f}" stroke="black"/>')
        ticks.append(f'<text x="{PLOT_LEFT - 8}" y="{py + 4:.2f}" '
                     f'text-anchor="end">{v:.1f}</text>')
    for eps in sorted({r.epsilon for r in report.rows}):
        px, _ = data_to_px(eps, 0.0, lo, hi)
        ticks.append(f'<line x1="{px:.2f}" y1="{PLOT_BOTTOM}" x2="{px:.2f}" '
                     f'y2="{PLOT_BOTTOM + 5}" stroke="black"/>')
        ticks.append(f'<text x="{px:.2f}" y="{PLOT_BOTTOM + 18}" '
                     f'text-anchor="middle">{eps:g}</text>')
    ticks.append(f'<text x="{(PLOT_LEFT + PLOT_RIGHT) / 2:.1f}" y="{PLOT_BOTTOM + 38}" '
                 f'text-anchor="middle">epsilon</text>')
    ticks.append(f'<text x="18" y="{(PLOT_TOP + PLOT_BOTTOM) / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {(PLOT_TOP + PLOT_BOTTOM) / 2:.1f})">'
                 f'{escape(metric)}</text>')
    ticks.append("</g>")
    out.extend(ticks)
    legend = ['<g font-family="sans-serif" font-size="12">']
    for i, method in enumerate(methods):
        color = COLORS[i % len(COLORS)]
        rows = sorted((r for r in report.rows if r.method == method), key=lambda r: r.epsilon)
        pts = " ".join("{:.2f},{:.2f}".format(*data_to_px(r.epsilon, getattr(r, metric), lo, hi))
                       for r in rows)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                   f'data-method="{escape(method)}" points="{pts}"/>')
        ly = PLOT_TOP + 10 + 20 * i
        legend.append(f'<line x1="{PLOT_RIGHT + 15}" y1="{ly}" x2="{PLOT_RIGHT + 35}" '
                      f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        legend.append(f'<text x="{PLOT_RIGHT + 40}" y="{ly + 4}">{escape(method)}</text>')
    legend.append("</g>")
    out.extend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"
