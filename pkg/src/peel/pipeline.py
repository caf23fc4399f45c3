"""Layer-wise inversion of a whole network, deepest block first.

Starting from the last block's output, each block is inverted in turn and its
estimated input becomes the target for the block before it. The estimate of
the first block's input is then the stem's feature map, which is inverted by
regularized embedding inversion to recover the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockinv import PenaltyConfig, solve
from .errors import PeelError, ShapeError, ValidationError
from .forward import TapTrace
from .metrics import image_report
from .modelio import Conv, NetworkSpec, PlainBlock, ReLU
from .shallowinv import ShallowConfig, ShallowReport, invert_shallow
from .tensor import as_tensor


@dataclass
class PeelRun:
    """Everything one inversion produced. Block lists run from the last block to the first."""

    block_names: list
    block_estimates: list
    block_reports: list
    stem_features: np.ndarray
    image: np.ndarray
    shallow_report: ShallowReport | None = None
    metrics: dict = field(default_factory=dict)

    def report_dict(self, include_trace=False):
        return {
            "blocks": [r.to_dict(include_trace) for r in self.block_reports],
            "shallow": None if self.shallow_report is None else self.shallow_report.to_dict(include_trace),
            "metrics": dict(self.metrics),
        }


def block_seed(cfg: PenaltyConfig, index: int):
    """Independent generator for block ``index`` derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))


def _annotate(exc, index, name):
    exc.args = (f"block {index} ({name}): {exc}",) + tuple(exc.args[1:])
    exc.block_index = index
    return exc


def peel(
    yN,
    net: NetworkSpec,
    block_cfg: PenaltyConfig = PenaltyConfig(),
    shallow_cfg: ShallowConfig = ShallowConfig(),
    truth: TapTrace | None = None,
    callback=None,
) -> PeelRun:
    """Invert ``net`` from its final features ``yN``.

    ``truth`` is an optional forward trace of the real input; when given, each
    report carries its error against the true block input. ``callback`` is
    called as ``callback(index, report)`` after every block.
    """
    yN = as_tensor(yN, "final features")
    if not net.blocks:
        raise ValidationError("network has no blocks to invert")
    if tuple(yN.shape) != tuple(net.output_dims):
        raise ShapeError(f"features have shape {yN.shape}, network emits {net.output_dims}")
    y = yN
    names, estimates, reports = [], [], []
    for idx in reversed(range(len(net.blocks))):
        block = net.blocks[idx]
        x_true = None if truth is None else truth.block_input(idx)
        try:
            x, rep, _ = solve(y, block, block_cfg, rng=block_seed(block_cfg, idx), x_true=x_true)
        except PeelError as exc:
            raise _annotate(exc, idx, block.name) from None
        names.append(block.name or f"block{idx + 1}")
        estimates.append(x)
        reports.append(rep)
        if callback is not None:
            callback(idx, rep)
        y = x
    phi0 = y
    shallow = None
    if net.stem:
        x_img = None if truth is None else truth.input
        try:
            image, shallow = invert_shallow(phi0, net.stem, net.input_dims, shallow_cfg, x_true=x_img)
        except PeelError as exc:
            raise _annotate(exc, -1, "stem") from None
    else:
        image = phi0.copy()
    run = PeelRun(names, estimates, reports, phi0, image, shallow)
    if truth is not None:
        run.metrics = image_report(image, truth.input)
        run.metrics["max_block_error"] = max(r.relative_error for r in reports)
    return run


def invert_nonresidual(y, w: Conv, in_dims, cfg: PenaltyConfig = PenaltyConfig(), act=ReLU(), x_true=None, rng=None):
    """Invert ``y = act(W x)``; returns ``(x_hat, report)``.

    Only the positive part of the split enters the data term, so ``x`` is
    pinned down through the splitting penalty alone.
    """
    block = PlainBlock(w, tuple(in_dims), act)
    x, report, _ = solve(y, block, cfg, rng=rng, x_true=x_true)
    return x, report


# --------------------------------------------------------------------------
# multi-seed summaries


def error_table(runs, stage_rows=True):
    """Mean and standard deviation of per-block errors over several runs.

    Each run must have been produced with a ground-truth trace. With
    ``stage_rows`` the rows are the inputs of the second block of each stage
    (``layerK.1``), as in the usual per-stage layout, followed by every block
    and the image. Returns a list of ``(label, mean, std)``.
    """
    if not runs:
        raise ValidationError("error_table needs at least one run")
    names = runs[0].block_names
    errs = np.array([[r.relative_error for r in run.block_reports] for run in runs])
    if np.any(np.equal(errs, None)):
        raise ValidationError("runs were made without ground truth")
    errs = errs.astype(np.float64)
    rows = []
    if stage_rows:
        for j, name in enumerate(names):
            if name.startswith("layer") and name.endswith(".1"):
                rows.append((f"Layer {name[5:-2]}", float(errs[:, j].mean()), float(errs[:, j].std())))
    for j, name in enumerate(names):
        rows.append((name, float(errs[:, j].mean()), float(errs[:, j].std())))
    shallow = [run.shallow_report.relative_error for run in runs if run.shallow_report is not None]
    if len(shallow) == len(runs) and all(s is not None for s in shallow):
        rows.append(("Shallow Layer", float(np.mean(shallow)), float(np.std(shallow))))
    return rows


def format_table(rows, title="Relative (normalized) error, mean +- std"):
    width = max(len(r[0]) for r in rows)
    lines = [title, f"{'Layer':<{width}}  error"]
    for label, mean, std in rows:
        lines.append(f"{label:<{width}}  {mean:.2e} +- {std:.2e}")
    return "\n".join(lines)
