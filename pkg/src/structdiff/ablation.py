"""Single-axis ablation sweeps over the full pipeline.

Each cell re-runs train/sample/eval from scratch at a quarter of the base
step budget; a failed cell becomes an error row, never a crashed sweep.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import Config, ConfigError
from .figures import ablation_figure
from .pipeline import run_dataset, run_eval, run_pretrain, run_sample, run_train
from .training import read_loss_log

AXIS_FIELDS = {
    "embed_dim": "embed_dim",
    "caption_len": "caption_len",
    "struct_weight": "lambda2",
}

DEFAULT_VALUES = {
    "embed_dim": (8, 16, 32, 64, 128),
    "caption_len": (3, 6, 10, 14),
    "struct_weight": (0.0, 0.25, 0.5, 1.0, 2.0),
}

CSV_HEADER = "axis_value,clip_score,fid,ssim,final_l_total,status"


def apply_axis(base: Config, axis: str, value) -> Config:
    if axis not in AXIS_FIELDS:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXIS_FIELDS)}")
    return dataclasses.replace(base, **{AXIS_FIELDS[axis]: value}).validate()


@dataclass(frozen=True)
class AblationSpec:
    axis: str
    values: tuple
    base: Config
    seed: int = 0

    def __post_init__(self):
        if len(self.values) < 2:
            raise ConfigError(f"ablation needs at least 2 values, got {list(self.values)}")
        if len(set(self.values)) != len(self.values):
            raise ConfigError(f"ablation values must be distinct, got {list(self.values)}")
        for v in self.values:
            apply_axis(self.base, self.axis, v)  # raises ConfigError on a bad value

    def cell_config(self, value) -> Config:
        cfg = apply_axis(self.base, self.axis, value)
        return dataclasses.replace(
            cfg, seed=self.seed, steps=max(1, self.base.steps // 4)).validate()


def final_l_total(log_path) -> float:
    """Trailing-window mean of l_total: the last 10% of logged steps (>= 1 row)."""
    log = read_loss_log(log_path)
    series = log["l_total"]
    window = max(1, len(series) // 10)
    return float(np.mean(series[-window:]))


def _run_cell(spec: AblationSpec, value, cell_dir, data_dir, semantic_path) -> dict:
    cfg = spec.cell_config(value)
    if spec.axis == "caption_len":
        # captions change but scene seeds do not, so images/priors are shared
        data_dir = os.path.join(cell_dir, "data")
        run_dataset(cfg, data_dir, overwrite=True)
    train_dir = os.path.join(cell_dir, "train")
    ckpt = run_train(cfg, data_dir, semantic_path, train_dir)
    sample_dir = os.path.join(cell_dir, "samples")
    run_sample(cfg, data_dir, ckpt, sample_dir)
    result = run_eval(cfg, data_dir, ckpt, sample_dir, os.path.join(cell_dir, "eval"))
    return {
        "axis_value": value,
        "clip_score": result.report.clip_score,
        "fid": result.report.fid,
        "ssim": result.report.ssim,
        "final_l_total": final_l_total(os.path.join(train_dir, "loss_log.csv")),
        "status": "ok",
    }


def run_ablation(spec: AblationSpec, out_dir) -> list[dict]:
    """Sweep the axis in request order; writes ablation.csv and a figure.

    Shared corpus and frozen semantic encoder live at the sweep root; each
    cell gets its own train/sample/eval directories underneath cells/.
    """
    out_dir = os.fspath(out_dir)
    data_dir = os.path.join(out_dir, "data")
    base = dataclasses.replace(spec.base, seed=spec.seed).validate()
    run_dataset(base, data_dir, overwrite=True)
    semantic_path, _ = run_pretrain(base, data_dir, os.path.join(out_dir, "semantic.ckpt"))
    rows = []
    for value in spec.values:
        cell_dir = os.path.join(out_dir, "cells", f"{spec.axis}_{value}")
        try:
            rows.append(_run_cell(spec, value, cell_dir, data_dir, semantic_path))
        except Exception as exc:  # error rows keep the sweep alive
            rows.append({
                "axis_value": value,
                "clip_score": math.nan,
                "fid": math.nan,
                "ssim": math.nan,
                "final_l_total": math.nan,
                "status": f"error: {exc}",
            })
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in rows:
            status = str(r["status"]).replace(",", ";").replace("\n", " ")
            f.write(f"{r['axis_value']},{r['clip_score']!r},{r['fid']!r},"
                    f"{r['ssim']!r},{r['final_l_total']!r},{status}\n")
    ablation_figure(rows, spec.axis, os.path.join(out_dir, "ablation.png"))
    return rows
