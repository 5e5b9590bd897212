"""Train and evaluate several model variants over several seeds."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import DEFAULT_TOLERANCE, default_thresholds, evaluate
from .loss import LossConfig
from .model import build_model, variant_by_name
from .postprocess import postprocess
from .synth import stack_images
from .training import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class AblationRun:
    variant: str
    seed: int
    opr_ods: float
    epr_ods: float
    opr_ap: float
    seconds: float


@dataclass
class AblationResult:
    runs: list[AblationRun] = field(default_factory=list)

    def mean(self, variant: str, metric: str = "opr_ods") -> float:
        vals = [getattr(r, metric) for r in self.runs if r.variant == variant]
        return float(np.mean(vals)) if vals else float("nan")

    def variants(self) -> list[str]:
        seen = []
        for r in self.runs:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def margins(self, reference: str = "default", metric: str = "opr_ods") -> dict[str, float]:
        """Mean of ``reference`` minus the mean of each other variant."""
        ref = self.mean(reference, metric)
        return {v: ref - self.mean(v, metric) for v in self.variants() if v != reference}

    def to_dict(self) -> dict:
        return {
            "runs": [r.__dict__ for r in self.runs],
            "mean_opr_ods": {v: self.mean(v) for v in self.variants()},
            "mean_epr_ods": {v: self.mean(v, "epr_ods") for v in self.variants()},
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        body = self.to_dict()
        if "default" in self.variants():
            body["margins_opr_ods"] = self.margins()
        (out / "ablation.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        with open(out / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "opr_ods", "epr_ods", "opr_ap", "seconds"])
            for r in self.runs:
                w.writerow([r.variant, r.seed, f"{r.opr_ods:.6f}", f"{r.epr_ods:.6f}", f"{r.opr_ap:.6f}", f"{r.seconds:.1f}"])


def run_ablation(
    train_samples,
    test_samples,
    variants=("default", "no_mcl", "plain_head"),
    seeds=(0, 1, 2),
    train_cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    tol: float = DEFAULT_TOLERANCE,
    n_thresholds: int = 99,
    out_dir=None,
) -> AblationResult:
    """Every (variant, seed) pair is trained from the same seed (same
    initialisation stream and batch order) and scored on ``test_samples``."""
    result = AblationResult()
    images = stack_images(test_samples)
    thresholds = default_thresholds(n_thresholds)
    for seed in seeds:
        for name in variants:
            t0 = time.perf_counter()
            model = build_model(variant_by_name(name), seed=seed)
            cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": seed})
            train(model, train_samples, cfg, loss_cfg)
            edge, ori = model.predict(images)
            reports = evaluate([postprocess(e, o) for e, o in zip(edge, ori)], test_samples, thresholds, tol)
            run = AblationRun(name, int(seed), reports["OPR"].ods, reports["EPR"].ods, reports["OPR"].ap, time.perf_counter() - t0)
            log.info("variant %s seed %d: OPR ODS %.4f EPR ODS %.4f (%.0f s)", name, seed, run.opr_ods, run.epr_ods, run.seconds)
            result.runs.append(run)
            if out_dir is not None:
                result.write(out_dir)
    return result
