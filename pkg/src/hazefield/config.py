"""Run configuration: one JSON document covering training, losses, schedule,
dataset path and output directory. Unknown keys are rejected; every field has
a default so a missing section just means defaults.
"""

from dataclasses import dataclass
from typing import Optional

from .losses import LossWeights
from .optim import DEFAULT_MILESTONES, LrSchedule
from .trainer import TrainConfig

_TRAIN_KEYS = {
    "total_iterations", "n_samples", "stride", "views_per_step",
    "checkpoint_every", "log_every", "grid_resolution", "grid_bbox",
    "asm_enabled", "rec_kind", "cons_scope", "beta_init", "a_init",
    "density_init", "color_init", "grad_clip",
}
_LOSS_KEYS = {"lambda_smrc", "lambda1", "lambda2", "lambda3", "pool_size",
              "tv_eps", "cd_hinge"}
_SCHEDULE_KEYS = {"lr_grid", "lr_atmo", "milestones", "decay"}
_TOP_KEYS = {"dataset", "out_dir", "seed", "train", "losses", "schedule"}


@dataclass
class RunConfig:
    dataset: Optional[str]
    out_dir: Optional[str]
    seed: int
    train: TrainConfig

    def to_dict(self) -> dict:
        t = self.train
        return {
            "dataset": self.dataset,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "train": {
                "total_iterations": t.total_iterations,
                "n_samples": t.n_samples,
                "stride": t.stride,
                "views_per_step": t.views_per_step,
                "checkpoint_every": t.checkpoint_every,
                "log_every": t.log_every,
                "grid_resolution": list(t.grid_resolution),
                "grid_bbox": [list(t.grid_bbox[0]), list(t.grid_bbox[1])],
                "asm_enabled": t.asm_enabled,
                "rec_kind": t.rec_kind,
                "cons_scope": t.cons_scope,
                "beta_init": t.beta_init,
                "a_init": t.a_init,
                "density_init": t.density_init,
                "color_init": t.color_init,
                "grad_clip": t.grad_clip,
            },
            "losses": {
                "lambda_smrc": t.weights.lambda_smrc,
                "lambda1": t.weights.lambda1,
                "lambda2": t.weights.lambda2,
                "lambda3": t.weights.lambda3,
                "pool_size": t.weights.pool_size,
                "tv_eps": t.weights.tv_eps,
                "cd_hinge": t.weights.cd_hinge,
            },
            "schedule": {
                "lr_grid": t.schedule.lr_grid,
                "lr_atmo": t.schedule.lr_atmo,
                "milestones": list(t.schedule.milestones),
                "decay": t.schedule.decay,
            },
        }


def default_run_config() -> RunConfig:
    return RunConfig(dataset=None, out_dir=None, seed=0, train=TrainConfig())


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown config keys in {where}: {sorted(unknown)}")


def parse_run_config(doc: dict) -> RunConfig:
    """Build a RunConfig from a JSON document, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "top level")
    tsec = doc.get("train", {})
    lsec = doc.get("losses", {})
    ssec = doc.get("schedule", {})
    _check_keys(tsec, _TRAIN_KEYS, "train")
    _check_keys(lsec, _LOSS_KEYS, "losses")
    _check_keys(ssec, _SCHEDULE_KEYS, "schedule")

    weights = LossWeights(
        lambda_smrc=float(lsec.get("lambda_smrc", 0.1)),
        lambda1=float(lsec.get("lambda1", 0.1)),
        lambda2=float(lsec.get("lambda2", 0.10)),
        lambda3=float(lsec.get("lambda3", 0.03)),
        pool_size=int(lsec.get("pool_size", 4)),
        tv_eps=float(lsec.get("tv_eps", 1e-4)),
        cd_hinge=bool(lsec.get("cd_hinge", False)),
    )
    schedule = LrSchedule(
        lr_grid=float(ssec.get("lr_grid", 1e-2)),
        lr_atmo=float(ssec.get("lr_atmo", 3e-3)),
        milestones=tuple(float(f) for f in
                         ssec.get("milestones", DEFAULT_MILESTONES)),
        decay=float(ssec.get("decay", 0.33)),
    )
    seed = int(doc.get("seed", 0))
    bbox = tsec.get("grid_bbox", [[-1.5, -1.5, -1.5], [1.5, 1.5, 1.5]])
    train = TrainConfig(
        total_iterations=int(tsec.get("total_iterations", 3000)),
        n_samples=int(tsec.get("n_samples", 128)),
        stride=int(tsec.get("stride", 4)),
        views_per_step=int(tsec.get("views_per_step", 4)),
        checkpoint_every=int(tsec.get("checkpoint_every", 1000)),
        log_every=int(tsec.get("log_every", 100)),
        grid_resolution=tuple(int(v) for v in
                              tsec.get("grid_resolution", [64, 64, 64])),
        grid_bbox=(tuple(float(v) for v in bbox[0]),
                   tuple(float(v) for v in bbox[1])),
        seed=seed,
        asm_enabled=bool(tsec.get("asm_enabled", True)),
        rec_kind=str(tsec.get("rec_kind", "smrc")),
        cons_scope=str(tsec.get("cons_scope", "batch")),
        beta_init=float(tsec.get("beta_init", 0.05)),
        a_init=float(tsec.get("a_init", 0.75)),
        density_init=float(tsec.get("density_init", -2.0)),
        color_init=float(tsec.get("color_init", 0.0)),
        grad_clip=float(tsec.get("grad_clip", 0.0)),
        weights=weights,
        schedule=schedule,
    )
    train.validate()
    return RunConfig(dataset=doc.get("dataset"), out_dir=doc.get("out_dir"),
                     seed=seed, train=train)
