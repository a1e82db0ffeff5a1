"""Training loop with the stepwise learning-rate schedule, the two-stage
sequential grid search, and latent-space diagnostics."""

from __future__ import annotations

import copy
import csv
import itertools
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .dataset import AirfoilDataset
from .errors import DivergedLoss
from .vae import (
    AirfoilGenerator,
    BranchConfig,
    Checkpoint,
    LatentBox,
    compute_loss,
    update_latent_box,
)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "recon", "kld", "phys_train", "phys_random", "total", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25000
    initial_lr: float = 1e-2
    lr_decay: float = 0.7
    lr_period: int = 2500
    beta: float = 2.5e-8
    lam: float = 1e-5
    seed: int = 0
    full_batch: bool = True
    n_resample: int = 512          # 0 disables latent-sampling regularization
    camber_cfg: BranchConfig = field(default_factory=BranchConfig)
    thickness_cfg: BranchConfig = field(default_factory=BranchConfig)

    def learning_rate(self, epoch: int) -> float:
        return self.initial_lr * self.lr_decay ** (epoch // self.lr_period)


@dataclass
class DiagnosticsReport:
    history: np.ndarray            # (epochs, len(HISTORY_COLUMNS))
    n_active_latents: int
    active_scores: np.ndarray
    pearson: np.ndarray
    mean_correlation: float

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            writer.writerows(self.history.tolist())


def _training_arrays(dataset: AirfoilDataset):
    idx = dataset.train_idx
    return dataset.thickness[idx], dataset.camber[idx]


def train(dataset: AirfoilDataset, config: TrainConfig,
          with_diagnostics: bool = True) -> tuple[Checkpoint, DiagnosticsReport]:
    """Full-batch Adam with stepwise decay; all randomness from config.seed.

    The latent box is refreshed from the training latents every epoch before
    the resampling term.  A non-finite loss triggers one lr-halving retry
    from the last good state; a second divergence aborts with DivergedLoss
    carrying that state.
    """
    t_train, c_train = _training_arrays(dataset)
    model = AirfoilGenerator(
        camber_cfg=config.camber_cfg,
        thickness_cfg=config.thickness_cfg,
        x_grid=dataset.x,
        normalizer=dataset.normalizer,
        init_seed=config.seed,
    )
    generator = torch.Generator().manual_seed(config.seed + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.initial_lr)

    history = []
    last_good = copy.deepcopy(model.state_dict())
    last_box = None
    lr_scale = 1.0
    halved = False

    epoch = 0
    while epoch < config.epochs:
        lr = config.learning_rate(epoch) * lr_scale
        for group in optimizer.param_groups:
            group["lr"] = lr

        means = model.encode_means(t_train, c_train)
        box = update_latent_box(means, min_samples=2)

        optimizer.zero_grad()
        total, breakdown = compute_loss(
            model, t_train, c_train,
            beta=config.beta, lam=config.lam,
            latent_box=box, generator=generator,
            n_resample=config.n_resample,
        )
        if not np.isfinite(breakdown.total):
            if not halved:
                log.warning("loss diverged at epoch %d; halving lr and retrying", epoch)
                model.load_state_dict(last_good)
                lr_scale = 0.5
                halved = True
                continue
            ckpt = _finalize(model, last_good, last_box, t_train, c_train, config, history)
            err = DivergedLoss(f"training loss became non-finite at epoch {epoch}")
            err.checkpoint = ckpt
            raise err
        total.backward()
        optimizer.step()

        history.append([epoch, breakdown.recon_mse, breakdown.kld,
                        breakdown.mse_phys_train, breakdown.mse_phys_random,
                        breakdown.total, lr])
        last_good = copy.deepcopy(model.state_dict())
        last_box = box
        epoch += 1

    ckpt = _finalize(model, last_good, last_box, t_train, c_train, config, history)
    if with_diagnostics:
        report = diagnostics(ckpt, dataset, history=np.array(history))
    else:
        report = DiagnosticsReport(
            history=np.array(history), n_active_latents=-1,
            active_scores=np.array([]), pearson=np.array([[]]),
            mean_correlation=float("nan"))
    return ckpt, report


def _finalize(model, state, box, t_train, c_train, config, history) -> Checkpoint:
    model.load_state_dict(state)
    means = model.encode_means(t_train, c_train)
    if box is None:
        box = update_latent_box(means, min_samples=2)
    meta = {
        "epochs_run": len(history),
        "seed": config.seed,
        "beta": config.beta,
        "lam": config.lam,
        "n_resample": config.n_resample,
        "final_loss": history[-1][5] if history else None,
    }
    return Checkpoint(model=model, latent_box=box,
                      latent_center=means.mean(axis=0), metadata=meta)


def diagnostics(ckpt: Checkpoint, dataset: AirfoilDataset,
                history: np.ndarray | None = None) -> DiagnosticsReport:
    count, scores = count_active_latents(ckpt)
    pearson, cbar, _ = correlation_diagnostics(ckpt, dataset)
    return DiagnosticsReport(
        history=history if history is not None else np.empty((0, len(HISTORY_COLUMNS))),
        n_active_latents=count,
        active_scores=scores,
        pearson=pearson,
        mean_correlation=cbar,
    )


# ---------------------------------------------------------------------------
# Latent diagnostics
# ---------------------------------------------------------------------------

def count_active_latents(ckpt: Checkpoint, threshold: float = 1e-5,
                         n_steps: int = 21) -> tuple[int, np.ndarray]:
    """Sweep one latent at a time across its box; a dimension is active when
    the mean (over grid points) std (over the sweep) of the output surface
    heights exceeds the threshold.  Non-swept dims sit at the training mean."""
    model = ckpt.model
    d = model.n_latent
    scores = np.zeros(d)
    for dim in range(d):
        z = np.tile(ckpt.latent_center, (n_steps, 1))
        z[:, dim] = ckpt.latent_box.sweep(dim, n_steps)
        t, c = model.decode_numpy(z)
        surfaces = np.concatenate([c + t / 2.0, c - t / 2.0], axis=1)
        scores[dim] = float(np.mean(np.std(surfaces, axis=0)))
    return int(np.sum(scores > threshold)), scores


def correlation_diagnostics(ckpt: Checkpoint, dataset: AirfoilDataset):
    """Pearson matrix of the free-latent means over the training set and the
    mean absolute off-diagonal coefficient."""
    model = ckpt.model
    t_train, c_train = _training_arrays(dataset)
    means = model.encode_means(t_train, c_train)
    free_dims = np.setdiff1d(np.arange(model.n_latent), model.physical_indices())
    free = means[:, free_dims]
    stds = free.std(axis=0)
    keep = stds > 1e-12
    if not np.all(keep):
        warnings.warn(
            f"excluding zero-variance free latent dims {free_dims[~keep].tolist()}")
    free = free[:, keep]
    if free.shape[1] < 2:
        return np.ones((free.shape[1], free.shape[1])), 0.0, free_dims[keep]
    pearson = np.corrcoef(free, rowvar=False)
    return pearson, mean_abs_correlation(pearson), free_dims[keep]


def mean_abs_correlation(pearson: np.ndarray) -> float:
    """Mean |c_ij| over the strict lower triangle."""
    n = pearson.shape[0]
    idx = np.tril_indices(n, k=-1)
    return float(np.mean(np.abs(pearson[idx])))


# ---------------------------------------------------------------------------
# Sequential grid search
# ---------------------------------------------------------------------------

STAGE1_GRID = {
    "n_filter": (32, 64, 128),
    "n_kernel": (3, 7),
    "n_latent": (6, 12),
    "activation": ("gelu", "relu", "leakyrelu"),
}

BETA_GRID = tuple(np.logspace(-9, -7, 11))


@dataclass
class GridCell:
    params: dict
    final_loss: float | None
    error: str | None = None


@dataclass
class GridSearchResult:
    stage1: list
    stage2: list
    best_params: dict
    best_beta: float


def _branch_configs(base: TrainConfig, params: dict):
    per_branch = params["n_latent"] // 2
    kw = dict(
        n_filter=params["n_filter"],
        n_kernel=params["n_kernel"],
        n_latent_total=per_branch,
        activation=params["activation"],
    )
    return (replace(base.camber_cfg, **kw), replace(base.thickness_cfg, **kw))


def _run_cell(dataset, config) -> GridCell:
    try:
        ckpt, _ = train(dataset, config, with_diagnostics=False)
        return GridCell(params={}, final_loss=ckpt.metadata["final_loss"])
    except DivergedLoss as exc:
        return GridCell(params={}, final_loss=None, error=str(exc))


def _ranked(cells: list) -> list:
    return sorted(cells, key=lambda c: (c.final_loss is None,
                                        c.final_loss if c.final_loss is not None else 0.0))


def grid_search(dataset: AirfoilDataset, stage1_grid: dict | None = None,
                beta_grid=None, budget_epochs: int = 5000,
                base: TrainConfig | None = None) -> GridSearchResult:
    """Two sequential stages: architecture sweep at beta = 0, then a beta
    sweep on the stage-1 winner.  Diverged cells are recorded, not fatal."""
    grid = dict(STAGE1_GRID if stage1_grid is None else stage1_grid)
    betas = BETA_GRID if beta_grid is None else tuple(beta_grid)
    base = base or TrainConfig()

    stage1 = []
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, combo))
        cam, thk = _branch_configs(base, params)
        config = replace(base, beta=0.0, epochs=budget_epochs,
                         camber_cfg=cam, thickness_cfg=thk)
        cell = _run_cell(dataset, config)
        cell.params = params
        log.info("stage1 %s -> %s", params, cell.final_loss or cell.error)
        stage1.append(cell)
    stage1 = _ranked(stage1)
    if stage1[0].final_loss is None:
        return GridSearchResult(stage1=stage1, stage2=[], best_params={}, best_beta=float("nan"))
    best_params = stage1[0].params

    stage2 = []
    cam, thk = _branch_configs(base, best_params)
    for beta in betas:
        config = replace(base, beta=float(beta), epochs=budget_epochs,
                         camber_cfg=cam, thickness_cfg=thk)
        cell = _run_cell(dataset, config)
        cell.params = {**best_params, "beta": float(beta)}
        log.info("stage2 beta=%.3e -> %s", beta, cell.final_loss or cell.error)
        stage2.append(cell)
    stage2 = _ranked(stage2)
    best_beta = stage2[0].params["beta"] if stage2 and stage2[0].final_loss is not None else float("nan")
    return GridSearchResult(stage1=stage1, stage2=stage2,
                            best_params=best_params, best_beta=best_beta)
