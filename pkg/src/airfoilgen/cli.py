"""Command-line entry point wiring the whole pipeline: preprocess, train,
gridsearch, generate, encode, fit, evaluate, optimize, export."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from .config import ConfigError, RunConfig, atomic_write_text, write_resolved_config
from .dataset import FilterConfig, build_dataset, load_dataset, save_dataset
from .errors import AirfoilGenError, SolverNotFound
from .evaluation import (
    AgParameterization,
    cmax_table,
    constrained_generate,
    cumulative_mse_curve,
    export_cdf_csv,
    export_cmax_csv,
    export_feasibility_csv,
    export_traversal_csv,
    feasibility_ratio,
    inverse_fit,
    latent_traversal,
)
from .ga import GaConfig
from .geometry import AirfoilSection, ThicknessCamber, decompose, recompose
from .optimize import (
    CONSTRAINED,
    UNCONSTRAINED,
    OptimizationProblem,
    export_history_csv,
    parallel_coordinates_export,
    repeated_trials,
)
from .training import TrainConfig, grid_search, train
from .uiuc import parse_coordinate_file, resample_to_section, to_selig_text
from .vae import BranchConfig, load_checkpoint, save_checkpoint
from .xfoil import XfoilCase, find_solver, xfoil_evaluate

log = logging.getLogger("airfoilgen")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3

OUTPUT_SUBDIRS = ("datasets", "checkpoints", "reports", "airfoils")


def _out_dirs(base) -> dict:
    base = Path(base)
    dirs = {name: base / name for name in OUTPUT_SUBDIRS}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _load_config(path) -> RunConfig:
    return RunConfig.from_file(path) if path else RunConfig()


def _branch_configs(cfg: RunConfig):
    m = cfg.model
    per_branch = m.get("n_latent", 12) // 2
    kw = dict(
        n_filter=m.get("n_filter", 32),
        n_kernel=m.get("n_kernel", 7),
        n_latent_total=per_branch,
        activation=m.get("activation", "gelu"),
    )
    if "conv_layers" in m:
        kw["conv_layers"] = m["conv_layers"]
    if "decoder_hidden" in m:
        kw["decoder_hidden"] = tuple(m["decoder_hidden"])
    return BranchConfig(**kw), BranchConfig(**kw)


def _train_config(cfg: RunConfig, overrides: dict) -> TrainConfig:
    cam, thk = _branch_configs(cfg)
    t = cfg.training
    kw = dict(
        epochs=t.get("epochs", 25000),
        initial_lr=t.get("initial_lr", 1e-2),
        lr_decay=t.get("lr_decay", 0.7),
        lr_period=t.get("lr_period", 2500),
        beta=t.get("beta", 2.5e-8),
        lam=t.get("lambda", 1e-5),
        n_resample=t.get("n_resample", 512),
        seed=cfg.module_seed("model"),
        camber_cfg=cam,
        thickness_cfg=thk,
    )
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


def _ga_config(cfg: RunConfig, **overrides) -> GaConfig:
    g = dict(cfg.ga)
    g.update({k: v for k, v in overrides.items() if v is not None})
    g.setdefault("seed", cfg.module_seed("ga"))
    return GaConfig(**g)


def _xfoil_case(cfg: RunConfig) -> XfoilCase:
    x = cfg.xfoil
    return XfoilCase(
        reynolds=x.get("reynolds", 1.8e6),
        mach=x.get("mach", 0.01),
        alpha_deg=x.get("alpha_deg", 0.0),
        n_panels=x.get("n_panels", 160),
        n_iter=x.get("n_iter", 200),
        timeout=x.get("timeout", 20.0),
    )


def _parameterization(name: str, n_dv: int, dataset=None, checkpoint=None):
    name = name.lower()
    if name == "ag":
        if checkpoint is None:
            raise AirfoilGenError("the generator needs a checkpoint (-m)")
        return AgParameterization(checkpoint)
    if name == "parsec":
        param = bl.ParsecParameterization()
    elif name == "cst":
        param = bl.CstParameterization(n_dv)
    elif name == "bezier":
        param = bl.BezierParameterization()
    elif name == "svd":
        if dataset is None:
            raise AirfoilGenError("svd needs a dataset (-d)")
        param = bl.SvdParameterization(bl.svd_fit(dataset, n_dv))
    else:
        raise AirfoilGenError(f"unknown parameterization {name!r}")
    if dataset is not None:
        bl.derive_bounds(param, dataset)
    return param


def _read_sections(paths) -> list:
    out = []
    for p in paths:
        raw = parse_coordinate_file(Path(p).read_bytes(), name_hint=Path(p).stem)
        out.append((Path(p).stem, resample_to_section(raw)))
    return out


# --- subcommand implementations ---------------------------------------------


def cmd_preprocess(args, cfg: RunConfig) -> int:
    d = cfg.dataset
    fc = FilterConfig(
        min_points=d.get("min_points", 20),
        min_thickness=d.get("min_thickness", -1e-4),
        t_max_range=tuple(d.get("t_max_range", (0.01, 0.7))),
        max_residual=d.get("max_residual", 5e-3),
        seed=cfg.module_seed("dataset"),
        validation_fraction=d.get("validation_fraction", 40.0 / 1539.0),
    )
    ds = build_dataset(args.raw_dir, fc)
    if args.baselines:
        for label, factory in (
            ("svd_10", lambda: bl.SvdParameterization(bl.svd_fit(ds, 10))),
            ("cst_10", lambda: bl.CstParameterization(10)),
            ("bezier_10", lambda: bl.BezierParameterization()),
            ("parsec_12", lambda: bl.ParsecParameterization()),
        ):
            try:
                param = factory()
                bounds = bl.derive_bounds(param, ds)
                ds.extras[f"bounds_{label}"] = bounds.tolist()
                if label == "svd_10":
                    ds.extras["svd_10"] = param.model.to_dict()
            except AirfoilGenError as exc:
                log.warning("skipping %s bounds: %s", label, exc)
    save_dataset(ds, args.output, flavor="json" if args.json else "binary")
    print(f"retained {ds.n_samples} samples "
          f"({len(ds.rejections)} rejected) -> {args.output}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    tc = _train_config(cfg, {"epochs": args.epochs})
    ckpt, report = train(ds, tc)
    save_checkpoint(ckpt, args.output)
    out_dir = Path(args.output).parent
    report.write_history_csv(out_dir / "loss_history.csv")
    diag = {
        "n_active_latents": report.n_active_latents,
        "active_scores": report.active_scores.tolist(),
        "mean_correlation": report.mean_correlation,
        "final": dict(zip(("epoch", "recon", "kld", "phys_train",
                           "phys_random", "total", "lr"),
                          report.history[-1].tolist())),
    }
    atomic_write_text(out_dir / "diagnostics.json", json.dumps(diag, indent=1))
    write_resolved_config(cfg, out_dir)
    print(f"trained {tc.epochs} epochs -> {args.output} "
          f"(final loss {report.history[-1, 5]:.3e})")
    return EXIT_OK


def cmd_gridsearch(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    base = _train_config(cfg, {})
    stage1 = None
    if any((args.filters, args.kernels, args.latents, args.activations)):
        from .training import STAGE1_GRID

        stage1 = dict(STAGE1_GRID)
        if args.filters:
            stage1["n_filter"] = tuple(int(v) for v in args.filters.split(","))
        if args.kernels:
            stage1["n_kernel"] = tuple(int(v) for v in args.kernels.split(","))
        if args.latents:
            stage1["n_latent"] = tuple(int(v) for v in args.latents.split(","))
        if args.activations:
            stage1["activation"] = tuple(args.activations.split(","))
    betas = None
    if args.betas:
        betas = tuple(float(v) for v in args.betas.split(","))
    result = grid_search(ds, stage1_grid=stage1, beta_grid=betas,
                         budget_epochs=args.budget, base=base)
    doc = {
        "stage1": [dataclasses.asdict(c) for c in result.stage1],
        "stage2": [dataclasses.asdict(c) for c in result.stage2],
        "best_params": result.best_params,
        "best_beta": result.best_beta,
    }
    atomic_write_text(args.output, json.dumps(doc, indent=1))
    print(f"grid search complete -> {args.output}")
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.model)
    fixed = {}
    for spec in args.fix or ():
        name, _, value = spec.partition("=")
        fixed[name.strip()] = float(value)
    dim_map = ckpt.model.feature_dim_map()
    unknown = set(fixed) - set(dim_map)
    if unknown:
        raise AirfoilGenError(f"not physical features: {sorted(unknown)}")
    rng = np.random.default_rng(cfg.module_seed("sampling") if args.seed is None
                                else args.seed)
    # --fix takes raw feature units; normalize before pinning the latents
    pinned = {}
    for name, value in fixed.items():
        idx = ["m_max", "gamma_te", "t_max", "r_le"].index(name)
        probe = np.zeros(4)
        probe[idx] = value
        pinned[name] = float(ckpt.model.normalizer.transform(probe)[idx])
    sections = constrained_generate(ckpt, pinned, args.count, rng)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, sec in enumerate(sections):
        atomic_write_text(out / f"generated_{i:04d}.dat",
                          to_selig_text(sec, f"generated_{i:04d}"))
    print(f"wrote {len(sections)} airfoils to {out}")
    return EXIT_OK


def cmd_encode(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.model)
    rows = []
    for name, section in _read_sections(args.files):
        tc = decompose(section)
        z = ckpt.model.encode_means(tc.t, tc.c)[0]
        rows.append((name, z))
    header = ",".join(f"z{i}" for i in range(ckpt.model.n_latent))
    lines = ["name," + header]
    lines += [name + "," + ",".join(f"{v:.6e}" for v in z) for name, z in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        atomic_write_text(args.output, text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_fit(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.model) if args.model else None
    param = _parameterization(args.method, args.ndv, dataset=ds, checkpoint=ckpt)
    rng = np.random.default_rng(cfg.module_seed("sampling"))
    targets = rng.choice(ds.n_samples, size=min(args.targets, ds.n_samples),
                         replace=False)
    ga = _ga_config(cfg, population=args.population, generations=args.generations,
                    stall_window=args.stall_window)
    results = []
    for k, idx in enumerate(targets):
        tc = ds.sample(int(idx))
        result = inverse_fit(param, recompose(tc), ga, target_index=int(idx))
        results.append(result)
        log.info("target %d/%d: mse %.3e", k + 1, len(targets), result.best_mse)
    dirs = _out_dirs(args.output)
    grid, cum = cumulative_mse_curve(results)
    export_cdf_csv(dirs["reports"] / "fig8_cdf.csv", {param.label(): (grid, cum)})
    doc = [{"target": r.target_index, "mse": r.best_mse,
            "generations": r.generations_used, "dv": r.best_dv.tolist()}
           for r in results]
    atomic_write_text(dirs["reports"] / f"fit_{param.label()}.json",
                      json.dumps(doc, indent=1))
    write_resolved_config(cfg, dirs["reports"])
    med = float(np.median([r.best_mse for r in results]))
    print(f"{param.label()}: median best MSE {med:.3e} over {len(results)} targets")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.model) if args.model else None
    rng = np.random.default_rng(cfg.module_seed("sampling"))
    dirs = _out_dirs(args.output)
    methods = []
    for spec in args.methods:
        name, _, ndv = spec.partition(":")
        methods.append(_parameterization(name, int(ndv or 10), dataset=ds,
                                         checkpoint=ckpt))
    if args.metric == "feasibility":
        ratios = {}
        for param in methods:
            ratios[param.label()] = (param.n_dv,
                                     feasibility_ratio(param, args.samples, rng))
        export_feasibility_csv(dirs["reports"] / "table3_feasibility.csv", ratios)
        for label, (n_dv, ratio) in ratios.items():
            print(f"{label}: {ratio:.1f}% feasible")
    elif args.metric == "cmax":
        tables = {p.label(): cmax_table(p, args.samples, rng) for p in methods}
        export_cmax_csv(dirs["reports"] / "table4_cmax.csv", tables)
        for label, table in tables.items():
            print(label, {k: round(v, 3) for k, v in table.items()})
    elif args.metric == "traversal":
        if ckpt is None:
            raise AirfoilGenError("traversal needs a checkpoint (-m)")
        tc = ds.sample(args.base_index)
        sections = latent_traversal(ckpt, recompose(tc), args.dim, args.steps)
        export_traversal_csv(dirs["reports"] / "fig11_traversal.csv", sections)
        print(f"wrote traversal of dim {args.dim} ({args.steps} steps)")
    else:
        raise AirfoilGenError(f"unknown metric {args.metric!r}")
    write_resolved_config(cfg, dirs["reports"])
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.model) if args.model else None
    case = _xfoil_case(cfg)
    if find_solver(cfg.xfoil.get("binary")) is None:
        raise SolverNotFound(
            "no solver binary: set [xfoil].binary in the config or "
            "the AIRFOILGEN_XFOIL environment variable")
    param = _parameterization(args.method, args.ndv, dataset=ds, checkpoint=ckpt)
    constraints = CONSTRAINED if args.problem == "constrained" else UNCONSTRAINED
    if cfg.xfoil.get("r_le_above"):
        constraints = dataclasses.replace(constraints, r_le_above=True)
    problem = OptimizationProblem(parameterization=param, case=case,
                                  constraints=constraints)
    ga = _ga_config(cfg, population=args.population, generations=args.generations)

    def evaluator(section):
        return xfoil_evaluate(section, case, binary=cfg.xfoil.get("binary"))

    stats = repeated_trials(problem, ga, args.trials, evaluator, jobs=args.jobs)
    dirs = _out_dirs(args.output)
    tag = "fig15" if args.problem == "constrained" else "fig13"
    export_history_csv(dirs["reports"] / f"{tag}_history.csv", stats)
    best = stats.histories[stats.representative]
    section = param.decode(best.best_vector)
    atomic_write_text(dirs["airfoils"] / f"best_{param.label()}_{args.problem}.dat",
                      to_selig_text(section, f"best {param.label()}"))
    write_resolved_config(cfg, dirs["reports"])
    print(f"best L/D {best.best_fitness:.1f} over {args.trials} trials "
          f"({len(stats.failures)} failed)")
    return EXIT_OK


def cmd_export(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.model)
    rng = np.random.default_rng(cfg.module_seed("sampling"))
    dirs = _out_dirs(args.output)
    ag = AgParameterization(ckpt)
    ratios = {ag.label(): (ag.n_dv, feasibility_ratio(ag, args.samples, rng))}
    export_feasibility_csv(dirs["reports"] / "table3_feasibility.csv", ratios)
    tables = {ag.label(): cmax_table(ag, args.samples, rng)}
    export_cmax_csv(dirs["reports"] / "table4_cmax.csv", tables)
    tc = ds.sample(0)
    dim = ckpt.model.feature_dim_map()["t_max"]
    sections = latent_traversal(ckpt, recompose(tc), dim, 7)
    export_traversal_csv(dirs["reports"] / "fig11_traversal.csv", sections)
    parallel_coordinates_export(ag, args.samples, CONSTRAINED, rng,
                                dirs["reports"] / "fig17_parallel_ag.csv")
    write_resolved_config(cfg, dirs["reports"])
    print(f"exports written to {dirs['reports']}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airfoilgen",
        description="physics-aware airfoil generator: preprocessing, training, "
                    "evaluation and shape optimization")
    parser.add_argument("-c", "--config", help="JSON run configuration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build a dataset from coordinate files")
    p.add_argument("raw_dir")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--json", action="store_true", help="write the JSON flavor")
    p.add_argument("--baselines", action="store_true",
                   help="also fit baseline bounds and the SVD model")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the generator")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="two-stage hyperparameter search")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--budget", type=int, default=5000,
                   help="epochs per grid cell")
    p.add_argument("--filters", help="comma list overriding the filter sweep")
    p.add_argument("--kernels", help="comma list overriding the kernel sweep")
    p.add_argument("--latents", help="comma list overriding the latent sweep")
    p.add_argument("--activations", help="comma list overriding the activations")
    p.add_argument("--betas", help="comma list overriding the beta sweep")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("generate", help="sample airfoils, optionally constrained")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-n", "--count", type=int, required=True)
    p.add_argument("--fix", action="append", metavar="FEATURE=VALUE",
                   help="pin a physical feature (raw units); repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="generated")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("encode", help="encode coordinate files to latents")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("files", nargs="+")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("fit", help="inverse fitting benchmark")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-m", "--model")
    p.add_argument("--method", required=True,
                   choices=("ag", "cst", "bezier", "parsec", "svd"))
    p.add_argument("--ndv", type=int, default=10)
    p.add_argument("--targets", type=int, default=30)
    p.add_argument("--population", type=int, default=200)
    p.add_argument("--generations", type=int, default=1000)
    p.add_argument("--stall-window", type=int, default=200)
    p.add_argument("-o", "--output", default="out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="comparative metrics")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-m", "--model")
    p.add_argument("--metric", required=True,
                   choices=("feasibility", "cmax", "cdf", "traversal"))
    p.add_argument("--methods", nargs="+", default=["ag"],
                   metavar="NAME[:NDV]")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--dim", type=int, default=0)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--base-index", type=int, default=0)
    p.add_argument("-o", "--output", default="out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="shape optimization with the flow solver")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-m", "--model")
    p.add_argument("--method", default="ag",
                   choices=("ag", "cst", "bezier", "parsec", "svd"))
    p.add_argument("--ndv", type=int, default=10)
    p.add_argument("--problem", required=True,
                   choices=("unconstrained", "constrained"))
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("-o", "--output", default="out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("export", help="bundle table/figure CSVs")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("-o", "--output", default="out")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except (SolverNotFound, TimeoutError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (AirfoilGenError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
