import argparse
import logging
import os
import sys

import numpy as np
from rich import print
from rich.logging import RichHandler
from rich.table import Table

from config import RunConfig, build_run_config, dump_run_config
from lowbend import continuum, evaluate, imaging, nn, triplet_store
from lowbend.exceptions import LowBendError, ParameterError, ShapeError
from lowbend.geometry import PairSampler
from lowbend.loss import LossConfig, delta1, delta2, flatness_ratio
from lowbend.trainer import Trainer

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 2
EXIT_INCONCLUSIVE = 3

VERIFY_THRESHOLD = 0.9
DEFAULT_EPS_LIST = "0.4,0.2,0.1,0.05"
RECON_IMAGES = 8

log = logging.getLogger("lowbend")


def _ensure_parent(path: str):
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)


def _echo_config(cfg: RunConfig):
    path = f"{cfg.output}.config.yaml"
    _ensure_parent(path)
    dump_run_config(cfg, path)


def _dataset(cfg: RunConfig) -> imaging.DatasetSpec:
    return imaging.make_dataset(
        cfg.dataset, cfg.resolution, cfg.epsilon, cfg.quantize, **cfg.options()
    )


def _dataset_file(cfg: RunConfig) -> str:
    return cfg.dataset_path or f"{cfg.output}.lbld"


def cmd_gen(cfg: RunConfig) -> int:
    spec = _dataset(cfg)
    loss_cfg = LossConfig(spec.epsilon, cfg.lam, cfg.kappa, cfg.mode)
    loss_cfg.validate(spec.manifold.uniqueness_bound)
    path = _dataset_file(cfg)
    print(f"Generating {cfg.count} {spec.name} triplets (eps={spec.epsilon:.6g}) into {path}...")
    triplets = imaging.generate_triplets(spec, cfg.count, cfg.seed, cfg.workers)
    _ensure_parent(path)
    triplet_store.write_dataset(path, triplets)
    _echo_config(cfg)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    spec = _dataset(cfg)
    init_seed, data_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    width, height, channels = spec.renderer.image_shape()
    n = width * height * channels
    model = nn.Autoencoder.create(
        n, cfg.latent_dim, np.random.default_rng(init_seed), cfg.hidden, cfg.lr
    )
    triplets = None
    if cfg.dataset_path:
        triplets = triplet_store.read_dataset(cfg.dataset_path)
        if triplets[0].img_x.vector().size != n:
            raise ShapeError(f"{cfg.dataset_path} does not hold {spec.name} images of size {n}")
    loss_cfg = LossConfig(cfg.epsilon, cfg.lam, cfg.kappa, cfg.mode)
    _ensure_parent(cfg.output)
    trainer = Trainer(
        model,
        spec,
        loss_cfg,
        np.random.default_rng(data_seed),
        batch_size=cfg.batch,
        triplets=triplets,
        last_good_path=f"{cfg.output}.last-good.lblm",
        log_every=cfg.log_every,
    )
    print(f"Training on {spec.name} for {cfg.steps} steps ({cfg.mode}, lambda={cfg.lam:g})...")
    frame = trainer.run(cfg.steps)
    frame.to_csv(f"{cfg.output}.train.csv", index=False)
    nn.save_checkpoint(f"{cfg.output}.lblm", model)
    _echo_config(cfg)
    if len(frame):
        last = frame.iloc[-1]
        print(
            f"Final losses: isometry {last.isometry_loss:.5g}, "
            f"flatness {last.flatness_loss:.5g}, reconstruction {last.reconstruction_loss:.5g}"
        )
    return EXIT_OK


def make_embedding(case: str, rho: float) -> continuum.AnalyticEmbedding:
    if case not in continuum.EMBEDDINGS:
        raise ParameterError(f"Unknown verification case: {case}")
    if case == "circle":
        return continuum.CircleEmbedding(rho)
    return continuum.EMBEDDINGS[case]()


def cmd_verify(cfg: RunConfig, case: str, rho: float, eps_list: str, mc_samples: int) -> int:
    try:
        epsilons = [float(e) for e in eps_list.split(",")]
    except ValueError as e:
        raise ParameterError(f"Bad epsilon list: {eps_list}") from e
    phi = make_embedding(case, rho)
    report = continuum.consistency_rate(
        phi, epsilons, mc_samples, cfg.lam, cfg.seed, workers=cfg.workers
    )
    path = f"{cfg.output}.verify.csv"
    _ensure_parent(path)
    continuum.write_verify_report(path, report)

    table = Table(title=f"{report.embedding}, lambda={cfg.lam:g}, limit value {report.limit:.8g}")
    for column in ("epsilon", "mc_value", "std_err", "abs_diff"):
        table.add_column(column, justify="right")
    for r in report.rows:
        table.add_row(
            f"{r.epsilon:g}",
            f"{r.estimate.value:.8g}",
            f"{r.estimate.std_err:.2g}",
            f"{r.abs_diff:.3g}",
        )
    print(table)
    if report.status == "inconclusive":
        print("[yellow]Inconclusive: differences are not statistically significant[/yellow]")
        return EXIT_INCONCLUSIVE
    if report.status == "exact":
        print("[green]PASS[/green]: all differences vanish")
        return EXIT_OK
    verdict = report.passed(VERIFY_THRESHOLD)
    print(
        f"{'[green]PASS[/green]' if verdict else '[red]FAIL[/red]'}: "
        f"slope {report.slope:.3f} (threshold {VERIFY_THRESHOLD})"
    )
    return EXIT_OK if verdict else EXIT_VERIFY_FAILED


def _image_suffix(channels: int) -> str:
    return "pgm" if channels == 1 else "ppm"


def cmd_eval(cfg: RunConfig, model_path: str) -> int:
    spec = _dataset(cfg)
    model = nn.load_checkpoint(model_path or f"{cfg.output}.lblm")
    width, height, channels = spec.renderer.image_shape()
    if model.encoder.input_width != width * height * channels:
        raise ShapeError(
            f"Model expects {model.encoder.input_width} inputs, "
            f"{spec.name} images have {width * height * channels}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    out_dir = f"{cfg.output}_eval"
    os.makedirs(out_dir, exist_ok=True)

    points = [spec.manifold.point(c) for c in spec.manifold.uniform(rng, cfg.samples)]
    images = np.stack([spec.renderer(p).vector() for p in points])
    codes = model.encode(images)
    result = evaluate.pca(codes)
    evaluate.write_csv(os.path.join(out_dir, "pca_stds.csv"), evaluate.pca_frame(result))
    labels = evaluate.point_labels(spec.manifold, points)
    l = model.latent_dim
    dims = tuple(range(min(3, l)))
    evaluate.write_csv(
        os.path.join(out_dir, "projection.csv"),
        evaluate.export_projection(codes, result, dims, labels),
    )
    if l >= 5:
        evaluate.write_csv(
            os.path.join(out_dir, "projection_145.csv"),
            evaluate.export_projection(codes, result, (0, 3, 4), labels),
        )

    sampler = PairSampler(spec.manifold, spec.epsilon, spec.circle_only)
    pairs = [sampler.draw(rng) for _ in range(cfg.test_pairs)]
    curve = evaluate.interp_errors(
        model, spec.renderer, spec.manifold, pairs, np.linspace(0.0, 1.0, cfg.t_steps)
    )
    evaluate.write_csv(os.path.join(out_dir, "interp_err.csv"), curve.to_frame())

    triplets = [
        imaging.make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng, sampler=sampler)
        for _ in range(cfg.test_pairs)
    ]
    fx = model.encode(np.stack([t.img_x.vector() for t in triplets]))
    fy = model.encode(np.stack([t.img_y.vector() for t in triplets]))
    fav = model.encode(np.stack([t.img_av.vector() for t in triplets]))
    dist = np.array([t.dist for t in triplets])
    ratio = flatness_ratio(delta1(fx, fy, dist), delta2(fx, fy, fav, dist))

    suffix = _image_suffix(channels)
    recon = model.reconstruct(images[:RECON_IMAGES])
    for i, (src, out) in enumerate(zip(images[:RECON_IMAGES], recon)):
        triplet_store.write_pnm(
            os.path.join(out_dir, f"{i:03d}_input.{suffix}"),
            imaging.Image(width, height, channels, src),
        )
        triplet_store.write_pnm(
            os.path.join(out_dir, f"{i:03d}_output.{suffix}"),
            imaging.Image.from_vector(out, width, height, channels),
        )
    if len(images) >= 2:
        strip = evaluate.latent_interpolation(model, images[0], images[1], RECON_IMAGES)
        for k, vec in enumerate(strip):
            triplet_store.write_pnm(
                os.path.join(out_dir, f"interp_{k:02d}.{suffix}"),
                imaging.Image.from_vector(vec, width, height, channels),
            )

    _echo_config(cfg)
    print(f"PCA stds: {np.array2string(result.stds, precision=4)}")
    print(f"Used dimensions (tau={evaluate.USAGE_THRESHOLD}): {evaluate.dim_usage(result.stds)}")
    print(f"err(0.5) = {float(np.interp(0.5, curve.t, curve.err)):.5g}")
    print(f"Mean flatness ratio |delta2|/|delta1|: {float(np.mean(ratio)):.5g}")
    return EXIT_OK


def _add_common_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", dest="config", metavar="FILE", type=str, help="YAML config file.")
    parser.add_argument("--seed", dest="seed", metavar="SEED", type=int, help="Random seed.")
    parser.add_argument(
        "--dataset",
        dest="dataset",
        metavar="KIND",
        type=str,
        help='Dataset; "g", "s", "r", "flat_square", "g_rotation" (default: "s").',
    )
    parser.add_argument("--res", dest="resolution", metavar="PIXELS", type=int, help="Image resolution.")
    parser.add_argument("--eps", dest="epsilon", metavar="EPS", type=float, help="Locality radius.")
    parser.add_argument(
        "--output", dest="output", metavar="PREFIX", type=str, help="Prefix of all output files."
    )
    parser.add_argument(
        "--dataset-file", dest="dataset_path", metavar="FILE", type=str, help="LBLD dataset file."
    )
    parser.add_argument("--workers", dest="workers", metavar="N", type=int, help="Worker processes.")
    parser.add_argument("--quantize", dest="quantize", action="store_true", default=None)
    parser.add_argument("--verbose", dest="verbose", action="store_true", help="Verbose logging.")
    parser.add_argument("--logfile", dest="logfile", metavar="FILE", type=str)
    for renderer in imaging.RENDERERS.values():
        renderer.create_args(parser)


class ArgumentParser(argparse.ArgumentParser):
    """Report usage errors as ParameterError so they exit with EXIT_ERROR."""

    def error(self, message):
        raise ParameterError(f"{self.prog}: {message}")


def make_parser() -> argparse.ArgumentParser:
    args_parser = ArgumentParser(prog="lowbend")
    commands = args_parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Generate a triplet dataset file.")
    _add_common_args(gen)
    gen.add_argument("--count", dest="count", metavar="N", type=int, help="Number of triplets.")

    train = commands.add_parser("train", help="Train an autoencoder.")
    _add_common_args(train)
    train.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=float, help="Flatness weight.")
    train.add_argument("--kappa", dest="kappa", metavar="KAPPA", type=float)
    train.add_argument("--latent-dim", dest="latent_dim", metavar="L", type=int)
    train.add_argument("--mode", dest="mode", choices=["joint", "encoder_first"])
    train.add_argument("--steps", dest="steps", metavar="N", type=int)
    train.add_argument("--batch", dest="batch", metavar="N", type=int)
    train.add_argument("--lr", dest="lr", metavar="RATE", type=float)
    train.add_argument("--log-every", dest="log_every", metavar="N", type=int)

    verify = commands.add_parser("verify", help="Check the consistency rate of the energy.")
    _add_common_args(verify)
    verify.add_argument(
        "--case",
        dest="case",
        choices=sorted(continuum.EMBEDDINGS),
        default="circle",
        help='Analytic embedding (default: "circle").',
    )
    verify.add_argument("--rho", dest="rho", metavar="RHO", type=float, default=1.0)
    verify.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=float)
    verify.add_argument(
        "--eps-list", dest="eps_list", metavar="E1,E2,...", type=str, default=DEFAULT_EPS_LIST
    )
    verify.add_argument(
        "--mc-samples", dest="mc_samples", metavar="N", type=int, default=1_000_000
    )

    ev = commands.add_parser("eval", help="Analyze the latent space of a trained model.")
    _add_common_args(ev)
    ev.add_argument("--model", dest="model", metavar="FILE", type=str, help="LBLM checkpoint.")
    ev.add_argument("--samples", dest="samples", metavar="N", type=int)
    ev.add_argument("--test-pairs", dest="test_pairs", metavar="N", type=int)
    ev.add_argument("--t-steps", dest="t_steps", metavar="N", type=int)
    return args_parser


def _setup_logging(args):
    log.handlers = [RichHandler(show_path=False)]
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    if args.logfile:
        log.addHandler(logging.FileHandler(args.logfile))


def main(argv=None) -> int:
    """Handle command line arguments and call other modules as needed."""
    args = make_parser().parse_args(argv)
    _setup_logging(args)

    overrides = {
        name: getattr(args, name)
        for name in RunConfig._fields
        if name != "renderer_options" and hasattr(args, name)
    }
    cfg = build_run_config(args.config, overrides)
    options = imaging.RENDERERS[cfg.dataset].fetch_args(args)
    if options:
        cfg = build_run_config(args.config, {**overrides, "renderer_options": options})

    if args.command == "gen":
        return cmd_gen(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "verify":
        return cmd_verify(cfg, args.case, args.rho, args.eps_list, args.mc_samples)
    return cmd_eval(cfg, args.model)


def run(argv=None) -> int:
    try:
        return main(argv)
    except (LowBendError, OSError) as e:
        print(f"[red]Error:[/red] {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(run())
