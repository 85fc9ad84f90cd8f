"""Batch command-line front end.

Subcommands cover the whole pipeline: generate the synthetic benchmark
(`oracle`), train a generator (`train`), synthesize parameters
(`synth`), top up a dataset (`augment`), score estimators (`eval`),
run the augmentation sweep (`sweep`), and decode/export meshes
(`mesh`, `basis`). Every artifact-producing run writes a manifest with
the command, configuration and seed; repeated runs with the same
manifest produce bitwise-identical outputs. Progress goes to stderr,
machine-readable results only to files.

Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, condgen, dataio, evalharness, morphable
from .blobfile import MAGIC
from .errors import AusynthError
from .labels import check_intensities, scale_label


def _load_any_dataset(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
    if magic == MAGIC:
        return dataio.load_dataset_blob(path)
    return dataio.load_dataset(path)


def _write_manifest(out_path, command, args):
    skip = {"func"}
    config = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    doc = {"command": command, "config": config, "seed": config.get("seed"),
           "version": __version__}
    with open(str(out_path) + ".manifest.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _progress(message):
    print(message, file=sys.stderr)


def _parse_label(text, dim):
    values = [int(v) for v in text.split(",")]
    return check_intensities(values, dim=dim)


def _parse_widths(text):
    return tuple(int(v) for v in text.split(",")) if text else None


def _train_config(args):
    return condgen.TrainConfig(
        learning_rate=args.lr, iterations=args.iters, batch_size=args.batch,
        lam=args.lam, beta=args.beta, seed=args.seed, soft_labels=args.soft_labels,
        d_steps=args.d_steps, non_saturating=args.non_saturating,
        z_dim=args.z_dim, latent_dim=args.latent_dim,
        g_hidden=_parse_widths(args.g_hidden), d_hidden=_parse_widths(args.d_hidden),
        e_hidden=_parse_widths(args.e_hidden), dz_hidden=_parse_widths(args.dz_hidden))


def _write_train_log(path, log, log_walltime):
    with open(path, "w") as fh:
        fh.write("iteration," + ",".join(("d_loss", "g_loss", "l_g", "l_r"))
                 + ",wall_s\n")
        cols = dict(zip(log.columns, range(len(log.columns))))
        for i in range(log.data.shape[0]):
            row = [str(i)]
            for name in ("d_loss", "g_loss", "l_g", "l_r"):
                row.append(repr(float(log.data[i, cols[name]]))
                           if name in cols else "nan")
            row.append(repr(float(log.wall[i])) if log_walltime else "0.0")
            fh.write(",".join(row) + "\n")


# ---- subcommand handlers -----------------------------------------------

def _cmd_oracle(args):
    if args.preset == "toy":
        config = dataio.toy_benchmark_config(n_samples=args.samples, seed=args.seed)
    else:
        config = dataio.imbalanced_benchmark_config(n_samples=args.samples,
                                                    seed=args.seed)
    dataset, oracle = dataio.synth_oracle_dataset(config)
    dataio.save_dataset(args.out, dataset)
    if args.oracle_out:
        doc = {"components": [{"label": list(c.label), "mean": c.mean.tolist(),
                               "cov": c.cov.tolist(), "weight": c.weight}
                              for c in oracle.components]}
        with open(args.oracle_out, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    _write_manifest(args.out, "oracle", args)
    _progress(f"wrote {dataset.n} samples to {args.out}")


def _cmd_train(args):
    dataset = _load_any_dataset(args.data)
    if not dataset.normalized:
        dataset, _ = dataio.normalize_params(dataset)
    config = _train_config(args)
    _progress(f"training {args.model} for {config.iterations} iterations "
              f"(batch {config.batch_size}, lr {config.learning_rate})")
    if args.model == "cgan":
        model, log = condgen.train_cgan(dataset, config)
    else:
        model, log = condgen.train_caae(dataset, config)
    condgen.save_model(model, args.out)
    if args.log:
        _write_train_log(args.log, log, args.log_walltime)
    _write_manifest(args.out, "train", args)
    _progress(f"final losses: " + ", ".join(
        f"{name}={log.data[-1, i]:.4f}" for i, name in enumerate(log.columns)))


def _cmd_synth(args):
    model = condgen.load_model(args.model)
    label = _parse_label(args.label, model.label_dim)
    y_scaled = scale_label(label)
    if isinstance(model, condgen.CaaeModel):
        if not args.source:
            raise AusynthError("caae synthesis needs --source parameters")
        sources = np.atleast_2d(dataio.load_params(args.source))
        params = condgen.synthesize_caae_batch(
            model, sources, np.tile(y_scaled, (sources.shape[0], 1)))
    else:
        rng = np.random.default_rng(args.seed)
        params = condgen.synthesize_cgan_batch(
            model, np.tile(y_scaled, (args.count, 1)), rng)
    out_params = params
    if args.raw:
        if model.data_bounds is None:
            raise AusynthError("checkpoint carries no raw-space bounds; "
                               "cannot emit raw parameters")
        out_params = dataio.denormalize_params(params, model.data_bounds)
    dataio.save_params(args.out, out_params)
    if args.mesh:
        if not args.basis:
            raise AusynthError("--mesh needs --basis")
        basis = morphable.load_basis(args.basis)
        decode_params = out_params if args.raw else params
        mesh = morphable.decode_geometry(basis, np.zeros(basis.id_dim),
                                         decode_params[0])
        neutral = morphable.decode_geometry(basis, np.zeros(basis.id_dim),
                                            np.zeros(basis.exp_dim))
        scalars, colors = morphable.deformation_colormap(neutral, mesh)
        mesh.scalars, mesh.colors = scalars, colors
        morphable.export_mesh(mesh, args.mesh)
    _write_manifest(args.out, "synth", args)
    _progress(f"wrote {out_params.shape[0]} parameter vectors to {args.out}")


def _cmd_augment(args):
    model = condgen.load_model(args.model)
    dataset = _load_any_dataset(args.data)
    if not dataset.normalized:
        if model.data_bounds is None:
            raise AusynthError("checkpoint carries no raw-space bounds; "
                               "augmentation needs them to align spaces")
        dataset, _ = dataio.apply_training_bounds(dataset, model.data_bounds)
    augmented = evalharness.augment(dataset, model, args.count,
                                    sampler=args.sampler, seed=args.seed)
    dataio.save_dataset(args.out, augmented)
    _write_manifest(args.out, "augment", args)
    _progress(f"added {args.count} synthetic samples -> {args.out}")


def _eval_params(args):
    return evalharness.RegressorParams(epochs=args.epochs, seed=args.seed)


def _normalized_pair(train, test):
    train_n, bounds = dataio.normalize_params(train)
    test_n, clipped = dataio.apply_training_bounds(test, bounds)
    if clipped:
        _progress(f"clipped {clipped} out-of-range test entries")
    return train_n, test_n


def _cmd_eval(args):
    train = _load_any_dataset(args.train)
    test = _load_any_dataset(args.test)
    hp = _eval_params(args)
    if args.model:
        model = condgen.load_model(args.model)
        if model.data_bounds is not None:
            train, _ = dataio.apply_training_bounds(train, model.data_bounds)
            test, _ = dataio.apply_training_bounds(test, model.data_bounds)
        else:
            train, test = _normalized_pair(train, test)
        real_rep, synth_rep = evalharness.table1_protocol(
            train, test, model, kind=args.kind, params=hp, seed=args.seed)
        text = ("== real test parameters ==\n"
                + evalharness.format_report(real_rep)
                + "\n== synthesized parameters ==\n"
                + evalharness.format_report(synth_rep) + "\n")
        if args.csv:
            evalharness.write_report_csv(args.csv, synth_rep)
    else:
        train, test = _normalized_pair(train, test)
        reg = evalharness.fit_regressor(train, args.kind, hp)
        report = evalharness.evaluate(reg, test)
        text = evalharness.format_report(report) + "\n"
        if args.csv:
            evalharness.write_report_csv(args.csv, report)
    with open(args.report, "w") as fh:
        fh.write(text)
    _write_manifest(args.report, "eval", args)
    _progress(text)


def _cmd_sweep(args):
    train = _load_any_dataset(args.train)
    test = _load_any_dataset(args.test)
    model = condgen.load_model(args.model)
    if model.data_bounds is not None:
        train, _ = dataio.apply_training_bounds(train, model.data_bounds)
        test, _ = dataio.apply_training_bounds(test, model.data_bounds)
    else:
        train, test = _normalized_pair(train, test)
    multiples = tuple(float(m) for m in args.multiples.split(","))
    rows = evalharness.augmentation_sweep(train, test, model,
                                          multiples=multiples, kind=args.kind,
                                          params=_eval_params(args), seed=args.seed)
    evalharness.write_sweep_csv(args.csv, rows)
    _write_manifest(args.csv, "sweep", args)
    for row in rows:
        _progress(f"x{row['multiple']:g} (+{row['count']}): "
                  f"MAE {row['mean_mae']:.4f}  MSE {row['mean_mse']:.4f}")


def _cmd_mesh(args):
    basis = morphable.load_basis(args.basis)
    params = dataio.load_params(args.params)
    x_exp = params[args.row]
    x_id = dataio.load_params(args.x_id)[0] if args.x_id else np.zeros(basis.id_dim)
    mesh = morphable.decode_geometry(basis, x_id, x_exp)
    neutral = morphable.decode_geometry(basis, x_id, np.zeros(basis.exp_dim))
    scalars, colors = morphable.deformation_colormap(neutral, mesh)
    mesh.scalars, mesh.colors = scalars, colors
    morphable.export_mesh(mesh, args.out)
    _write_manifest(args.out, "mesh", args)
    _progress(f"wrote mesh ({len(mesh.vertices)} vertices) to {args.out}")


def _cmd_basis(args):
    basis = morphable.synthetic_basis(seed=args.seed, rings=args.rings,
                                      segments=args.segments, id_dim=args.id_dim,
                                      exp_dim=args.exp_dim, alb_dim=args.alb_dim)
    morphable.save_basis(args.out, basis)
    _write_manifest(args.out, "basis", args)
    _progress(f"wrote basis ({basis.n_vertices} vertices, "
              f"exp dim {basis.exp_dim}) to {args.out}")


# ---- parser ------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--iters", type=int, default=150_000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--soft-labels", action="store_true")
    p.add_argument("--d-steps", type=int, default=1)
    p.add_argument("--non-saturating", action="store_true")
    p.add_argument("--z-dim", type=int, default=None)
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--g-hidden", default=None, help="comma-separated widths")
    p.add_argument("--d-hidden", default=None)
    p.add_argument("--e-hidden", default=None)
    p.add_argument("--dz-hidden", default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ausynth",
        description="AU-conditioned synthesis of morphable-model "
                    "expression parameters")
    parser.add_argument("--config", default=None,
                        help="JSON file of defaults; explicit flags win")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("oracle", help="emit the synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("toy", "imbalanced"), default="toy")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-out", default=None,
                   help="also write the closed-form conditional moments")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("train", help="train a cgan or caae generator")
    p.add_argument("--model", choices=("cgan", "caae"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="per-iteration loss log (CSV)")
    p.add_argument("--log-walltime", action="store_true",
                   help="record elapsed seconds in the log (breaks bitwise "
                        "reproducibility of the log file)")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("synth", help="synthesize parameters for a target label")
    p.add_argument("--model", required=True)
    p.add_argument("--label", required=True, help="comma-separated intensities")
    p.add_argument("--out", required=True)
    p.add_argument("--source", default=None,
                   help="source parameter file (caae only)")
    p.add_argument("--count", type=int, default=1, help="samples (cgan only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true",
                   help="denormalize outputs with the stored bounds")
    p.add_argument("--basis", default=None)
    p.add_argument("--mesh", default=None, help="also export a PLY mesh")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("augment", help="append generator-synthesized samples")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sampler", choices=("uniform", "invfreq"), default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("eval", help="AU intensity estimation report")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--model", default=None,
                   help="checkpoint; runs the real-vs-synthetic protocol")
    p.add_argument("--kind", choices=("svr", "osvr"), default="svr")
    p.add_argument("--report", required=True, help="text report path")
    p.add_argument("--csv", default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="augmentation-size sweep")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=("svr", "osvr"), default="svr")
    p.add_argument("--multiples", default="0,1,2,4",
                   help="synthetic counts as multiples of the rarest combo")
    p.add_argument("--csv", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("mesh", help="decode parameters to a colored PLY mesh")
    p.add_argument("--params", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--x-id", default=None, help="identity coefficient file")
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("basis", help="emit a seeded synthetic morphable basis")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rings", type=int, default=12)
    p.add_argument("--segments", type=int, default=16)
    p.add_argument("--id-dim", type=int, default=100)
    p.add_argument("--exp-dim", type=int, default=79)
    p.add_argument("--alb-dim", type=int, default=100)
    p.set_defaults(func=_cmd_basis)

    return parser


def main(argv=None):
    parser = build_parser()
    args, remaining = parser.parse_known_args(argv)
    if args.config:
        with open(args.config) as fh:
            defaults = json.load(fh)
        parser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    elif remaining:
        parser.error(f"unrecognized arguments: {' '.join(remaining)}")
    if not getattr(args, "command", None):
        parser.print_usage(file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (AusynthError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
