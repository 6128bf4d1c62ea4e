"""Command-line pipeline: synthesise, train, register, export.

Exit codes: 0 success, 2 configuration errors, 3 data errors, 4 numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import fileio
from .config import PipelineConfig, load_config, save_config
from .errors import ConfigError, DataError, GshapeError, NonFiniteState, \
    SingularSystem, SolverNotConverged
from .inference import reconstruct
from .metric import MetricParams
from .model import ShapeModel
from .shooting import shoot
from .synthesis import SyntheticSpec, write_synthetic_dataset
from .template import softmax, warp_template

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _metric_params(cfg: PipelineConfig) -> MetricParams:
    return MetricParams(membrane=cfg.membrane, bending=cfg.bending,
                        elastic=(cfg.elastic_div, cfg.elastic_shear),
                        absolute=cfg.absolute)


def _find_manifest(path):
    if os.path.isdir(path):
        candidate = os.path.join(path, "manifest.json")
        if not os.path.exists(candidate):
            raise DataError(f"no manifest.json under {path}")
        return candidate
    return path


def _load_images(path):
    """Dataset manifest or a single field file -> (ids, images, k)."""
    try:
        if os.path.isdir(path) or path.endswith(".json"):
            return fileio.read_dataset(_find_manifest(path))
        arr, header = fileio.read_field(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    name = os.path.splitext(os.path.basename(path))[0]
    return [name], [arr.astype(np.float64)], int(header["channels"])


def _write_latents_csv(path, ids, latents, logliks=None):
    n_modes = latents.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["subject_id"] + [f"z_{m + 1}" for m in range(n_modes)]
        if logliks is not None:
            header.append("log_likelihood")
        writer.writerow(header)
        for i, sid in enumerate(ids):
            row = [sid] + [repr(float(v)) for v in latents[i]]
            if logliks is not None:
                row.append(repr(float(logliks[i])))
            writer.writerow(row)


def cmd_synthesise(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    spec = SyntheticSpec(
        dims=cfg.dims, n_classes=cfg.classes, m_true=cfg.true_modes,
        n_train=cfg.train_subjects, n_test=cfg.test_subjects,
        lambda_true=cfg.true_lambda, latent_std=cfg.latent_std,
        template_amplitude=cfg.template_amplitude,
        smooth_fwhm=cfg.smooth_fwhm, seed=cfg.seed)
    write_synthetic_dataset(spec, _metric_params(cfg), args.out,
                            steps=cfg.steps)
    save_config(cfg, os.path.join(args.out, "config.used"))
    print(f"wrote synthetic dataset to {args.out} "
          f"({cfg.train_subjects} train / {cfg.test_subjects} test)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ids, images, k = _load_images(args.data)
    if len(images) < 2:
        raise DataError("training needs at least two images")
    model = ShapeModel.from_config(cfg, workers=args.workers, seed=args.seed)
    model.fit(np.stack(images))
    model.save(args.out)
    trace_path = args.out + ".bounds.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lower_bound"])
        for i, b in enumerate(model.lower_bounds_, start=1):
            writer.writerow([i, repr(b)])
    print(f"trained {model.n_iter_} iterations; "
          f"checkpoint {args.out}, bound trace {trace_path}")
    return 0


def cmd_register(args) -> int:
    model = ShapeModel.load(args.checkpoint)
    ids, images, k = _load_images(args.data)
    os.makedirs(args.out, exist_ok=True)
    latents, logliks = [], []
    for sid, f in zip(ids, images):
        result = model.register(f)
        latents.append(result.latent.mean)
        logliks.append(result.log_likelihood)
        if args.save_fields:
            fileio.write_field(
                os.path.join(args.out, f"residual_{sid}.fld"),
                result.residual.mean, model.lattice_.voxel_size,
                channels=model.lattice_.ndim)
        print(f"{sid}: log-likelihood {result.log_likelihood:.4f}")
    _write_latents_csv(os.path.join(args.out, "registered.csv"), ids,
                       np.stack(latents), np.asarray(logliks))
    return 0


def _export_template(model, out_dir):
    mu = softmax(model.template_)
    fileio.write_field(os.path.join(out_dir, "template.fld"),
                       model.template_, model.lattice_.voxel_size,
                       channels=model.n_classes_)
    for k in range(model.n_classes_):
        fileio.write_pgm(os.path.join(out_dir, f"template_class{k}.pgm"),
                         mu[..., k])


def _export_modes(model, out_dir, sigma, count):
    moments = np.sum([lp.second_moment() for lp in model.latents_], axis=0)
    stds = np.sqrt(np.diag(moments) / max(1, len(model.latents_)))
    count = min(count, model.n_modes)
    for m in range(count):
        for sign, tag in ((+1.0, "plus"), (-1.0, "minus")):
            z = np.zeros(model.n_modes)
            z[m] = sign * sigma * stds[m]
            v = reconstruct(model.modes_, z)
            result = shoot(v, model.kern_, model.shoot_steps)
            mu = warp_template(model.template_, result.inverse)
            for k in range(model.n_classes_):
                fileio.write_pgm(
                    os.path.join(out_dir, f"mode{m}_{tag}_class{k}.pgm"),
                    mu[..., k])


def _export_reconstructions(model, out_dir, subject):
    """Subject reconstructed with 0..M modes, then with the residual added."""
    zp = model.latents_[subject]
    rp = model.residuals_[subject]
    stages = [("modes%02d" % m, reconstruct(model.modes_[:m], zp.mean[:m]))
              for m in range(model.n_modes + 1)]
    stages.append(("full", reconstruct(model.modes_, zp.mean) + rp.mean))
    for tag, v in stages:
        result = shoot(v, model.kern_, model.shoot_steps)
        mu = warp_template(model.template_, result.inverse)
        for k in range(model.n_classes_):
            fileio.write_pgm(
                os.path.join(out_dir, f"recon_s{subject:03d}_{tag}_class{k}.pgm"),
                mu[..., k])


def _export_latents(model, out_dir):
    latents = np.stack([lp.mean for lp in model.latents_])
    ids = [f"train{i:03d}" for i in range(len(model.latents_))]
    _write_latents_csv(os.path.join(out_dir, "latents.csv"), ids, latents)


def _export_fits(model, out_dir, data, test_data):
    rows = []
    for split, path in (("train", data), ("test", test_data)):
        if path is None:
            continue
        ids, images, _ = _load_images(path)
        for sid, f in zip(ids, images):
            result = model.register(f)
            rows.append((sid, split, result.log_likelihood))
    with open(os.path.join(out_dir, "fits.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "split", "log_likelihood"])
        for sid, split, ll in rows:
            writer.writerow([sid, split, repr(float(ll))])


def cmd_export(args) -> int:
    model = ShapeModel.load(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    if args.what == "template":
        _export_template(model, args.out)
    elif args.what == "modes":
        _export_modes(model, args.out, args.sigma, args.count)
    elif args.what == "reconstructions":
        _export_reconstructions(model, args.out, args.subject)
    elif args.what == "latents":
        _export_latents(model, args.out)
    elif args.what == "fits":
        if args.data is None:
            raise ConfigError("fits export needs --data (and usually --test-data)")
        _export_fits(model, args.out, args.data, args.test_data)
    else:
        raise ConfigError(f"unknown export target {args.what!r}")
    print(f"exported {args.what} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gshape",
        description="Generative diffeomorphic shape modelling pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesise", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synthesise)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="register images under a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--save-fields", action="store_true")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("export", help="export figures/CSVs from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--what", required=True,
                   choices=["template", "modes", "reconstructions",
                            "latents", "fits"])
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--test-data", default=None)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--subject", type=int, default=0)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteState, SolverNotConverged, SingularSystem,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GshapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
