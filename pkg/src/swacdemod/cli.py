"""Command-line entry point.

Every ExperimentConfig field is exposed as a dotted flag (``--dbn.epochs 5``)
that overrides the config file.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from swacdemod.config import ExperimentConfig, apply_overrides, leaf_fields, load_config
from swacdemod.errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _flag_value(text: str):
    value = yaml.safe_load(text)
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            return float(value)
        except ValueError:
            pass
    return value


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    group = p.add_argument_group("config overrides (YAML values)")
    for name, _default in leaf_fields():
        if name == "seed":
            continue
        group.add_argument(f"--{name}", dest=f"cfg:{name}", metavar="VALUE", type=_flag_value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swacdemod", description="DBN-based PSK demodulation experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def experiment(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, required=True)
        _add_config_flags(p)
        return p

    p = experiment("gen", "generate a dataset for one scheme over the Eb/N0 grid")
    p.add_argument("--scheme", type=int, help="PSK order (default: first configured scheme)")
    p.add_argument("--randomized-carrier", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = experiment("train", "train a demodulator on a dataset and write a model artifact")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--method", choices=("DBN-NN", "DBN-CNN"), default="DBN-NN")
    p.add_argument("--out", type=Path, required=True)

    p = experiment("eval", "BER of a model artifact (and MLE) on a dataset's test split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    for name, help_text in (
        ("sweep-ber", "BER against Eb/N0 on the fixed-carrier channel"),
        ("sweep-doppler", "BER against Eb/N0 on the randomized-carrier channel"),
    ):
        p = experiment(name, help_text)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--jobs", type=int, default=1, help="schemes run in parallel")

    p = experiment("acc-curve", "test accuracy against training-set size")
    p.add_argument("--out", type=Path, required=True)

    p = experiment("features", "train a DBN and export the first three latent features of the test split")
    p.add_argument("--scheme", type=int)
    p.add_argument("--randomized-carrier", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("selftest", help="run the oracle test suites (acceptance experiments excluded)")
    p.add_argument("pytest_args", nargs="*")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    overrides["seed"] = args.seed
    return apply_overrides(cfg, overrides)


def _run(args) -> int:
    from swacdemod import datasets, experiments
    from swacdemod.artifact import ModelArtifact, load_model, save_model
    from swacdemod.pipeline import fit_features, train_pipelines

    if args.command == "selftest":
        import pytest

        root = Path(__file__).resolve().parents[2] / "tests"
        return int(pytest.main([str(root), "-q", "-m", "not acceptance", *args.pytest_args]))

    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "gen":
        ds = datasets.generate_dataset(cfg, args.scheme, args.randomized_carrier)
        datasets.save_dataset(ds, args.out)
    elif cmd == "train":
        ds = datasets.load_dataset(args.data)
        demod = train_pipelines(ds, cfg, [args.method], tag=("cli",))[args.method]
        save_model(ModelArtifact.from_demodulator(demod, cfg.modulation_config(), {"seed": cfg.seed, "config": cfg.to_dict()}), args.out)
    elif cmd == "eval":
        ds = datasets.load_dataset(args.data)
        art = load_model(args.model)
        if art.order != ds.order:
            raise ConfigError(f"model is for {art.order}-PSK, dataset is {ds.order}-PSK")
        mle_name = "MLE-Doppler" if ds.randomized_carrier else "MLE"
        curves = [
            experiments.evaluate(art.to_demodulator(), ds.test, ds.order, cfg, art.method),
            experiments.evaluate(None, ds.test, ds.order, cfg, mle_name),
        ]
        experiments.write_curves(curves, args.out)
    elif cmd in ("sweep-ber", "sweep-doppler"):
        run = experiments.run_ber_sweep if cmd == "sweep-ber" else experiments.run_doppler_sweep
        experiments.write_curves(run(cfg, jobs=args.jobs), args.out)
    elif cmd == "acc-curve":
        points = experiments.run_accuracy_vs_trainsize(cfg)
        experiments.write_accuracy(points, args.out)
        for order in cfg.schemes:
            sizes = {m: experiments.plateau_size(points, m, int(order)) for m in cfg.methods}
            logging.getLogger("swacdemod").info("%d-PSK plateau sizes: %s", int(order), sizes)
    elif cmd == "features":
        order = int(cfg.schemes[0] if args.scheme is None else args.scheme)
        ds = datasets.generate_dataset(cfg, order, args.randomized_carrier)
        stage = fit_features(ds, cfg, ("features",))
        experiments.export_feature_scatter(stage.dbn, ds.test, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"swacdemod: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"swacdemod: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"swacdemod: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"swacdemod: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
