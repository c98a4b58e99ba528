"""Command-line frontend: synth, fit, classify, evaluate, roc, baseline.

All outputs are UTF-8 TSV. Exit codes: 0 on success, 1 on runtime
failure, 2 on usage or configuration errors. Every command is
deterministic given identical inputs and seeds.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluate, factorize, generative, logistic, temporal
from .corpus import (
    ConfigError, Dataset, ParseError, derive_binning, load_dataset,
    parse_households, parse_ratings, parse_test_events, read_synth_config,
    synth_generate, write_dataset,
)

USAGE_ERRORS = (ConfigError, ParseError, FileNotFoundError, ValueError)


def _factor_params(args) -> factorize.FactorParams:
    return factorize.FactorParams(
        rank=args.rank, reg_lambda=args.reg_lambda, xi_u=args.xi_u,
        xi_v=args.xi_v, xi_z=args.xi_z, bin_count=args.bins,
        iterations=args.iterations, seed=args.seed,
    )


def _add_factor_flags(parser):
    parser.add_argument("--rank", type=int, default=10)
    parser.add_argument("--reg-lambda", type=float, default=1.0, dest="reg_lambda")
    parser.add_argument("--xi-u", type=float, default=10.0, dest="xi_u")
    parser.add_argument("--xi-v", type=float, default=40.0, dest="xi_v")
    parser.add_argument("--xi-z", type=float, default=40.0, dest="xi_z")
    parser.add_argument("--bins", type=int, default=12)
    parser.add_argument("--iterations", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)


def _parse_grid(text: str) -> list[float]:
    values = [float(tok) for tok in text.replace(",", " ").split()]
    if not values:
        raise ConfigError("empty value grid")
    return values


def cmd_synth(args) -> int:
    config = read_synth_config(args.config)
    dataset = synth_generate(config, seed=args.seed)
    paths = write_dataset(dataset, args.out)
    for path in paths:
        print(path)
    return 0


def cmd_fit(args) -> int:
    if args.iterations < 1:
        raise ConfigError("--iterations must be >= 1")
    train = parse_ratings(args.train)
    params = _factor_params(args)

    def progress(iteration, model):
        print(f"iteration {iteration} cost {repr(factorize.cost(model, train))}")

    model = factorize.fit_lowrank_temporal(train, params, progress=progress)
    factorize.save_model(model, args.out)
    return 0


def _pipeline_from_args(args) -> evaluate.PipelineConfig:
    features = logistic.FeatureConfig.from_letters(args.features, args.lambda1)
    return evaluate.PipelineConfig(
        classifier=args.classifier,
        factor_params=_factor_params(args),
        features=features,
        sigma_scope=args.sigma_scope,
        epsilon=args.epsilon,
        alpha=1.0,
    )


def _write_predictions(test_events, predictions, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("household\tmovie\ttimestamp\tpredicted\n")
        for ev, pred in zip(test_events, predictions):
            fh.write(f"{ev.household}\t{ev.movie}\t{ev.timestamp}\t{pred}\n")


def _write_posteriors(test_events, posteriors, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("household\tmovie\ttimestamp\tmember\tposterior\n")
        for ev, post in zip(test_events, posteriors):
            for member in sorted(post):
                fh.write(f"{ev.household}\t{ev.movie}\t{ev.timestamp}\t"
                         f"{member}\t{repr(post[member])}\n")


def cmd_classify(args) -> int:
    train = parse_ratings(args.train)
    households = parse_households(args.households)
    test = parse_test_events(args.test)
    pipeline = _pipeline_from_args(args)
    if pipeline.needs_factor_model and args.model is None:
        raise ConfigError(f"classifier {args.classifier!r} needs --model")

    if pipeline.needs_factor_model:
        model = factorize.load_model(args.model)
        binning = model.binning
    else:
        model = None
        binning = derive_binning(train, args.bins)

    if args.classifier == "residual" and args.alpha_grid:
        alphas = _parse_grid(args.alpha_grid)
        out = Path(args.out)
        for idx, alpha in enumerate(alphas):
            predictions = [
                factorize.classify_by_residual(
                    model, households[ev.household], ev, alpha)
                for ev in test
            ]
            path = out.with_name(f"{out.stem}.alpha{idx}{out.suffix}")
            _write_predictions(test, predictions, path)
            print(f"alpha={repr(alpha)} -> {path}")
        return 0

    name = args.classifier
    if name == "residual":
        predictions = [
            factorize.classify_by_residual(model, households[ev.household],
                                           ev, args.alpha)
            for ev in test
        ]
        posteriors = None
    else:
        dataset = Dataset(tuple(train), households, tuple(test),
                          user_count=max(
                              max((ev.user for ev in train), default=-1),
                              max((m for hh in households.values()
                                   for m in hh.members), default=-1)) + 1,
                          movie_count=max(
                              max((ev.movie for ev in train), default=-1),
                              max((ev.movie for ev in test), default=-1)) + 1)
        # reuse the pipeline dispatch but keep the already-loaded model
        if model is not None:
            predictions, posteriors = _classify_with_model(
                dataset, pipeline, model, binning)
        else:
            predictions, posteriors = evaluate.fit_and_classify(dataset, pipeline)

    _write_predictions(test, predictions, args.out)
    if args.dump_posteriors:
        if posteriors is None:
            raise ConfigError("the residual classifier has no posteriors to dump")
        _write_posteriors(test, posteriors, args.dump_posteriors)
    if args.dump_logit:
        if name != "unified":
            raise ConfigError("--dump-logit only applies to the unified classifier")
        models = {
            hid: logistic.fit_household(train, hh, pipeline.features,
                                        model=model, binning=binning)
            for hid, hh in households.items()
        }
        logistic.save_logit_models(models, args.dump_logit)
    return 0


def _classify_with_model(dataset, pipeline, model, binning):
    """Pipeline dispatch for a pre-fitted factor model (CLI classify path)."""
    name = pipeline.classifier
    train, households = dataset.train, dataset.households
    priors = sigma_model = None
    if name.startswith(("prior-", "gen-")):
        priors = {
            hid: temporal.fit_priors(train, hh, binning, pipeline.epsilon)
            for hid, hh in households.items()
        }
    if name.startswith("gen-"):
        sigma_model = generative.estimate_sigma(train, model, pipeline.sigma_scope)
    logit_models = None
    if name == "unified":
        logit_models = {
            hid: logistic.fit_household(train, hh, pipeline.features,
                                        model=model, binning=binning)
            for hid, hh in households.items()
        }
    predictions, posteriors = [], []
    for ev in dataset.test:
        hh = households[ev.household]
        if name.startswith("prior-"):
            mode = name.removeprefix("prior-")
            predictions.append(temporal.classify_prior(priors[hh.id], mode, ev))
            values = {
                member: temporal.prior_value(priors[hh.id], member, mode, ev)
                for member in hh.members
            }
            total = sum(values.values())
            posteriors.append({m: v / total for m, v in values.items()}
                              if total > 0 else
                              {m: 1.0 / hh.size for m in hh.members})
        elif name.startswith("gen-"):
            mode = name.removeprefix("gen-")
            predictions.append(generative.classify_generative(
                hh, ev, model, priors[hh.id], mode, sigma_model))
            posteriors.append(generative.posterior(
                hh, ev, model, priors[hh.id], mode, sigma_model))
        else:
            probs = logistic.member_probabilities(
                logit_models[hh.id], ev, model, binning)
            predictions.append(temporal.argmax_member(
                sorted(probs), lambda member: probs[member]))
            total = sum(probs.values())
            posteriors.append({m: p / total for m, p in probs.items()}
                              if total > 0 else
                              {m: 1.0 / hh.size for m in hh.members})
    return predictions, posteriors


def _read_predictions(path, test_events):
    predictions = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    if lines and lines[0].startswith("household"):
        lines = lines[1:]
    if len(lines) != len(test_events):
        raise ConfigError(
            f"{path}: {len(lines)} predictions for {len(test_events)} test events")
    for line, ev in zip(lines, test_events):
        hid, movie, stamp, predicted = line.split("\t")
        if (int(hid), int(movie), int(stamp)) != (ev.household, ev.movie, ev.timestamp):
            raise ConfigError(f"{path}: prediction row does not match test file order")
        predictions.append(int(predicted))
    return predictions


def _read_posteriors(path, test_events):
    """Load a posterior dump back into one member->probability map per event."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if lines and lines[0].startswith("household"):
        lines = lines[1:]
    posteriors = [dict() for _ in test_events]
    keys = {(ev.household, ev.movie, ev.timestamp): idx
            for idx, ev in enumerate(test_events)}
    for line in lines:
        hid, movie, stamp, member, value = line.split("\t")
        idx = keys.get((int(hid), int(movie), int(stamp)))
        if idx is None:
            raise ConfigError(f"{path}: posterior row matches no test event")
        posteriors[idx][int(member)] = float(value)
    if any(not post for post in posteriors):
        raise ConfigError(f"{path}: missing posteriors for some test events")
    return posteriors


def cmd_evaluate(args) -> int:
    households = parse_households(args.households)
    annotations = {}
    for item in args.annotate or ():
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"bad --annotate {item!r}, expected key=value")
        annotations[key] = float(value)

    if args.export_histograms:
        if not args.train:
            raise ConfigError("--export-histograms needs --train")
        train = parse_ratings(args.train)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "weekday_histogram.tsv", "w", encoding="utf-8") as fh:
            fh.write("household\tmember\tsun\tmon\ttue\twed\tthu\tfri\tsat\n")
            for row in temporal.weekday_histogram(train, households):
                fh.write("\t".join(str(v) for v in row) + "\n")
        with open(out_dir / "tv_histogram.tsv", "w", encoding="utf-8") as fh:
            fh.write("household\ttotal_variation\n")
            for hid, value in temporal.tv_histogram(train, households):
                fh.write(f"{hid}\t{repr(value)}\n")
        if args.model:
            model = factorize.load_model(args.model)
            edges, counts = generative.residual_histogram(train, model)
            with open(out_dir / "residual_histogram.tsv", "w", encoding="utf-8") as fh:
                fh.write("left_edge\tright_edge\tcount\n")
                for k in range(len(counts)):
                    fh.write(f"{repr(float(edges[k]))}\t"
                             f"{repr(float(edges[k + 1]))}\t{counts[k]}\n")
        print(out_dir)
        return 0

    if args.cv:
        if not args.train:
            raise ConfigError("--cv needs --train")
        dataset = load_dataset(args.train, args.households)
        pipeline = _pipeline_from_args(args)
        seeds = [int(tok) for tok in args.seeds.replace(",", " ").split()]
        result = evaluate.run_cv(dataset, pipeline, seeds, fraction=args.fraction)
        text = evaluate.format_cv(result)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        print(text, end="")
        return 0

    if not (args.test and args.predictions and args.out):
        raise ConfigError("evaluate needs --test, --predictions and --out "
                          "(or one of --cv / --export-histograms)")
    test = parse_test_events(args.test)
    predictions = _read_predictions(args.predictions, test)
    posteriors = None
    if args.posteriors:
        posteriors = _read_posteriors(args.posteriors, test)
    report = evaluate.build_report(test, predictions, households,
                                   posteriors=posteriors,
                                   annotations=annotations)
    evaluate.write_report(report, args.out)
    print(evaluate.summary_line(report))
    return 0


def cmd_roc(args) -> int:
    households = parse_households(args.households)
    test = parse_test_events(args.test)
    if args.classifier == "residual":
        if args.model is None:
            raise ConfigError("roc for the residual classifier needs --model")
        model = factorize.load_model(args.model)
        if args.alpha_grid:
            grid = _parse_grid(args.alpha_grid)
        else:
            grid = [0.0] + list(np.geomspace(1e-3, 1e4, args.grid_size - 1))
        points = evaluate.roc_sweep(model, households, test, grid)
    else:
        if args.train is None:
            raise ConfigError("posterior roc sweeps need --train")
        pipeline = _pipeline_from_args(args)
        dataset = load_dataset(args.train, args.households)
        dataset = Dataset(dataset.train, dataset.households, tuple(test),
                          dataset.user_count,
                          max(dataset.movie_count,
                              max((ev.movie for ev in test), default=-1) + 1))
        _, posteriors = evaluate.fit_and_classify(dataset, pipeline)
        if posteriors is None:
            raise ConfigError("classifier produces no posteriors to sweep")
        grid = list(np.linspace(0.0, 1.0, args.grid_size))
        points = evaluate.roc_sweep_posterior(test, posteriors, households, grid)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("parameter\ttpr_first\ttpr_rest\n")
        for point in points:
            fh.write(f"{repr(point.parameter)}\t{repr(point.tpr_first)}\t"
                     f"{repr(point.tpr_rest)}\n")
    print(args.out)
    return 0


def cmd_baseline(args) -> int:
    counts = {2: args.size2, 3: args.size3, 4: args.size4}
    counts = {size: count for size, count in counts.items() if count}
    print(repr(evaluate.random_baseline(counts)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hhattrib",
        description="Attribute anonymous household ratings to household members.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit the time-dependent factor model")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    _add_factor_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("classify", help="attribute test events to members")
    p.add_argument("--train", required=True)
    p.add_argument("--households", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--classifier", required=True, choices=evaluate.CLASSIFIERS)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--alpha-grid", default=None, dest="alpha_grid")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--sigma-scope", default="per_user", dest="sigma_scope",
                   choices=generative.SCOPES)
    p.add_argument("--features", default="abcde")
    p.add_argument("--lambda1", type=float, default=0.01)
    p.add_argument("--dump-posteriors", default=None, dest="dump_posteriors")
    p.add_argument("--dump-logit", default=None, dest="dump_logit")
    _add_factor_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions or run cross-validation")
    p.add_argument("--households", required=True)
    p.add_argument("--test", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--posteriors", default=None,
                   help="posterior dump to score with the pairwise AUC")
    p.add_argument("--train", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--cv", action="store_true")
    p.add_argument("--classifier", default="prior-day", choices=evaluate.CLASSIFIERS)
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--fraction", type=float, default=0.04)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--sigma-scope", default="per_user", dest="sigma_scope",
                   choices=generative.SCOPES)
    p.add_argument("--features", default="abcde")
    p.add_argument("--lambda1", type=float, default=0.01)
    p.add_argument("--export-histograms", action="store_true",
                   dest="export_histograms")
    p.add_argument("--out-dir", default="histograms", dest="out_dir")
    p.add_argument("--model", default=None)
    p.add_argument("--annotate", action="append", default=None)
    _add_factor_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", help="sweep a decision parameter into an ROC table")
    p.add_argument("--households", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--classifier", default="residual", choices=evaluate.CLASSIFIERS)
    p.add_argument("--model", default=None)
    p.add_argument("--train", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-grid", default=None, dest="alpha_grid")
    p.add_argument("--grid-size", type=int, default=50, dest="grid_size")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--sigma-scope", default="per_user", dest="sigma_scope",
                   choices=generative.SCOPES)
    p.add_argument("--features", default="abcde")
    p.add_argument("--lambda1", type=float, default=0.01)
    _add_factor_flags(p)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("baseline", help="expected error of random guessing")
    p.add_argument("--size2", type=int, default=0)
    p.add_argument("--size3", type=int, default=0)
    p.add_argument("--size4", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
