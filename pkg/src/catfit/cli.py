"""``catfit`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every command writes ``manifest.json`` next to its outputs; set
``SOURCE_DATE_EPOCH`` to pin the recorded timestamps.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation, fitting, models, simulate, transform
from .errors import CatfitError, ValidationError

log = logging.getLogger("catfit")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


# --------------------------------------------------------------------------
# Output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


@contextlib.contextmanager
def _atomic(path: Path):
    """Yield a temporary path in the target directory; rename over ``path`` on success."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _write_json(path: Path, doc) -> None:
    with _atomic(path) as tmp:
        tmp.write_text(json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    with _atomic(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _write_with(path: Path, writer, *args, **kwargs) -> None:
    with _atomic(path) as tmp:
        writer(tmp, *args, **kwargs)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class Run:
    """Collects what goes into the manifest of one command invocation."""

    def __init__(self, command: str, out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.started = _timestamp()
        self.inputs: dict[str, dict] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seed: int | None = None

    def input(self, role: str, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"{role} file not found: {path}")
        self.inputs[role] = {"path": p.name, "sha256": _sha256(p)}
        return p

    def output(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "tool": "catfit",
            "version": __version__,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": {name: _sha256(self.out_dir / name) for name in self.outputs},
            "started": self.started,
            "finished": _timestamp(),
        }
        _write_json(self.out_dir / "manifest.json", manifest)


# --------------------------------------------------------------------------
# Configuration


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return fitting.tomllib.load(fh)
    except fitting.tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None


def _fit_config(args, doc: dict) -> fitting.FitConfig:
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    if getattr(args, "lr_grid", None) is not None:
        flat["learning_rate_grid"] = args.lr_grid
    if getattr(args, "max_steps", None) is not None:
        flat["max_steps"] = args.max_steps
    if getattr(args, "n_splits", None) is not None:
        flat["n_splits"] = args.n_splits
    try:
        return fitting.FitConfig.from_mapping(flat)
    except TypeError as exc:
        raise ValidationError(f"invalid fit config: {exc}") from None


def _label_map(doc: dict):
    labels = doc.get("labels")
    if labels is None:
        return None
    if not isinstance(labels, dict) or not all(v in data.CATEGORIES for v in labels.values()):
        raise ValidationError("[labels] must map label tokens to 'A' or 'B'")
    return labels


def _parse_models(text: str) -> list[str]:
    if text.strip() == "all":
        return list(models.MODEL_NAMES)
    names = [x.strip() for x in text.split(",") if x.strip()]
    for name in names:
        if name not in models.VARIANTS:
            raise ValidationError(f"unknown model {name!r}; valid names: {', '.join(models.MODEL_NAMES)}")
    if not names:
        raise ValidationError(f"no model given; valid names: {', '.join(models.MODEL_NAMES)}")
    return names


def _single_model(text: str, command: str) -> str:
    names = _parse_models(text)
    if len(names) != 1:
        raise ValidationError(f"{command} takes exactly one model")
    return names[0]


def _load_inputs(run: Run, args, doc: dict):
    label_map = _label_map(doc)
    features = data.load_features(run.input("features", args.features), label_map)
    judgments = data.load_judgments(run.input("judgments", args.judgments), args.judgments_mode,
                                    features, label_map)
    return features, judgments


# --------------------------------------------------------------------------
# Commands


def cmd_fit(args) -> None:
    variant = _single_model(args.model, "fit")
    doc = _read_config(args.config)
    config = _fit_config(args, doc)
    run = Run("fit", args.out_dir)
    run.config, run.seed = config.to_dict(), config.seed
    if args.config:
        run.input("config", args.config)
    features, judgments = _load_inputs(run, args, doc)
    spec = models.ModelSpec(variant, features.n_features)
    result = fitting.fit_model(spec, features, judgments, config, layer=args.layer)
    _write_json(run.output("params.json"), result.params_dict())
    _write_json(run.output("trajectories.json"), result.trajectories_dict())
    _write_json(run.output("score.json"), result.score.to_dict())
    run.finish()
    s = result.score
    print(f"{s.name}: LL={s.ll:.4f} AIC={s.aic:.4f} r={s.correlation:.4f} k={s.k} "
          f"(lr={result.chosen_learning_rate:g}, step={result.early_stop_step})")


def cmd_compare(args) -> None:
    names = _parse_models(args.model)
    doc = _read_config(args.config)
    config = _fit_config(args, doc)
    run = Run("compare", args.out_dir)
    run.config, run.seed = config.to_dict(), config.seed
    if args.config:
        run.input("config", args.config)
    features, judgments = _load_inputs(run, args, doc)
    baseline = None
    if args.baseline:
        baseline = evaluation.load_baseline(run.input("baseline", args.baseline))

    scores, params = [], {}
    for name in names:
        log.info("fitting %s", name)
        result = fitting.fit_model(models.ModelSpec(name, features.n_features), features, judgments,
                                   config, layer=args.layer)
        scores.append(result.score)
        params[name] = result.params_dict()["params"]
    if baseline is not None:
        scores.append(evaluation.score_baseline(baseline, judgments, n_splits=config.n_splits,
                                                seed=config.seed, layer=args.layer))
    ceiling = ceiling_raw = None
    if np.all(judgments.n_total >= 2):
        ceiling_raw, ceiling = evaluation.split_half_reliability(judgments, config.n_splits, config.seed)
    else:
        log.warning("some stimuli have fewer than 2 trials; no reliability ceiling")
    report = evaluation.compare_models(scores, ceiling=ceiling, ceiling_raw=ceiling_raw)
    _write_json(run.output("report.json"), dict(report.to_dict(), params=params))
    text = report.to_text()
    _write_text(run.output("report.txt"), text)
    run.finish()
    print(text, end="")


def cmd_transform(args) -> None:
    doc = _read_config(args.config)
    section = doc.get("transform", {})
    unknown = set(section) - {"lambda_grid", "n_folds", "seed"}
    if unknown:
        raise ValidationError(f"unknown [transform] key(s): {', '.join(sorted(unknown))}")
    grid = args.lambda_grid or section.get("lambda_grid") or list(transform.DEFAULT_LAMBDA_GRID)
    n_folds = int(section.get("n_folds", 5))
    seed = args.seed if args.seed is not None else int(section.get("seed", doc.get("seed", 0)))
    run = Run("transform", args.out_dir)
    run.config = {"lambda_grid": [float(x) for x in grid], "n_folds": n_folds}
    run.seed = seed
    if args.config:
        run.input("config", args.config)
    features = data.load_features(run.input("features", args.features), _label_map(doc))
    ratings = data.load_similarities(run.input("similarities", args.similarities), features)

    weights = transform.fit_similarity_weights(features, ratings, grid, n_folds=n_folds, seed=seed)
    transformed = transform.apply_transform(features, weights)
    r2_before = transform.similarity_fit_quality(features, ratings, np.ones(features.n_features))
    r2_after = transform.similarity_fit_quality(features, ratings, weights)
    _write_with(run.output("weights.csv"), transform.write_weights, weights)
    _write_with(run.output("features_transformed.csv"), data.write_features, transformed)
    if args.distances:
        _write_with(run.output("distances.csv"), transform.write_distances, transformed)
    _write_json(run.output("transform.json"), {
        "lambda": weights.lam,
        "cv_r2": weights.cv_score,
        "cv_r2_by_lambda": [{"lambda": lam, "r2": v} for lam, v in weights.cv_scores.items()],
        "n_pairs": ratings.n_pairs,
        "n_nonzero_weights": int(np.count_nonzero(weights.w)),
        "r2_untransformed": r2_before,
        "r2_transformed": r2_after,
    })
    run.finish()
    print(f"lambda={weights.lam:g} cv R2={weights.cv_score:.4f} "
          f"fit r2: untransformed={r2_before:.4f} transformed={r2_after:.4f}")


def cmd_reliability(args) -> None:
    doc = _read_config(args.config)
    config = _fit_config(args, doc)
    run = Run("reliability", args.out_dir)
    run.config, run.seed = {"n_splits": config.n_splits}, config.seed
    features = None
    if args.features:
        features = data.load_features(run.input("features", args.features), _label_map(doc))
    judgments = data.load_judgments(run.input("judgments", args.judgments), args.judgments_mode,
                                    features, _label_map(doc))
    raw, corrected = evaluation.split_half_reliability(judgments, config.n_splits, config.seed)
    _write_json(run.output("reliability.json"), {
        "raw": raw, "corrected": corrected, "n_splits": config.n_splits,
        "n_stimuli": len(judgments.stimulus_ids), "n_trials": judgments.total_trials,
    })
    run.finish()
    print(f"split-half r={raw:.4f} corrected={corrected:.4f}")


def cmd_simulate(args) -> None:
    variant = _single_model(args.model, "simulate")
    seed = args.seed if args.seed is not None else 0
    run = Run("simulate", args.out_dir)
    values = None
    if args.params:
        with open(run.input("params", args.params), encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            pv = models.ParamVector.from_dict(doc.get("params", doc))
        except (KeyError, TypeError, ValueError, AttributeError, models.ModelError) as exc:
            raise ValidationError(f"malformed params file {args.params}: {exc!r}") from None
        if pv.spec.variant != variant or pv.spec.n_features != args.n_features:
            raise ValidationError("params file does not match --model / --n-features")
        values = pv.values
    run.seed = seed
    run.config = {
        "model": variant, "n_stimuli": args.n_stimuli, "n_features": args.n_features,
        "trials": args.trials, "gamma": args.gamma, "beta": args.beta, "layout": args.layout,
        "separation": args.separation, "noise": args.noise,
    }
    sim = simulate.simulate(variant, args.n_stimuli, args.n_features, args.trials, gamma=args.gamma,
                            beta=args.beta, layout=args.layout, separation=args.separation,
                            noise=args.noise, seed=seed, values=values)
    _write_with(run.output("features.csv"), data.write_features, sim.features)
    _write_with(run.output("judgments.csv"), data.write_judgments, sim.judgments, "counts")
    _write_json(run.output("truth.json"), sim.truth_dict())
    run.finish()
    print(f"{args.n_stimuli} stimuli x {args.trials} trials from {variant}; truth LL={sim.truth_ll:.4f}")


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"catfit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, judgments=True):
        p.add_argument("--out-dir", type=Path, required=True)
        p.add_argument("--config", help="TOML config; flags override its values")
        p.add_argument("--seed", type=int)
        if judgments:
            p.add_argument("--judgments", required=True)
            p.add_argument("--judgments-mode", choices=("trials", "counts"), default="counts")

    def fit_flags(p):
        p.add_argument("--features", required=True)
        p.add_argument("--lr-grid", type=_float_list, help="comma-separated learning rates")
        p.add_argument("--max-steps", type=int)
        p.add_argument("--n-splits", type=int)
        p.add_argument("--layer", help="label attached to scores (e.g. a network layer)")

    p = sub.add_parser("fit", help="fit one model")
    common(p)
    fit_flags(p)
    p.add_argument("--model", required=True, help=f"one of: {', '.join(models.MODEL_NAMES)}")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="fit several models and tabulate LL, AIC, correlation")
    common(p)
    fit_flags(p)
    p.add_argument("--model", default="all", help="'all' or comma-separated model names")
    p.add_argument("--baseline", help="CSV id,p_A,p_B of external classifier probabilities")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("transform", help="fit non-negative similarity weights and re-embed features")
    common(p, judgments=False)
    p.add_argument("--features", required=True)
    p.add_argument("--similarities", required=True)
    p.add_argument("--lambda-grid", type=_float_list, help="comma-separated ridge penalties")
    p.add_argument("--distances", action="store_true", help="also write the transformed distance matrix")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("reliability", help="split-half reliability of the judgments")
    common(p)
    p.add_argument("--features", help="optional; validates judged ids")
    p.add_argument("--n-splits", type=int)
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("simulate", help="synthetic features and judgments from a known model")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", required=True)
    p.add_argument("--n-stimuli", type=int, default=200)
    p.add_argument("--n-features", type=int, default=4)
    p.add_argument("--trials", type=int, default=100, help="trials per stimulus")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--layout", choices=simulate.LAYOUTS, default="gaussian")
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--params", help="JSON parameter vector (overrides --gamma/--beta)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    if hasattr(args, "out_dir"):
        try:
            args.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"catfit: error: cannot create {args.out_dir}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except ValidationError as exc:
        print(f"catfit: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CatfitError, RuntimeError, OSError) as exc:
        print(f"catfit: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
