"""Command-line entry point: ``posturetrack <command> [options]``.

Commands: synth, features, train, eval, compare, importance. Settings come
from an optional JSON file (``--config``) overlaid by command-line flags.
Every command writes CSV/JSON into ``--out`` and a ``provenance`` block
(config hash, seed, package version) into each JSON file.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import EmptyDataset, NumericalAbort, PostureError
from .evaluation import (
    ModelSpec,
    SplitSpec,
    comparison_csv,
    kruskal_wallis,
    run_experiment,
)
from .io import load_dataset, read_manifest, write_dataset
from .signal import Dataset, PostureLabel, SensorLocation, normalize_episode
from .synth import SynthConfig, generate_dataset

logger = logging.getLogger("posturetrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "out": "out",
    "data": None,
    "synth": {},
    "model": "et",
    "models": None,
    "model_params": {},
    "split": "loso",
    "locations": None,
    "postures": None,
    "window": None,
    "overlap": 0.5,
    "top": 8,
}


class UsageError(Exception):
    pass


def _csv_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset manifest (default: generate synthetic data)")
    data.add_argument("--locations", help="comma-separated sensor sites")
    data.add_argument("--postures", help="comma-separated posture labels")

    parser = argparse.ArgumentParser(prog="posturetrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--subjects", type=int)
    p.add_argument("--episodes-per-posture", type=int)
    p.add_argument("--noise", type=float, help="white-noise std in g")
    p.add_argument("--locations")
    p.add_argument("--postures")

    p = sub.add_parser("features", parents=[common, data], help="export meta-feature CSVs")
    p.add_argument("--window", type=int, help="window length (default: shortest episode)")
    p.add_argument("--overlap", type=float)

    for name, text in (("train", "fit one model per location"),
                       ("eval", "cross-validate one model per location")):
        p = sub.add_parser(name, parents=[common, data], help=text)
        p.add_argument("--model", help="et, adalstm, lstm, lda or svm")
        if name == "eval":
            p.add_argument("--split", help="loso or kfoldN (default loso)")

    p = sub.add_parser("compare", parents=[common, data], help="compare two or more models")
    p.add_argument("--models", help="comma-separated models, at least two")
    p.add_argument("--split")

    p = sub.add_parser("importance", parents=[common, data], help="ensemble feature importance")
    p.add_argument("--top", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    flags = {k: v for k, v in vars(args).items() if v is not None}
    for key in ("seed", "threads", "out", "data", "model", "split", "window", "overlap", "top"):
        if key in flags:
            cfg[key] = flags[key]
    for key in ("locations", "postures", "models"):
        if key in flags:
            cfg[key] = _csv_list(flags[key])
    synth = dict(cfg.get("synth") or {})
    for flag, key in (("subjects", "subjects"), ("episodes_per_posture", "episodes_per_posture"),
                      ("noise", "noise_std")):
        if flag in flags:
            synth[key] = flags[flag]
    cfg["synth"] = synth
    if cfg["threads"] < 1:
        raise UsageError("--threads must be at least 1")
    return cfg


def _data_digest(path: str) -> str:
    """Hash of the manifest and the files it lists, independent of location."""
    try:
        manifest = read_manifest(path)
    except PostureError:
        return "unreadable"
    root = Path(manifest.pop("_root"))
    h = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode())
    for entry in manifest["files"]:
        try:
            h.update((root / entry["path"]).read_bytes())
        except OSError:
            h.update(b"missing")
    return h.hexdigest()


def provenance(cfg: dict, command: str) -> dict:
    # paths are replaced by content so that relocating a run keeps the hash
    public = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    if public.get("data"):
        public["data"] = _data_digest(public["data"])
    blob = json.dumps(public, sort_keys=True, default=str).encode()
    return {"command": command, "config_sha256": hashlib.sha256(blob).hexdigest(),
            "seed": cfg["seed"], "version": __version__}


def _write_json(path: Path, payload: dict, prov: dict) -> None:
    path.write_text(json.dumps({**payload, "provenance": prov}, sort_keys=True, indent=1) + "\n")


def _synth_config(cfg: dict) -> SynthConfig:
    params = dict(cfg["synth"])
    params.setdefault("seed", cfg["seed"])
    if cfg.get("postures"):
        params["postures"] = tuple(cfg["postures"])
    if cfg.get("locations"):
        params["locations"] = tuple(cfg["locations"])
    try:
        return SynthConfig.from_dict(params)
    except TypeError as exc:
        raise UsageError(f"bad synth settings: {exc}") from None


def _parse_filters(cfg: dict) -> None:
    try:
        if cfg.get("postures"):
            cfg["postures"] = [PostureLabel.parse(p).value for p in cfg["postures"]]
        if cfg.get("locations"):
            cfg["locations"] = [SensorLocation.parse(l).value for l in cfg["locations"]]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _dataset(cfg: dict) -> Dataset:
    if cfg.get("data"):
        ds = load_dataset(cfg["data"], label_set=cfg.get("postures"),
                          locations=cfg.get("locations"))
    else:
        ds = generate_dataset(_synth_config(cfg))
    if len(ds) == 0:
        raise EmptyDataset("no episodes match the location/posture filters")
    return ds


def _locations(ds: Dataset) -> list[str]:
    present = {ep.location for ep in ds.episodes}
    return [loc.value for loc in SensorLocation if loc in present]


def _model_spec(name: str, cfg: dict) -> ModelSpec:
    try:
        spec = ModelSpec.parse(name, cfg.get("model_params", {}).get(name, {}))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _check_params(spec)
    return spec


_BASELINE_PARAMS = {"lda": {"ridge"}, "svm": {"C", "tol", "max_iter"}}


def _check_params(spec: ModelSpec) -> None:
    """Reject unknown or ill-typed hyperparameters before any data is touched."""
    from .adalstm import LstmConfig
    from .ensemble import EnsembleParams
    params = dict(spec.params)
    try:
        if spec.name == "et":
            params.pop("overlap", None)
            EnsembleParams(**params)
        elif spec.name in ("adalstm", "lstm"):
            LstmConfig(**params)
        elif set(params) - _BASELINE_PARAMS[spec.name]:
            raise TypeError(f"unknown parameters {sorted(set(params) - _BASELINE_PARAMS[spec.name])}")
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad parameters for {spec.name}: {exc}") from None


def _split(cfg: dict) -> SplitSpec:
    try:
        return SplitSpec.parse(cfg["split"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_synth(cfg: dict, out: Path) -> None:
    scfg = _synth_config(cfg)
    ds = generate_dataset(scfg)
    prov = provenance(cfg, "synth")
    write_dataset(ds, out, extra={"generator": scfg.to_dict(), "provenance": prov})
    logger.info("wrote %d episodes to %s", len(ds), out)


def cmd_features(cfg: dict, out: Path) -> None:
    from .features import FEATURE_NAMES, episode_meta_features, write_feature_csv
    from .signal import min_episode_length
    ds = _dataset(cfg)
    summary = {}
    for loc in _locations(ds):
        eps = [normalize_episode(ep) for ep in ds.at_location(loc).episodes]
        window = int(cfg["window"] or min_episode_length(eps))
        metas = [episode_meta_features(ep, window, cfg["overlap"], allow_short=True) for ep in eps]
        write_feature_csv(out / f"features_{loc}.csv", metas)
        summary[loc] = {"episodes": len(eps), "window_len": window}
    _write_json(out / "features.json", {"locations": summary, "overlap": cfg["overlap"],
                                        "feature_names": list(FEATURE_NAMES)},
                provenance(cfg, "features"))


def cmd_train(cfg: dict, out: Path) -> None:
    from .features import FEATURE_NAMES, feature_matrix
    from .signal import min_episode_length
    spec = _model_spec(cfg["model"], cfg)
    ds = _dataset(cfg)
    prov = provenance(cfg, "train")
    labels = tuple(l.value for l in ds.label_set)
    for loc in _locations(ds):
        eps = [normalize_episode(ep) for ep in ds.at_location(loc).episodes]
        y = [ep.label.value for ep in eps]
        stem = f"{spec.name}_{loc}"
        extra: dict[str, Any] = {}
        if spec.name == "et":
            from .ensemble import EnsembleParams, fit_bagged_ensemble
            window = min_episode_length(eps)
            X = feature_matrix(eps, window, cfg["overlap"])
            model = fit_bagged_ensemble(X, y, cfg["seed"], EnsembleParams(**spec.params),
                                        labels, n_jobs=cfg["threads"])
            _write_importance(out / f"importance_{loc}.csv", model.importance, FEATURE_NAMES)
            extra["window_len"] = window
        elif spec.name in ("adalstm", "lstm"):
            from .adalstm import LstmConfig, train
            lcfg = LstmConfig(**spec.params)
            if spec.name == "lstm":
                lcfg = replace(lcfg, lr_schedule="fixed")
            result = train([ep.samples for ep in eps], y, labels, lcfg, cfg["seed"])
            result.write_loss_csv(out / f"loss_{stem}.csv")
            model = result.model
        else:
            from .baselines import lda_fit, mean_feature_matrix, svm_fit
            X = mean_feature_matrix(eps)
            fit = lda_fit if spec.name == "lda" else svm_fit
            model = fit(X, y, label_set=labels, **spec.params)
        _write_json(out / f"model_{stem}.json",
                    {"model": model.to_dict(), "location": loc, **extra}, prov)


def _write_importance(path: Path, importance: np.ndarray, names: Sequence[str]) -> None:
    order = sorted(range(len(importance)), key=lambda i: (-importance[i], i))
    lines = ["rank,index,name,importance"]
    for rank, i in enumerate(order, 1):
        lines.append(f"{rank},{i + 1},{names[i]},{float(importance[i])!r}")
    path.write_text("\n".join(lines) + "\n")


def _evaluate(cfg: dict, spec: ModelSpec, ds: Dataset, loc: str):
    return run_experiment(ds.at_location(loc), spec, _split(cfg), cfg["seed"],
                          n_jobs=cfg["threads"],
                          progress=lambda msg: logger.info("%s %s", loc, msg))


def cmd_eval(cfg: dict, out: Path) -> None:
    spec = _model_spec(cfg["model"], cfg)
    _split(cfg)
    ds = _dataset(cfg)
    prov = provenance(cfg, "eval")
    for loc in _locations(ds):
        report = _evaluate(cfg, spec, ds, loc)
        stem = f"{spec.name}_{loc}"
        _write_json(out / f"report_{stem}.json", report.to_dict(), prov)
        (out / f"folds_{stem}.csv").write_text(report.fold_csv())
        (out / f"confusion_{stem}.csv").write_text(report.aggregate.to_csv())


def cmd_compare(cfg: dict, out: Path) -> None:
    names = cfg.get("models") or []
    if len(names) < 2:
        raise UsageError("compare needs at least two models (--models a,b)")
    specs = [_model_spec(n, cfg) for n in names]
    _split(cfg)
    ds = _dataset(cfg)
    prov = provenance(cfg, "compare")
    rows = []
    # one CoV group per requested model, kept by position so "et,et" is two groups
    groups: list[list[float]] = [[] for _ in specs]
    for loc in _locations(ds):
        for g, spec in enumerate(specs):
            report = _evaluate(cfg, spec, ds, loc)
            s = report.summary()["f1"]
            rows.append((loc, spec.name, s["mean"], s["std"], report.cov_f1))
            groups[g].append(report.cov_f1)
    (out / "comparison.csv").write_text(comparison_csv(rows))
    payload: dict[str, Any] = {"models": [s.name for s in specs], "cov": groups,
                               "locations": _locations(ds)}
    if sum(len(g) for g in groups) >= 3:
        res = kruskal_wallis(groups)
        payload["kruskal"] = {"statistic": res.statistic, "pvalue": res.pvalue,
                              "df": res.df, "degenerate": res.degenerate}
    else:
        payload["kruskal"] = None
        logger.warning("too few CoV values for a Kruskal-Wallis test")
    _write_json(out / "kruskal.json", payload, prov)


def cmd_importance(cfg: dict, out: Path) -> None:
    from .ensemble import EnsembleParams, fit_bagged_ensemble
    from .features import FEATURE_NAMES, feature_matrix
    from .signal import min_episode_length
    ds = _dataset(cfg)
    prov = provenance(cfg, "importance")
    params = EnsembleParams(**cfg.get("model_params", {}).get("et", {}))
    labels = tuple(l.value for l in ds.label_set)
    result = {}
    for loc in _locations(ds):
        eps = [normalize_episode(ep) for ep in ds.at_location(loc).episodes]
        X = feature_matrix(eps, min_episode_length(eps), cfg["overlap"])
        model = fit_bagged_ensemble(X, [ep.label.value for ep in eps], cfg["seed"], params,
                                    labels, n_jobs=cfg["threads"])
        imp = model.importance
        _write_importance(out / f"importance_{loc}.csv", imp, FEATURE_NAMES)
        top = sorted(range(len(imp)), key=lambda i: (-imp[i], i))[:cfg["top"]]
        result[loc] = [{"index": i + 1, "name": FEATURE_NAMES[i], "importance": float(imp[i])}
                       for i in top]
    _write_json(out / "importance.json", {"top": result}, prov)


COMMANDS = {"synth": cmd_synth, "features": cmd_features, "train": cmd_train,
            "eval": cmd_eval, "compare": cmd_compare, "importance": cmd_importance}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        _parse_filters(cfg)
        out = Path(cfg["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create output directory: {exc}", file=sys.stderr)
            return EXIT_DATA
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PostureError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
