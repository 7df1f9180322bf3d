"""Command-line front end.

Exit codes: 0 success, 1 user error (unknown title/genre, bad flag),
2 data error (missing or malformed CSV files).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import __version__
from . import recommenders as rc
from . import text
from .data import PRIOR_MEAN_MODES, DataError, Dataset, load_dataset
from .evaluation import cross_validate, kfold_split
from .matrix import DEFAULT_SEED, SvdFactors, load_svd, save_svd

log = logging.getLogger("movierec")

DATA_DIR_ENV = "MOVIEREC_DATA_DIR"
DEFAULT_DATA_DIR = "data/ml-latest-small"
EXIT_OK, EXIT_USER, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; bad flags are user errors here
        raise UsageError(f"{self.prog}: {message}")


def _global_options(p: argparse.ArgumentParser, defaults: bool) -> None:
    """Options accepted both before and after the subcommand name."""

    def d(value):
        return value if defaults else argparse.SUPPRESS

    p.add_argument(
        "--data-dir",
        default=d(os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR)),
        help=f"directory holding movies.csv, ratings.csv, tags.csv (env {DATA_DIR_ENV})",
    )
    p.add_argument("--seed", type=int, default=d(DEFAULT_SEED))
    p.add_argument("-m", "--min-ratings", dest="m", type=int, default=d(7), help="eligibility threshold m")
    p.add_argument(
        "--prior", choices=PRIOR_MEAN_MODES, default=d("movie"),
        help="prior mean C of the weighted score: mean of movie means, or of all ratings",
    )
    p.add_argument("-o", "--output", choices=("table", "json", "csv"), default=d("table"))
    p.add_argument("--cache-dir", type=Path, default=d(None), help="cache latent factors here")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="movierec", description="Movie recommendations over MovieLens CSV data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(p, defaults=True)
    # Subparsers repeat the global options without defaults, so a value given
    # before the subcommand survives unless it is given again after it.
    shared = argparse.ArgumentParser(add_help=False)
    _global_options(shared, defaults=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        return sub.add_parser(name, help=help_, parents=[shared])

    def title_cmd(name, help_):
        sp_ = command(name, help_)
        sp_.add_argument("title", nargs="?", help="exact movie title, e.g. 'Titanic (1997)'")
        sp_.add_argument("--id", dest="movie_id", type=int, default=None, help="movie id; bypasses title lookup")
        return sp_

    g = command("genre-top", "top movies of a genre by weighted score")
    g.add_argument("genre")
    g.add_argument("-n", type=int, default=5)

    s = title_cmd("pearson", "movies most correlated with a movie's ratings")
    s.add_argument("-n", type=int, default=5)
    s.add_argument("--min-overlap", type=int, default=1)

    s = title_cmd("cosine-genre", "movies with the most similar TF-IDF genre vector")
    s.add_argument("-n", type=int, default=5)

    s = title_cmd("knn-item", "nearest movies by cosine distance of rating rows")
    s.add_argument("-k", type=int, default=5)

    c = command("cluster", "k-means over genre vectors, with the inertia curve")
    c.add_argument("--k", type=int, default=6)
    c.add_argument("--k-max", type=int, default=9)

    s = title_cmd("content-latent", "similar movies in the metadata TF-IDF/SVD space")
    s.add_argument("-n", type=int, default=5)
    s.add_argument("--components", type=int, default=1000)

    s = title_cmd("collab-latent", "similar movies in the rating-matrix SVD space")
    s.add_argument("-n", type=int, default=5)
    s.add_argument("--components", type=int, default=100)

    def predictor_flags(sp_):
        sp_.add_argument("--mode", choices=rc.MODES, default="user")
        sp_.add_argument("--similarity", choices=rc.SIMILARITIES, default="msd")
        sp_.add_argument("--k", dest="neighbors", type=int, default=40)
        sp_.add_argument("--min-k", type=int, default=1)

    s = command("predict", "predicted rating of a movie for a user")
    s.add_argument("user", type=int)
    s.add_argument("movie", type=int)
    predictor_flags(s)

    s = command("top-n", "highest predicted unrated movies for a user")
    s.add_argument("user", type=int)
    s.add_argument("-n", type=int, default=5)
    predictor_flags(s)

    s = command("evaluate", "k-fold cross-validated RMSE of the predictor")
    s.add_argument("--folds", type=int, default=5)
    predictor_flags(s)

    command("inspect", "dataset summary counts")
    return p


def output_schema() -> dict:
    """The JSON schema every ``--output json`` document validates against."""
    return json.loads(resources.files("movierec").joinpath("schemas/output.schema.json").read_text())


# --------------------------------------------------------------------------
# caching


def _cache_path(args, dataset: Dataset, kind: str, k: int, suffix: str) -> Path | None:
    if args.cache_dir is None:
        return None
    args.cache_dir.mkdir(parents=True, exist_ok=True)
    return args.cache_dir / f"{dataset.content_hash[:16]}-{kind}-k{k}-s{args.seed}{suffix}"


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def content_factors(args, dataset: Dataset) -> SvdFactors:
    path = _cache_path(args, dataset, "content", args.components, ".svd")
    if path is not None and path.exists():
        log.info("loading cached content factors from %s", path)
        return load_svd(path)
    model, factors = rc.content_latent_factors(dataset, args.components, args.seed)
    if path is not None:
        _atomic(path, lambda p: save_svd(factors, p))
        _atomic(path.with_suffix(".tfidf"), lambda p: text.save_model(model, p))
    return factors


def collab_factors(args, dataset: Dataset) -> SvdFactors:
    path = _cache_path(args, dataset, "collab", args.components, ".svd")
    if path is not None and path.exists():
        log.info("loading cached collaborative factors from %s", path)
        return load_svd(path)
    factors = rc.collab_latent_factors(dataset, args.components, args.seed)
    if path is not None:
        _atomic(path, lambda p: save_svd(factors, p))
    return factors


# --------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def _table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(c) for c in columns]] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def emit(args, payload: dict, columns: Sequence[str], rows: Sequence[Sequence], header: str = "") -> str:
    if args.output == "json":
        envelope = {"command": args.command, "seed": args.seed, "m": args.m, **payload}
        return json.dumps(envelope, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if args.output == "csv":
        return _csv(columns, rows)
    return (header + "\n" if header else "") + _table(columns, rows)


def _ranked(args, recs: rc.Recommendations, params: dict) -> str:
    rows = [(i + 1, s.movie, s.title, s.value) for i, s in enumerate(recs)]
    kind = recs[0].value_kind if recs else ""
    payload = {"params": params, "flag": recs.flag, "results": [s.as_dict() for s in recs]}
    header = f"# flag: {recs.flag}" if recs.flag else ""
    return emit(args, payload, ("rank", "movie", "title", kind or "value"), rows, header)


def _movie(args, dataset: Dataset) -> int:
    return rc.resolve_movie(dataset, args.title, args.movie_id)


def _predictor_config(args) -> rc.PredictorConfig:
    try:
        return rc.PredictorConfig(args.mode, args.similarity, args.neighbors, args.min_k)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _target(args) -> dict:
    return {"title": args.title, "id": args.movie_id}


# --------------------------------------------------------------------------
# subcommands


def cmd_genre_top(args, ds: Dataset) -> str:
    recs = rc.recommend_by_genre(ds, args.genre, args.n)
    if recs.flag == "unknown-genre":
        raise UsageError(f"unknown genre {args.genre!r}; known genres: {', '.join(rc.known_genres(ds))}")
    return _ranked(args, recs, {"genre": args.genre, "n": args.n, "C": ds.C, "prior": args.prior})


def cmd_pearson(args, ds: Dataset) -> str:
    recs = rc.recommend_pearson(ds, _movie(args, ds), args.n, args.min_overlap)
    return _ranked(args, recs, {**_target(args), "n": args.n, "min_overlap": args.min_overlap})


def cmd_cosine_genre(args, ds: Dataset) -> str:
    recs = rc.recommend_cosine_genre(ds, _movie(args, ds), args.n)
    return _ranked(args, recs, {**_target(args), "n": args.n})


def cmd_knn_item(args, ds: Dataset) -> str:
    recs = rc.recommend_knn_item(ds, _movie(args, ds), args.k)
    return _ranked(args, recs, {**_target(args), "k": args.k})


def cmd_cluster(args, ds: Dataset) -> str:
    report = rc.cluster_genres(ds, args.k, args.seed, args.k_max)
    assignments = [
        {"movie": m, "title": ds.movies[m].title, "cluster": c} for m, c in report.assignments.items()
    ]
    payload = {
        "params": {"k": args.k, "k_max": args.k_max},
        "inertia": report.inertia,
        "inertia_curve": [{"k": k, "inertia": v} for k, v in report.inertia_curve],
        "results": assignments,
    }
    rows = [(a["movie"], a["title"], a["cluster"]) for a in assignments]
    if args.output != "table":
        return emit(args, payload, ("movie", "title", "cluster"), rows)
    curve = _table(("k", "inertia"), report.inertia_curve)
    sizes = [(c, len(report.members(c)), "; ".join(ds.movies[m].title for m in report.members(c)[:3]))
             for c in range(report.k)]
    return (f"# inertia curve (k=1..{args.k_max})\n{curve}\n# k={report.k}, inertia={report.inertia:.6f}\n"
            + _table(("cluster", "size", "first titles"), sizes))


def cmd_content_latent(args, ds: Dataset) -> str:
    movie = _movie(args, ds)
    recs = rc.recommend_content_latent(ds, movie, args.n, factors=content_factors(args, ds))
    return _ranked(args, recs, {**_target(args), "n": args.n, "components": args.components})


def cmd_collab_latent(args, ds: Dataset) -> str:
    movie = _movie(args, ds)
    recs = rc.recommend_collab_latent(ds, movie, args.n, factors=collab_factors(args, ds))
    return _ranked(args, recs, {**_target(args), "n": args.n, "components": args.components})


def cmd_predict(args, ds: Dataset) -> str:
    config = _predictor_config(args)
    p = rc.predict_rating(rc.fit_predictor(ds, config), args.user, args.movie)
    if p.impossible:
        log.warning("prediction fell back to the global mean (%s)", p.reason)
    result = {"user": p.user, "movie": p.movie, "estimate": p.estimate, "actual_k": p.actual_k,
              "impossible": p.impossible, "reason": p.reason}
    payload = {"params": config.as_dict(), "results": [result]}
    return emit(args, payload, ("user", "movie", "estimate", "actual_k", "reason"),
                [(p.user, p.movie, p.estimate, p.actual_k, p.reason or "")])


def cmd_top_n(args, ds: Dataset) -> str:
    config = _predictor_config(args)
    recs = rc.top_n_for_user(rc.fit_predictor(ds, config), ds, args.user, args.n)
    return _ranked(args, recs, {"user": args.user, "n": args.n, **config.as_dict()})


def cmd_evaluate(args, ds: Dataset) -> str:
    config = _predictor_config(args)
    try:
        plan = kfold_split(ds.ratings, args.folds, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    report = cross_validate(ds, config, plan)
    for i, t in enumerate(report.wall_time):
        log.info("fold %d: %.2fs", i, t)
    payload = {"params": {"folds": args.folds, **config.as_dict()}, **report.to_dict()}
    rows = [(f["fold"], f["rmse"], f["baseline_rmse"]) for f in payload["folds"]]
    rows.append(("mean", report.mean_rmse, report.baseline_rmse))
    return emit(args, payload, ("fold", "rmse", "baseline_rmse"), rows)


def cmd_inspect(args, ds: Dataset) -> str:
    summary = ds.summary()
    payload = {"results": summary, "C": ds.C, "global_mean": ds.global_mean,
               "skipped_tags": ds.skipped_tags, "content_hash": ds.content_hash}
    rows = list(summary.items()) + [("C", ds.C), ("global_mean", ds.global_mean)]
    return emit(args, payload, ("quantity", "value"), rows)


COMMANDS = {
    "genre-top": cmd_genre_top,
    "pearson": cmd_pearson,
    "cosine-genre": cmd_cosine_genre,
    "knn-item": cmd_knn_item,
    "cluster": cmd_cluster,
    "content-latent": cmd_content_latent,
    "collab-latent": cmd_collab_latent,
    "predict": cmd_predict,
    "top-n": cmd_top_n,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}\nhint: run 'movierec --help' for usage", file=stderr)
        return EXIT_USER
    handler = logging.StreamHandler(stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("movierec")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if args.verbose else logging.WARNING)
    root.propagate = False
    try:
        if args.m < 1:
            raise UsageError("-m/--min-ratings must be >= 1")
        t0 = time.perf_counter()
        dataset = load_dataset(args.data_dir, m=args.m, prior=args.prior)
        log.info("loaded %s in %.2fs", args.data_dir, time.perf_counter() - t0)
        stdout.write(COMMANDS[args.command](args, dataset))
    except (UsageError, rc.RecommenderError) as e:
        print(f"error: {e}", file=stderr)
        return EXIT_USER
    except DataError as e:
        print(f"data error: {e}\nhint: point --data-dir (or ${DATA_DIR_ENV}) at an ml-latest-small directory",
              file=stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
