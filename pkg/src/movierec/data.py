"""MovieLens CSV ingestion.

Reads ``movies.csv``, ``ratings.csv`` and ``tags.csv`` from a data directory,
validates them row by row and derives the per-movie rating statistics
(count ``v``, mean ``R``) plus the prior mean ``C`` used by the weighted score.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

NO_GENRES = "(no genres listed)"
MOVIES_HEADER = ["movieId", "title", "genres"]
RATINGS_HEADER = ["userId", "movieId", "rating", "timestamp"]
TAGS_HEADER = ["userId", "movieId", "tag", "timestamp"]

# "movie": mean of per-movie means (reproduces the published genre table),
# "global": mean over every rating record.
PRIOR_MEAN_MODES = ("movie", "global")


class DataError(Exception):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Movie:
    id: int
    title: str
    genres: tuple[str, ...]
    clean_title: str


@dataclass(frozen=True)
class RatingRecord:
    user: int
    movie: int
    rating: float
    timestamp: int


@dataclass(frozen=True)
class TagRecord:
    user: int
    movie: int
    tag: str
    timestamp: int = 0


@dataclass(frozen=True)
class MovieStats:
    v: int  # rating count
    R: float  # mean rating


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable joined corpus.

    ``stats`` holds (v, R) for every rated movie; ``eligible`` the ids with
    ``v >= m`` in ascending order. ``C`` is the prior mean of the weighted
    score and ``global_mean`` the plain mean over all ratings.
    """

    movies: Mapping[int, Movie]
    ratings: Sequence[RatingRecord]
    tags: Sequence[TagRecord]
    stats: Mapping[int, MovieStats]
    eligible: tuple[int, ...]
    C: float
    m: int
    global_mean: float
    skipped_tags: int = 0
    content_hash: str = field(default="")

    def is_eligible(self, movie: int) -> bool:
        return movie in self._eligible_set

    @cached_property
    def _eligible_set(self) -> frozenset[int]:
        return frozenset(self.eligible)

    @cached_property
    def users(self) -> tuple[int, ...]:
        return tuple(sorted({r.user for r in self.ratings}))

    @cached_property
    def rated_movies(self) -> tuple[int, ...]:
        return tuple(sorted(self.stats))

    @cached_property
    def tags_by_movie(self) -> dict[int, list[str]]:
        out: dict[int, set[str]] = defaultdict(set)
        for t in self.tags:
            out[t.movie].add(t.tag)
        return {k: sorted(v) for k, v in out.items()}

    @cached_property
    def rating_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(users, movies, ratings) as parallel numpy arrays."""
        n = len(self.ratings)
        users = np.fromiter((r.user for r in self.ratings), dtype=np.int64, count=n)
        movies = np.fromiter((r.movie for r in self.ratings), dtype=np.int64, count=n)
        values = np.fromiter((r.rating for r in self.ratings), dtype=np.float64, count=n)
        return users, movies, values

    def summary(self) -> dict[str, int]:
        return {
            "movies": len(self.movies),
            "ratings": len(self.ratings),
            "tags": len(self.tags),
            "users": len(self.users),
            "rated_movies": len(self.stats),
            "eligible_movies": len(self.eligible),
        }


_NON_ALNUM = re.compile(r"[^a-z0-9 ]")
_SPACES = re.compile(r" +")


def clean_title(title: str) -> str:
    """Lowercase, map every char outside ``[a-z0-9 ]`` to a space, squeeze spaces."""
    text = _NON_ALNUM.sub(" ", title.lower())
    return _SPACES.sub(" ", text).strip()


def parse_genres(raw: str) -> tuple[str, ...]:
    raw = raw.strip()
    if raw == NO_GENRES or not raw:
        return ()
    out: list[str] = []
    for g in raw.split("|"):
        g = g.strip()
        if g and g not in out:
            out.append(g)
    return tuple(out)


def _rows(path: Path, header: list[str]) -> Iterable[tuple[int, list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(header)}") from None
        if [h.strip().lstrip("﻿") for h in first] != header:
            raise DataError(f"{path}:1: header {first!r} does not match {','.join(header)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{reader.line_num}: expected {len(header)} columns, got {len(row)}"
                )
            yield reader.line_num, row


def _int(path: Path, line: int, value: str, what: str) -> int:
    try:
        out = int(value)
    except ValueError:
        raise DataError(f"{path}:{line}: {what} {value!r} is not an integer") from None
    return out


def _positive_id(path: Path, line: int, value: str, what: str) -> int:
    out = _int(path, line, value, what)
    if out < 1:
        raise DataError(f"{path}:{line}: {what} must be positive, got {out}")
    return out


def load_movies(path: str | Path) -> dict[int, Movie]:
    path = Path(path)
    movies: dict[int, Movie] = {}
    for line, (mid, title, genres) in _rows(path, MOVIES_HEADER):
        movie_id = _positive_id(path, line, mid, "movieId")
        if movie_id in movies:
            raise DataError(f"{path}:{line}: duplicate movieId {movie_id}")
        movies[movie_id] = Movie(movie_id, title, parse_genres(genres), clean_title(title))
    return movies


def _rating(path: Path, line: int, value: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"{path}:{line}: rating {value!r} is not a number") from None
    doubled = x * 2.0
    if not (1.0 <= doubled <= 10.0) or doubled != round(doubled):
        raise DataError(f"{path}:{line}: rating {value} is not on the 0.5..5.0 half-star grid")
    return x


def load_ratings(path: str | Path) -> list[RatingRecord]:
    path = Path(path)
    out: list[RatingRecord] = []
    seen: set[tuple[int, int]] = set()
    for line, (uid, mid, rating, ts) in _rows(path, RATINGS_HEADER):
        user = _positive_id(path, line, uid, "userId")
        movie = _positive_id(path, line, mid, "movieId")
        key = (user, movie)
        if key in seen:
            raise DataError(f"{path}:{line}: duplicate rating for user {user}, movie {movie}")
        seen.add(key)
        out.append(RatingRecord(user, movie, _rating(path, line, rating), _int(path, line, ts, "timestamp")))
    return out


def load_tags(path: str | Path) -> tuple[list[TagRecord], int]:
    """Return the tag records and the number of rows skipped for an empty tag."""
    path = Path(path)
    out: list[TagRecord] = []
    skipped = 0
    for line, (uid, mid, tag, ts) in _rows(path, TAGS_HEADER):
        text = tag.strip().lower()
        if not text:
            skipped += 1
            continue
        out.append(
            TagRecord(
                _positive_id(path, line, uid, "userId"),
                _positive_id(path, line, mid, "movieId"),
                text,
                _int(path, line, ts, "timestamp"),
            )
        )
    if skipped:
        log.warning("%s: skipped %d rows with an empty tag", path, skipped)
    return out, skipped


def movie_stats(ratings: Sequence[RatingRecord]) -> dict[int, MovieStats]:
    sums: dict[int, float] = defaultdict(float)
    counts: dict[int, int] = defaultdict(int)
    for r in ratings:
        sums[r.movie] += r.rating
        counts[r.movie] += 1
    return {mid: MovieStats(counts[mid], sums[mid] / counts[mid]) for mid in sorted(counts)}


def compute_eligibility(
    ratings: Sequence[RatingRecord], m: int, prior: str = "movie"
) -> tuple[dict[int, MovieStats], tuple[int, ...], float]:
    """Per-movie stats, the ids with at least ``m`` ratings, and the prior mean C.

    ``prior="movie"`` averages the per-movie means; ``prior="global"``
    averages every rating record.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not ratings:
        raise DataError("no ratings: the prior mean C is undefined")
    if prior not in PRIOR_MEAN_MODES:
        raise ValueError(f"prior must be one of {PRIOR_MEAN_MODES}, got {prior!r}")
    stats = movie_stats(ratings)
    eligible = tuple(mid for mid, s in stats.items() if s.v >= m)
    if prior == "movie":
        C = float(np.mean([s.R for s in stats.values()]))
    else:
        C = float(np.mean([r.rating for r in ratings]))
    return stats, eligible, C


def _file_digest(paths: Iterable[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def build_dataset(
    movies: Mapping[int, Movie],
    ratings: Sequence[RatingRecord],
    tags: Sequence[TagRecord] = (),
    m: int = 7,
    prior: str = "movie",
    skipped_tags: int = 0,
    content_hash: str = "",
) -> Dataset:
    for i, r in enumerate(ratings):
        if r.movie not in movies:
            raise DataError(f"rating #{i + 1} references unknown movie {r.movie}")
    stats, eligible, C = compute_eligibility(ratings, m, prior)
    global_mean = float(np.mean([r.rating for r in ratings]))
    return Dataset(
        movies=dict(movies),
        ratings=tuple(ratings),
        tags=tuple(tags),
        stats=stats,
        eligible=eligible,
        C=C,
        m=m,
        global_mean=global_mean,
        skipped_tags=skipped_tags,
        content_hash=content_hash,
    )


def load_dataset(data_dir: str | Path, m: int = 7, prior: str = "movie") -> Dataset:
    data_dir = Path(data_dir)
    paths = [data_dir / "movies.csv", data_dir / "ratings.csv", data_dir / "tags.csv"]
    movies = load_movies(paths[0])
    ratings = load_ratings(paths[1])
    tags, skipped = load_tags(paths[2])
    return build_dataset(
        movies, ratings, tags, m=m, prior=prior, skipped_tags=skipped,
        content_hash=_file_digest(paths),
    )


def _fmt_rating(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, data_dir: str | Path) -> None:
    """Write the three CSV files; reloading them yields identical records."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    with (data_dir / "movies.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MOVIES_HEADER)
        for mid in sorted(dataset.movies):
            mv = dataset.movies[mid]
            w.writerow([mv.id, mv.title, "|".join(mv.genres) if mv.genres else NO_GENRES])
    with (data_dir / "ratings.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATINGS_HEADER)
        for r in dataset.ratings:
            w.writerow([r.user, r.movie, _fmt_rating(r.rating), r.timestamp])
    with (data_dir / "tags.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TAGS_HEADER)
        for t in dataset.tags:
            w.writerow([t.user, t.movie, t.tag, t.timestamp])
