from __future__ import annotations

import csv
import math
import os
from fractions import Fraction
from pathlib import Path

import pytest

from movierec.data import load_dataset

REPO = Path(__file__).resolve().parents[1]
BUNDLED_DATA = REPO / "data" / "ml-latest-small"

# Acceptance results collected by test_acceptance and printed at the end of the run.
ACCEPTANCE_LINES: dict[int, list[tuple[str, bool]]] = {}


def real_data_dir() -> Path:
    return Path(os.environ.get("MOVIEREC_DATA_DIR", BUNDLED_DATA))


@pytest.fixture(scope="session")
def data_dir() -> Path:
    path = real_data_dir()
    if not (path / "ratings.csv").is_file():
        pytest.skip(f"no MovieLens data at {path}")
    return path


@pytest.fixture(scope="session")
def dataset(data_dir):
    return load_dataset(data_dir)


def exact_cosine(x, y) -> float:
    """Rational-arithmetic reference, immune to underflow and rounding."""
    fx = [Fraction(float(v)) for v in x]
    fy = [Fraction(float(v)) for v in y]
    xx = sum(v * v for v in fx)
    yy = sum(v * v for v in fy)
    if xx == 0 or yy == 0:
        return 0.0
    dot = sum(a * b for a, b in zip(fx, fy))
    return math.copysign(math.sqrt(dot * dot / (xx * yy)), dot)


def write_csvs(directory: Path, movies, ratings, tags=()) -> Path:
    """Write raw rows (already-formatted tuples) under the standard headers."""
    directory.mkdir(parents=True, exist_ok=True)
    for name, header, rows in (
        ("movies.csv", ["movieId", "title", "genres"], movies),
        ("ratings.csv", ["userId", "movieId", "rating", "timestamp"], ratings),
        ("tags.csv", ["userId", "movieId", "tag", "timestamp"], tags),
    ):
        with (directory / name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return directory


TINY_MOVIES = [
    (1, "Toy Story (1995)", "Adventure|Animation|Children|Comedy|Fantasy"),
    (2, "Jumanji (1995)", "Adventure|Children|Fantasy"),
    (3, "Heat (1995)", "Action|Crime|Thriller"),
    (4, "Titanic (1997)", "Drama|Romance"),
    (5, "Notebook, The (2004)", "Drama|Romance"),
    (6, "Batman Begins (2005)", "Action|Crime|IMAX"),
    (7, "Dark Knight, The (2008)", "Action|Crime|Drama|IMAX"),
    (8, "Hamlet (2000)", "Drama"),
    (9, "Hamlet (2000)", "Drama|Thriller"),
    (10, "Unrated Oddity (2011)", "(no genres listed)"),
]

# user -> {movie: rating}; movie 10 is never rated.
TINY_RATINGS = {
    1: {1: 4.0, 2: 3.5, 3: 4.5, 4: 2.0, 5: 2.5, 6: 5.0, 7: 5.0, 8: 3.0},
    2: {1: 4.5, 2: 4.0, 3: 3.0, 4: 4.5, 5: 5.0, 6: 3.5, 7: 4.0, 9: 2.0},
    3: {1: 3.0, 2: 2.5, 3: 4.0, 4: 1.5, 5: 1.0, 6: 4.5, 7: 4.5},
    4: {1: 5.0, 2: 4.5, 4: 4.0, 5: 4.0, 6: 2.5, 8: 3.5, 9: 4.0},
    5: {2: 3.0, 3: 5.0, 4: 3.0, 5: 3.5, 6: 4.0, 7: 4.5, 8: 2.5},
    6: {1: 2.0, 3: 3.5, 4: 5.0, 5: 4.5, 7: 3.0, 9: 3.0},
}

TINY_TAGS = [
    (1, 6, "batman", 1),
    (2, 7, "Batman", 2),
    (3, 7, "joker", 3),
    (4, 4, "romance", 4),
    (5, 3, "  ", 5),
]


def tiny_rows():
    ratings = [(u, m, r, 1000 + u) for u, row in TINY_RATINGS.items() for m, r in sorted(row.items())]
    return TINY_MOVIES, ratings, TINY_TAGS


@pytest.fixture
def tiny_dir(tmp_path) -> Path:
    return write_csvs(tmp_path / "tiny", *tiny_rows())


@pytest.fixture
def tiny(tiny_dir):
    return load_dataset(tiny_dir, m=2)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        parts = ACCEPTANCE_LINES[number]
        ok = all(p for _, p in parts)
        detail = "; ".join(f"{name}={'ok' if p else 'FAIL'}" for name, p in parts)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
