import csv
from collections import Counter, defaultdict

import pytest
from hypothesis import given
from hypothesis import strategies as st

from movierec.data import (
    DataError,
    RatingRecord,
    build_dataset,
    clean_title,
    compute_eligibility,
    load_dataset,
    load_movies,
    load_ratings,
    load_tags,
    parse_genres,
    write_dataset,
)

from .conftest import write_csvs


# --- movies -------------------------------------------------------------


def test_movie_row_parses_title_and_genres(tmp_path):
    write_csvs(tmp_path, [(2, "Jumanji (1995)", "Adventure|Children|Fantasy")], [])
    mv = load_movies(tmp_path / "movies.csv")[2]
    assert mv.title == "Jumanji (1995)"
    assert mv.genres == ("Adventure", "Children", "Fantasy")
    assert mv.clean_title == "jumanji 1995"


def test_no_genres_listed_is_empty(tmp_path):
    write_csvs(tmp_path, [(5, "Mystery (2000)", "(no genres listed)")], [])
    assert load_movies(tmp_path / "movies.csv")[5].genres == ()


def test_quoted_comma_in_title(tmp_path):
    write_csvs(tmp_path, [(11, "American President, The (1995)", "Comedy|Drama|Romance")], [])
    assert load_movies(tmp_path / "movies.csv")[11].title == "American President, The (1995)"


def test_parse_genres_drops_duplicates_and_blanks():
    assert parse_genres("Drama||Drama|Romance") == ("Drama", "Romance")


def test_duplicate_movie_id_reports_line(tmp_path):
    write_csvs(tmp_path, [(1, "A (2000)", "Drama"), (1, "B (2001)", "Drama")], [])
    with pytest.raises(DataError, match=r"movies\.csv:3: duplicate movieId 1"):
        load_movies(tmp_path / "movies.csv")


def test_wrong_column_count_reports_line(tmp_path):
    (tmp_path / "movies.csv").write_text("movieId,title,genres\n1,A (2000),Drama\n2,B (2001)\n")
    with pytest.raises(DataError, match=r":3: expected 3 columns, got 2"):
        load_movies(tmp_path / "movies.csv")


def test_missing_file_and_bad_header(tmp_path):
    with pytest.raises(DataError, match="file not found"):
        load_movies(tmp_path / "nope.csv")
    (tmp_path / "movies.csv").write_text("id,name,genres\n")
    with pytest.raises(DataError, match="header"):
        load_movies(tmp_path / "movies.csv")


# --- ratings ------------------------------------------------------------


def test_rating_row(tmp_path):
    write_csvs(tmp_path, [], [(1, 31, "2.5", 1260759144)])
    assert load_ratings(tmp_path / "ratings.csv") == [RatingRecord(1, 31, 2.5, 1260759144)]


def test_header_only_ratings_is_empty(tmp_path):
    write_csvs(tmp_path, [], [])
    assert load_ratings(tmp_path / "ratings.csv") == []


@pytest.mark.parametrize("bad", ["0.0", "5.5", "3.3", "abc", "nan"])
def test_off_grid_rating_rejected_with_line(tmp_path, bad):
    write_csvs(tmp_path, [], [(1, 1, "4.0", 0), (1, 2, bad, 0)])
    with pytest.raises(DataError, match=r"ratings\.csv:3:"):
        load_ratings(tmp_path / "ratings.csv")


def test_duplicate_user_movie_pair_rejected(tmp_path):
    write_csvs(tmp_path, [], [(1, 1, "4.0", 0), (1, 1, "3.0", 5)])
    with pytest.raises(DataError, match="duplicate rating"):
        load_ratings(tmp_path / "ratings.csv")


def test_rating_for_unknown_movie_rejected(tmp_path):
    write_csvs(tmp_path, [(1, "A (2000)", "Drama")], [(1, 2, "4.0", 0)])
    with pytest.raises(DataError, match="unknown movie 2"):
        load_dataset(tmp_path)


# --- tags ---------------------------------------------------------------


def test_tags_normalised_and_empty_skipped(tmp_path):
    write_csvs(tmp_path, [], [], [(1, 1, "  Funny ", 9), (2, 1, "   ", 9)])
    tags, skipped = load_tags(tmp_path / "tags.csv")
    assert [t.tag for t in tags] == ["funny"]
    assert skipped == 1


# --- clean_title --------------------------------------------------------


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("Toy Story (1995)", "toy story 1995"),
        ("Se7en (a.k.a. Seven) (1995)", "se7en a k a seven 1995"),
        ("Amélie (2001)", "am lie 2001"),
        ("  --  ", ""),
    ],
)
def test_clean_title_examples(raw, expected):
    assert clean_title(raw) == expected


@given(st.text())
def test_clean_title_idempotent_and_charset(s):
    once = clean_title(s)
    assert clean_title(once) == once
    assert set(once) <= set("abcdefghijklmnopqrstuvwxyz0123456789 ")
    assert "  " not in once


# --- eligibility --------------------------------------------------------


def _records(counts):
    out, user = [], 1
    for movie, (n, rating) in counts.items():
        for _ in range(n):
            out.append(RatingRecord(user, movie, rating, 0))
            user += 1
    return out


def test_eligibility_boundary():
    stats, eligible, _ = compute_eligibility(_records({1: (7, 4.0), 2: (6, 5.0), 3: (8, 3.0)}), m=7)
    assert eligible == (1, 3)
    assert stats[2].v == 6 and stats[2].R == 5.0


def test_prior_modes():
    recs = _records({1: (1, 5.0), 2: (3, 1.0)})
    assert compute_eligibility(recs, 1, "movie")[2] == pytest.approx(3.0)
    assert compute_eligibility(recs, 1, "global")[2] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        compute_eligibility(recs, 1, "median")


def test_no_ratings_is_a_data_error():
    with pytest.raises(DataError):
        compute_eligibility([], 7)


ratings_lists = st.dictionaries(
    st.integers(1, 30),
    st.tuples(st.integers(1, 12), st.integers(1, 10).map(lambda h: h / 2)),
    min_size=1,
    max_size=12,
).map(_records)


@given(ratings_lists, st.integers(1, 12), st.integers(0, 5))
def test_eligible_set_shrinks_as_m_grows(recs, m, extra):
    small = set(compute_eligibility(recs, m)[1])
    large = set(compute_eligibility(recs, m + extra)[1])
    assert large <= small


@given(ratings_lists, st.sampled_from(["movie", "global"]))
def test_prior_mean_within_rating_range(recs, prior):
    _, _, C = compute_eligibility(recs, 1, prior)
    values = [r.rating for r in recs]
    assert min(values) - 1e-12 <= C <= max(values) + 1e-12


# --- full corpus --------------------------------------------------------


def test_counts_match_independent_csv_pass(dataset, data_dir):
    counts, users = Counter(), set()
    with open(data_dir / "ratings.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        counts[int(row["movieId"])] += 1
        users.add(int(row["userId"]))
    with open(data_dir / "movies.csv", newline="") as fh:
        n_movies = sum(1 for _ in csv.DictReader(fh))
    assert len(dataset.ratings) == len(rows)
    assert len(dataset.movies) == n_movies
    assert len(dataset.users) == len(users)
    assert len(dataset.eligible) == sum(1 for v in counts.values() if v >= 7)


def test_prior_mean_matches_independent_pass(dataset, data_dir):
    sums, counts = defaultdict(float), Counter()
    with open(data_dir / "ratings.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            sums[row["movieId"]] += float(row["rating"])
            counts[row["movieId"]] += 1
    means = [sums[k] / counts[k] for k in counts]
    assert dataset.C == pytest.approx(sum(means) / len(means), abs=1e-12)
    assert dataset.global_mean == pytest.approx(sum(sums.values()) / sum(counts.values()), abs=1e-12)


def test_round_trip(tiny, tmp_path):
    write_dataset(tiny, tmp_path / "copy")
    again = load_dataset(tmp_path / "copy", m=tiny.m)
    assert again.movies == tiny.movies
    assert again.ratings == tiny.ratings
    assert again.tags == tiny.tags
    assert again.eligible == tiny.eligible


def test_tags_by_movie_dedupes(tiny):
    assert tiny.tags_by_movie[7] == ["batman", "joker"]
    assert tiny.skipped_tags == 1


def test_build_dataset_summary(tiny):
    s = tiny.summary()
    assert s["movies"] == 10 and s["users"] == 6 and s["rated_movies"] == 9
    assert tiny.is_eligible(1) and not tiny.is_eligible(10)
    assert build_dataset(tiny.movies, tiny.ratings, m=100).eligible == ()
