"""The eight recommendation methods.

Every recommender is a pure function of an immutable :class:`~movierec.data.Dataset`
plus parameters; derived structures (rating pivot, TF-IDF matrices, latent
factors) are memoised per dataset object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import text
from .data import Dataset, RatingRecord
from .matrix import (
    DEFAULT_SEED,
    SCORE_DECIMALS,
    DenseMatrix,
    SparseMatrix,
    SvdFactors,
    cosine_to_rows,
    inertia_curve,
    kmeans,
    knn_brute,
    pearson_pairwise,
    rank_neighbors,
    sparse_row_cosines,
    truncated_svd,
)

log = logging.getLogger(__name__)

VALUE_KINDS = (
    "weighted_score",
    "pearson_r",
    "cosine_sim",
    "knn_distance",
    "latent_cosine",
    "predicted_rating",
)
RATING_MIN, RATING_MAX = 0.5, 5.0


class RecommenderError(ValueError):
    """Bad user input: unknown title, ambiguous title, ineligible movie, ..."""


class UnknownTitleError(RecommenderError):
    pass


class AmbiguousTitleError(RecommenderError):
    def __init__(self, title: str, candidates: Sequence[tuple[int, str]]):
        self.candidates = list(candidates)
        listing = "; ".join(f"{mid}: {t}" for mid, t in self.candidates)
        super().__init__(f"title {title!r} is ambiguous ({listing}); pass --id instead")


@dataclass(frozen=True)
class ScoredMovie:
    movie: int
    title: str
    value: float
    value_kind: str

    def as_dict(self) -> dict:
        return {"movie": self.movie, "title": self.title, "value": self.value, "value_kind": self.value_kind}


class Recommendations(list):
    """A ranked list of :class:`ScoredMovie` with an optional condition flag.

    Flags: ``"unknown-genre"``, ``"no-genre-signal"``, ``"cold-start"``.
    """

    def __init__(self, items: Iterable[ScoredMovie] = (), flag: str | None = None):
        super().__init__(items)
        self.flag = flag


def _scored(dataset: Dataset, neighbors, kind: str) -> list[ScoredMovie]:
    return [ScoredMovie(nb.movie, dataset.movies[nb.movie].title, nb.value, kind) for nb in neighbors]


# --------------------------------------------------------------------------
# title resolution and shared structures


@lru_cache(maxsize=8)
def _title_index(dataset: Dataset) -> tuple[dict[str, list[int]], dict[str, list[int]]]:
    exact: dict[str, list[int]] = {}
    folded: dict[str, list[int]] = {}
    for mid in sorted(dataset.movies):
        t = dataset.movies[mid].title
        exact.setdefault(t, []).append(mid)
        folded.setdefault(t.casefold(), []).append(mid)
    return exact, folded


def resolve_title(dataset: Dataset, title: str) -> int:
    """Exact title match, else a unique case-insensitive match."""
    exact, folded = _title_index(dataset)
    hits = exact.get(title) or folded.get(title.casefold(), [])
    if not hits:
        raise UnknownTitleError(f"unknown title {title!r}; titles include the year, e.g. 'Heat (1995)'")
    if len(hits) > 1:
        raise AmbiguousTitleError(title, [(m, dataset.movies[m].title) for m in hits])
    return hits[0]


def resolve_movie(dataset: Dataset, title: str | None = None, movie_id: int | None = None) -> int:
    if movie_id is not None:
        if movie_id not in dataset.movies:
            raise UnknownTitleError(f"unknown movie id {movie_id}")
        return movie_id
    if title is None:
        raise RecommenderError("either a title or a movie id is required")
    return resolve_title(dataset, title)


@lru_cache(maxsize=8)
def rating_matrix(dataset: Dataset) -> SparseMatrix:
    """item × user pivot over rated movies; absent ratings are implicit zeros."""
    users, movies, values = dataset.rating_arrays
    row_labels = np.asarray(dataset.rated_movies, dtype=np.int64)
    col_labels = np.asarray(dataset.users, dtype=np.int64)
    rows = np.searchsorted(row_labels, movies)
    cols = np.searchsorted(col_labels, users)
    return SparseMatrix.from_triplets(
        rows, cols, values, (len(row_labels), len(col_labels)), row_labels, col_labels
    )


def _matrix_row(mat: SparseMatrix, movie: int, what: str) -> int:
    try:
        return mat.row_index(movie)
    except KeyError:
        raise RecommenderError(f"movie {movie} has no row in the {what}") from None


# --------------------------------------------------------------------------
# genre / weighted score


def weighted_score(v: float, m: float, R: float, C: float) -> float:
    """v/(v+m)·R + m/(v+m)·C."""
    return v / (v + m) * R + m / (v + m) * C


def known_genres(dataset: Dataset) -> list[str]:
    return sorted({g for mv in dataset.movies.values() for g in mv.genres})


def _weighted_ranking(dataset: Dataset, movies: Iterable[int], n: int) -> list[ScoredMovie]:
    ids = np.array(list(movies), dtype=np.int64)
    scores = np.array(
        [weighted_score(dataset.stats[m].v, dataset.m, dataset.stats[m].R, dataset.C) for m in ids]
    )
    return _scored(dataset, rank_neighbors(ids, scores, n, descending=True), "weighted_score")


def recommend_by_genre(dataset: Dataset, genre: str, n: int = 5) -> Recommendations:
    wanted = {g.casefold(): g for g in known_genres(dataset)}.get(genre.casefold())
    if wanted is None:
        return Recommendations(flag="unknown-genre")
    movies = [m for m in dataset.eligible if wanted in dataset.movies[m].genres]
    return Recommendations(_weighted_ranking(dataset, movies, n))


# --------------------------------------------------------------------------
# Pearson on the pairwise-complete pivot


def recommend_pearson(dataset: Dataset, movie: int, n: int = 5, min_overlap: int = 1) -> Recommendations:
    mat = rating_matrix(dataset)
    qi = _matrix_row(mat, movie, "rating matrix")
    query = mat.row(qi)
    if len(query.indices) < 2:
        raise RecommenderError(
            f"{dataset.movies[movie].title!r} has fewer than 2 ratings; correlation is undefined"
        )
    indicator = np.zeros(mat.n_cols)
    indicator[query.indices] = 1.0
    overlap = (mat.csr != 0).astype(np.float64) @ indicator
    ids, rs = [], []
    for j in np.flatnonzero(overlap >= max(min_overlap, 2)):
        if j == qi:
            continue
        r = pearson_pairwise(query, mat.row(int(j)), min_overlap)
        if r is not None:
            ids.append(int(mat.row_labels[j]))
            rs.append(r)
    return Recommendations(_scored(dataset, rank_neighbors(np.array(ids, dtype=np.int64), np.array(rs), n, True), "pearson_r"))


# --------------------------------------------------------------------------
# TF-IDF genre cosine and clustering


@lru_cache(maxsize=8)
def genre_tfidf(dataset: Dataset) -> tuple[text.TfidfModel, SparseMatrix]:
    """TF-IDF over the genre strings of eligible movies (rows in ``dataset.eligible`` order)."""
    docs = [text.genre_doc(dataset, m) for m in dataset.eligible]
    return text.fit_transform(docs)


def recommend_cosine_genre(dataset: Dataset, movie: int, n: int = 5) -> Recommendations:
    if not dataset.is_eligible(movie):
        raise RecommenderError(
            f"{dataset.movies[movie].title!r} has fewer than m={dataset.m} ratings and is not eligible"
        )
    _, mat = genre_tfidf(dataset)
    qi = mat.row_index(movie)
    if mat.row(qi).indices.size == 0:
        return Recommendations(flag="no-genre-signal")
    sims = sparse_row_cosines(mat, qi)
    keep = np.arange(mat.n_rows) != qi
    ranked = rank_neighbors(mat.row_labels[keep], sims[keep], n, descending=True)
    return Recommendations(_scored(dataset, ranked, "cosine_sim"))


@dataclass(frozen=True)
class ClusterReport:
    k: int
    assignments: Mapping[int, int]
    inertia: float
    inertia_curve: list[tuple[int, float]]

    def members(self, cluster: int) -> list[int]:
        return [m for m, c in self.assignments.items() if c == cluster]


def cluster_genres(
    dataset: Dataset, k: int = 6, seed: int = DEFAULT_SEED, k_max: int = 9
) -> ClusterReport:
    _, mat = genre_tfidf(dataset)
    if not 1 <= k <= mat.n_rows:
        raise RecommenderError(f"k must lie in [1, {mat.n_rows}] (number of eligible movies), got {k}")
    x = mat.to_dense()
    result = kmeans(x, k, seed=seed)
    curve = inertia_curve(x, min(k_max, mat.n_rows), seed=seed) if k_max >= 1 else []
    assignments = {int(m): int(c) for m, c in zip(mat.row_labels, result.assignments)}
    return ClusterReport(k, assignments, result.inertia, curve)


# --------------------------------------------------------------------------
# item KNN and latent-factor recommenders


def recommend_knn_item(dataset: Dataset, movie: int, k: int = 5) -> Recommendations:
    mat = rating_matrix(dataset)
    qi = _matrix_row(mat, movie, "rating matrix")
    return Recommendations(_scored(dataset, knn_brute(mat, qi, k), "knn_distance"))


def content_corpus(dataset: Dataset) -> list[text.MetadataDoc]:
    """Metadata documents for every movie that has a row in the rating matrix."""
    return [text.metadata_doc(dataset, m) for m in dataset.rated_movies]


def clamp_components(k: int, n_rows: int, n_cols: int) -> int:
    return max(1, min(k, n_rows, n_cols))


def content_latent_factors(
    dataset: Dataset, k_components: int = 1000, seed: int = DEFAULT_SEED
) -> tuple[text.TfidfModel, SvdFactors]:
    docs = content_corpus(dataset)
    model, mat = text.fit_transform(docs)
    k = clamp_components(k_components, mat.n_rows, mat.n_cols)
    if k != k_components:
        log.info("content latent: clamping %d components to %d", k_components, k)
    return model, truncated_svd(mat, k, seed=seed)


def collab_latent_factors(dataset: Dataset, k_components: int = 100, seed: int = DEFAULT_SEED) -> SvdFactors:
    mat = rating_matrix(dataset)
    k = clamp_components(k_components, mat.n_rows, mat.n_cols)
    if k != k_components:
        log.info("collaborative latent: clamping %d components to %d", k_components, k)
    return truncated_svd(mat, k, seed=seed)


def latent_neighbors(dataset: Dataset, latent: DenseMatrix, movie: int, n: int) -> list[ScoredMovie]:
    hits = np.flatnonzero(latent.row_labels == movie)
    if len(hits) == 0:
        raise RecommenderError(f"{dataset.movies[movie].title!r} has no row in the latent matrix")
    qi = int(hits[0])
    sims = cosine_to_rows(latent, latent.values[qi])
    keep = np.arange(latent.n_rows) != qi
    ranked = rank_neighbors(latent.row_labels[keep], sims[keep], n, descending=True)
    return _scored(dataset, ranked, "latent_cosine")


def recommend_content_latent(
    dataset: Dataset,
    movie: int,
    n: int = 5,
    k_components: int = 1000,
    seed: int = DEFAULT_SEED,
    factors: SvdFactors | None = None,
) -> Recommendations:
    if factors is None:
        _, factors = content_latent_factors(dataset, k_components, seed)
    return Recommendations(latent_neighbors(dataset, factors.latent, movie, n))


def recommend_collab_latent(
    dataset: Dataset,
    movie: int,
    n: int = 5,
    k_components: int = 100,
    seed: int = DEFAULT_SEED,
    factors: SvdFactors | None = None,
) -> Recommendations:
    if factors is None:
        factors = collab_latent_factors(dataset, k_components, seed)
    return Recommendations(latent_neighbors(dataset, factors.latent, movie, n))


# --------------------------------------------------------------------------
# neighbourhood rating predictor


SIMILARITIES = ("msd", "cosine", "pearson")
MODES = ("user", "item")


@dataclass(frozen=True)
class PredictorConfig:
    mode: str = "user"
    similarity: str = "msd"
    k: int = 40
    min_k: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        if not self.k >= self.min_k >= 1:
            raise ValueError(f"need k >= min_k >= 1, got k={self.k}, min_k={self.min_k}")

    def as_dict(self) -> dict:
        return {"mode": self.mode, "similarity": self.similarity, "k": self.k, "min_k": self.min_k}


@dataclass(frozen=True)
class Prediction:
    user: int
    movie: int
    estimate: float
    actual_k: int
    impossible: bool = False
    reason: str | None = None  # "unknown-user", "unknown-movie", "not-enough-neighbors"


def _similarity_block(
    rows: sp.csr_matrix, brows: sp.csr_matrix, r: sp.csr_matrix, b: sp.csr_matrix, r2: sp.csr_matrix, measure: str
) -> np.ndarray:
    """Similarities between ``rows`` and every row of ``r``, over co-rated columns.

    NaN marks pairs without a co-rated column.
    """
    n = (brows @ b.T).toarray()
    xy = (rows @ r.T).toarray()
    s2a = (rows.multiply(rows) @ b.T).toarray()  # Σ x² over common columns
    s2b = (brows @ r2.T).toarray()  # Σ y² over common columns
    with np.errstate(divide="ignore", invalid="ignore"):
        if measure == "msd":
            msd = np.maximum(s2a + s2b - 2.0 * xy, 0.0) / n
            sim = 1.0 / (msd + 1.0)
        elif measure == "cosine":
            denom = np.sqrt(s2a * s2b)
            sim = np.where(denom > 0, xy / denom, 0.0)
        else:
            s1a = (rows @ b.T).toarray()
            s1b = (brows @ r.T).toarray()
            cov = xy - s1a * s1b / n
            va = s2a - s1a * s1a / n
            vb = s2b - s1b * s1b / n
            tol = 1e-12 * np.maximum(s2a, 1.0)
            ok = (va > tol) & (vb > 1e-12 * np.maximum(s2b, 1.0))
            sim = np.where(ok, cov / np.sqrt(np.where(ok, va * vb, 1.0)), 0.0)
    sim = np.clip(sim, -1.0, 1.0)
    sim[n == 0] = np.nan
    return sim


class PredictorModel:
    """KNN-basic rating predictor (user- or item-based).

    The entity matrix has one row per user (user mode) or per movie (item
    mode); similarities are computed over co-rated columns only.
    """

    FULL_MATRIX_LIMIT = 4000

    def __init__(self, config: PredictorConfig, users: np.ndarray, movies: np.ndarray, ratings: np.ndarray):
        self.config = config
        if len(ratings) == 0:
            raise ValueError("cannot fit a predictor on zero ratings")
        self.global_mean = float(np.mean(ratings))
        self.user_ids = np.unique(users)
        self.movie_ids = np.unique(movies)
        ui = np.searchsorted(self.user_ids, users)
        mi = np.searchsorted(self.movie_ids, movies)
        shape = (len(self.user_ids), len(self.movie_ids))
        self._ui = sp.csr_matrix((ratings.astype(np.float64), (ui, mi)), shape=shape)
        self._ui.sort_indices()
        self._iu = self._ui.T.tocsr()
        self._iu.sort_indices()
        ent = self._ui if config.mode == "user" else self._iu
        self._ent = ent
        self._ent_b = (ent != 0).astype(np.float64).tocsr()
        self._ent_r2 = ent.multiply(ent).tocsr()
        self._sim_rows: dict[int, np.ndarray] = {}
        self._sim_full: np.ndarray | None = None
        if ent.shape[0] <= self.FULL_MATRIX_LIMIT:
            self._sim_full = _similarity_block(ent, self._ent_b, ent, self._ent_b, self._ent_r2, config.similarity)

    def similarity_row(self, entity: int) -> np.ndarray:
        """Similarities of entity index ``entity`` to every entity (NaN = undefined)."""
        if self._sim_full is not None:
            return self._sim_full[entity]
        row = self._sim_rows.get(entity)
        if row is None:
            row = _similarity_block(
                self._ent[entity], self._ent_b[entity], self._ent, self._ent_b, self._ent_r2, self.config.similarity
            )[0]
            self._sim_rows[entity] = row
        return row

    def similarity(self, a: int, b: int) -> float | None:
        """Similarity between two user ids (user mode) or movie ids (item mode)."""
        ids = self.user_ids if self.config.mode == "user" else self.movie_ids
        ia, ib = np.searchsorted(ids, a), np.searchsorted(ids, b)
        if ia >= len(ids) or ids[ia] != a or ib >= len(ids) or ids[ib] != b:
            return None
        s = self.similarity_row(int(ia))[ib]
        return None if np.isnan(s) else float(s)

    def neighbors(self, entity_id: int) -> list[tuple[int, float]]:
        """All defined neighbours of an entity id, most similar first."""
        ids = self.user_ids if self.config.mode == "user" else self.movie_ids
        i = int(np.searchsorted(ids, entity_id))
        if i >= len(ids) or ids[i] != entity_id:
            return []
        sims = self.similarity_row(i)
        ok = ~np.isnan(sims)
        ok[i] = False
        ranked = rank_neighbors(ids[ok], sims[ok], int(ok.sum()), descending=True)
        return [(nb.movie, nb.value) for nb in ranked]

    def _index(self, user: int, movie: int) -> tuple[int | None, int | None]:
        u = int(np.searchsorted(self.user_ids, user))
        m = int(np.searchsorted(self.movie_ids, movie))
        u_ok = u < len(self.user_ids) and self.user_ids[u] == user
        m_ok = m < len(self.movie_ids) and self.movie_ids[m] == movie
        return (u if u_ok else None), (m if m_ok else None)

    def rated_by(self, user: int) -> np.ndarray:
        u, _ = self._index(user, -1)
        if u is None:
            return np.zeros(0, dtype=np.int64)
        lo, hi = self._ui.indptr[u], self._ui.indptr[u + 1]
        return self.movie_ids[self._ui.indices[lo:hi]]

    def _fallback(self, user: int, movie: int, reason: str) -> Prediction:
        return Prediction(user, movie, self.global_mean, 0, True, reason)

    def predict(self, user: int, movie: int) -> Prediction:
        u, m = self._index(user, movie)
        if u is None:
            return self._fallback(user, movie, "unknown-user")
        if m is None:
            return self._fallback(user, movie, "unknown-movie")
        if self.config.mode == "user":
            target, other = u, self._iu  # neighbours: users who rated the movie
            col = m
        else:
            target, other = m, self._ui  # neighbours: movies the user rated
            col = u
        lo, hi = other.indptr[col], other.indptr[col + 1]
        cand = other.indices[lo:hi]
        vals = other.data[lo:hi]
        keep = cand != target
        cand, vals = cand[keep], vals[keep]
        sims = self.similarity_row(target)[cand]
        ok = ~np.isnan(sims)
        cand, vals, sims = cand[ok], vals[ok], sims[ok]
        if len(cand) < self.config.min_k:
            return self._fallback(user, movie, "not-enough-neighbors")
        order = np.lexsort((cand, -np.round(sims, SCORE_DECIMALS)))[: self.config.k]
        sims, vals = sims[order], vals[order]
        denom = float(np.abs(sims).sum())
        if denom == 0.0:
            return self._fallback(user, movie, "not-enough-neighbors")
        est = float(sims @ vals) / denom
        return Prediction(user, movie, min(RATING_MAX, max(RATING_MIN, est)), len(order))


def _rating_columns(ratings) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(ratings, Dataset):
        return ratings.rating_arrays
    ratings = list(ratings)
    users = np.array([r.user for r in ratings], dtype=np.int64)
    movies = np.array([r.movie for r in ratings], dtype=np.int64)
    values = np.array([r.rating for r in ratings], dtype=np.float64)
    return users, movies, values


def fit_predictor(
    ratings: Dataset | Sequence[RatingRecord], config: PredictorConfig | None = None
) -> PredictorModel:
    return PredictorModel(config or PredictorConfig(), *_rating_columns(ratings))


def predict_rating(model: PredictorModel, user: int, movie: int) -> Prediction:
    return model.predict(user, movie)


def top_n_for_user(model: PredictorModel, dataset: Dataset, user: int, n: int = 5) -> Recommendations:
    """Highest predicted ratings among movies the user has not rated.

    Unknown users fall back to the weighted-score ranking (flag ``cold-start``).
    """
    u, _ = model._index(user, -1)
    if u is None:
        return Recommendations(_weighted_ranking(dataset, dataset.eligible, n), flag="cold-start")
    seen = set(model.rated_by(user).tolist())
    cand = np.array([m for m in model.movie_ids if int(m) not in seen and int(m) in dataset.movies], dtype=np.int64)
    preds = np.array([model.predict(user, int(m)).estimate for m in cand])
    ranked = rank_neighbors(cand, preds, n, descending=True)
    return Recommendations(_scored(dataset, ranked, "predicted_rating"))
