"""TF-IDF document vectors for genre strings and per-movie metadata."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .matrix import SparseMatrix, SparseVector, stack_rows

_TOKEN = re.compile(r"[^\W_]{2,}")


def tokenize(text: str) -> list[str]:
    """Lowercased maximal alphanumeric runs of length >= 2."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class MetadataDoc:
    movie: int
    text: str


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: Mapping[str, int]
    idf: np.ndarray
    n_docs: int
    sublinear_tf: bool = False

    @property
    def n_features(self) -> int:
        return len(self.vocabulary)

    def tokens(self) -> list[str]:
        out = [""] * len(self.vocabulary)
        for tok, i in self.vocabulary.items():
            out[i] = tok
        return out


def _text(doc) -> str:
    return doc.text if isinstance(doc, MetadataDoc) else str(doc)


def fit(corpus: Sequence[MetadataDoc | str], sublinear_tf: bool = False) -> TfidfModel:
    """Smoothed idf: ln((1 + n_docs) / (1 + df)) + 1, vocabulary in sorted-token order."""
    if not corpus:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    df: Counter[str] = Counter()
    for doc in corpus:
        df.update(set(tokenize(_text(doc))))
    if not df:
        raise ValueError("corpus contains no tokens")
    vocab = {tok: i for i, tok in enumerate(sorted(df))}
    n = len(corpus)
    idf = np.array([math.log((1 + n) / (1 + df[tok])) + 1.0 for tok in sorted(df)])
    return TfidfModel(vocab, idf, n, sublinear_tf)


def transform(model: TfidfModel, doc: MetadataDoc | str) -> SparseVector:
    """count × idf, L2-normalized; out-of-vocabulary tokens are ignored."""
    vocab = model.vocabulary
    counts = Counter(vocab[t] for t in tokenize(_text(doc)) if t in vocab)
    if not counts:
        return SparseVector(np.zeros(0, dtype=np.int64), np.zeros(0))
    keys = sorted(counts)
    idx = np.array(keys, dtype=np.int64)
    tf = np.array([counts[i] for i in keys], dtype=np.float64)
    if model.sublinear_tf:
        tf = 1.0 + np.log(tf)
    w = tf * model.idf[idx]
    return SparseVector(idx, w / math.sqrt(float(w @ w)))


def transform_all(model: TfidfModel, docs: Iterable[MetadataDoc | str], row_labels=None) -> SparseMatrix:
    rows = [transform(model, d) for d in docs]
    return stack_rows(rows, model.n_features, row_labels)


def fit_transform(docs: Sequence[MetadataDoc], sublinear_tf: bool = False) -> tuple[TfidfModel, SparseMatrix]:
    model = fit(docs, sublinear_tf)
    labels = [d.movie for d in docs] if docs and isinstance(docs[0], MetadataDoc) else None
    return model, transform_all(model, docs, labels)


def genre_doc(dataset: Dataset, movie: int) -> MetadataDoc:
    return MetadataDoc(movie, " ".join(dataset.movies[movie].genres))


def metadata_doc(dataset: Dataset, movie: int) -> MetadataDoc:
    """Genres, then the movie's distinct tags in sorted order, then the cleaned title."""
    mv = dataset.movies[movie]
    parts = [" ".join(mv.genres), " ".join(dataset.tags_by_movie.get(movie, ())), mv.clean_title]
    return MetadataDoc(movie, " ".join(p for p in parts if p))


def save_model(model: TfidfModel, path: str | Path) -> None:
    """Text artifact: header line, then ``token<TAB>index<TAB>idf`` per token."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# tfidf n_docs={model.n_docs} sublinear_tf={int(model.sublinear_tf)}\n")
        for tok in sorted(model.vocabulary, key=model.vocabulary.__getitem__):
            i = model.vocabulary[tok]
            fh.write(f"{tok}\t{i}\t{float(model.idf[i])!r}\n")


def load_model(path: str | Path) -> TfidfModel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["#", "tfidf"]:
            raise ValueError(f"{path}: not a TF-IDF artifact")
        meta = dict(kv.split("=") for kv in header[2:])
        vocab: dict[str, int] = {}
        idf: list[float] = []
        for line in fh:
            tok, i, value = line.rstrip("\n").split("\t")
            if int(i) != len(idf):
                raise ValueError(f"{path}: token indices are not dense")
            vocab[tok] = int(i)
            idf.append(float(value))
    return TfidfModel(vocab, np.array(idf), int(meta["n_docs"]), bool(int(meta.get("sublinear_tf", 0))))
