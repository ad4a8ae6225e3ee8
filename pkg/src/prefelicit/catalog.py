"""Item catalog, user priors/ground truth, and tag datasets with file I/O.

File formats are newline-delimited JSON, 64-bit floats, opaque UTF-8 ids.
All containers here are immutable after load and safe to share by reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .util import check_lower_triangular


class CatalogError(ValueError):
    """Malformed catalog/tag/prior input."""


@dataclass(frozen=True)
class ItemCatalog:
    """Embeddings for the full item set; the discrete action space for slates.

    ``max_norm`` caches the exact maximum Euclidean norm over items (the
    norm-ball radius used by target-item computations).
    """

    item_ids: tuple[str, ...]
    embeddings: np.ndarray  # (n_items, d) float64
    max_norm: float
    meta: tuple[dict, ...] = ()
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_items(
        cls, item_ids: list[str], embeddings: np.ndarray, meta: list[dict] | None = None
    ) -> "ItemCatalog":
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] == 0:
            raise CatalogError("empty catalog")
        if embeddings.shape[1] < 1:
            raise CatalogError("embedding dimension must be >= 1")
        if len(item_ids) != embeddings.shape[0]:
            raise CatalogError("item_ids and embeddings disagree in length")
        if len(set(item_ids)) != len(item_ids):
            seen, dupes = set(), set()
            for i in item_ids:
                (dupes if i in seen else seen).add(i)
            raise CatalogError(f"duplicate item id(s): {sorted(dupes)[:5]}")
        max_norm = float(np.max(np.linalg.norm(embeddings, axis=1)))
        meta_t = tuple(meta) if meta is not None else tuple({} for _ in item_ids)
        cat = cls(tuple(item_ids), embeddings, max_norm, meta_t)
        object.__setattr__(cat, "_index", {iid: k for k, iid in enumerate(item_ids)})
        return cat

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.item_ids)

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise CatalogError(f"unknown item id: {item_id!r}") from None

    def embedding(self, item_id: str) -> np.ndarray:
        return self.embeddings[self.index_of(item_id)]

    def slate_embeddings(self, slate: tuple[str, ...]) -> np.ndarray:
        return self.embeddings[[self.index_of(i) for i in slate]]


@dataclass(frozen=True)
class GaussianUserPrior:
    """Gaussian belief over a user's utility vector.

    ``scale`` is lower-triangular with positive diagonal; the covariance is
    ``scale.T @ scale``. Draws are ``mean + eps @ scale``.
    """

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = check_lower_triangular(np.asarray(self.scale, dtype=np.float64))
        if scale.shape[0] != mean.shape[0]:
            raise CatalogError("prior mean and scale dimension mismatch")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def cov(self) -> np.ndarray:
        return self.scale.T @ self.scale

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        eps = rng.standard_normal((n, self.dim))
        return self.mean + eps @ self.scale


@dataclass(frozen=True)
class TrueUser:
    """Ground-truth user used by the simulator to generate responses."""

    utility: np.ndarray
    response_noise_map: dict[str, float]
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "utility", np.asarray(self.utility, dtype=np.float64))
        if self.temperature <= 0:
            raise CatalogError("temperature must be positive")
        for tag, sigma in self.response_noise_map.items():
            if sigma <= 0:
                raise CatalogError(f"response noise for tag {tag!r} must be positive")

    def noise_for(self, tag: str) -> float:
        try:
            return self.response_noise_map[tag]
        except KeyError:
            raise CatalogError(f"no response noise configured for tag {tag!r}") from None


@dataclass(frozen=True)
class TagDataset:
    """Binary user-item-tag applications; the evidence for soft attributes."""

    records: tuple[tuple[str, str, str], ...]  # (user, item, tag)
    tag_ids: frozenset[str]

    @classmethod
    def from_records(cls, records: list[tuple[str, str, str]]) -> "TagDataset":
        seen = set()
        out = []
        for rec in records:
            key = tuple(rec)
            if key in seen:
                continue
            seen.add(key)
            out.append(key)
        return cls(tuple(out), frozenset(r[2] for r in out))


@dataclass(frozen=True)
class RatingsDataset:
    """Observed (user, item, rating) triples; ingested for reporting only,
    no collaborative-filtering training happens here."""

    records: tuple[tuple[str, str, float], ...]

    def __len__(self) -> int:
        return len(self.records)


def load_catalog(path: str | Path) -> ItemCatalog:
    """Read a newline-delimited JSON catalog: {"id": str, "vec": [float,...]}.

    Extra keys on a row are kept as per-item metadata.
    """
    path = Path(path)
    ids: list[str] = []
    seen_ids: set[str] = set()
    vecs: list[list[float]] = []
    metas: list[dict] = []
    dim: int | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                item_id = row["id"]
                vec = row["vec"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CatalogError(f"malformed catalog row at line {lineno}: {exc}") from None
            if not isinstance(vec, list) or not vec:
                raise CatalogError(f"malformed catalog row at line {lineno}: vec must be a non-empty array")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise CatalogError(
                    f"dimension mismatch at line {lineno}: expected {dim}, got {len(vec)}"
                )
            if item_id in seen_ids:
                raise CatalogError(f"duplicate item id {item_id!r} at line {lineno}")
            seen_ids.add(item_id)
            ids.append(str(item_id))
            vecs.append([float(v) for v in vec])
            metas.append({k: v for k, v in row.items() if k not in ("id", "vec")})
    if not ids:
        raise CatalogError("empty catalog")
    return ItemCatalog.from_items(ids, np.array(vecs, dtype=np.float64), metas)


def save_catalog(catalog: ItemCatalog, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, item_id in enumerate(catalog.item_ids):
            row: dict = {"id": item_id, "vec": catalog.embeddings[k].tolist()}
            if catalog.meta and catalog.meta[k]:
                row.update(catalog.meta[k])
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_tags(path: str | Path) -> TagDataset:
    """Read newline-delimited JSON tag records: {"user","item","tag"}."""
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append((str(row["user"]), str(row["item"]), str(row["tag"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CatalogError(f"malformed tag row at line {lineno}: {exc}") from None
    return TagDataset.from_records(records)


def save_tags(tags: TagDataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for user, item, tag in tags.records:
            fh.write(json.dumps({"user": user, "item": item, "tag": tag}, sort_keys=True) + "\n")


def load_ratings(path: str | Path) -> RatingsDataset:
    """Read newline-delimited JSON ratings: {"user","item","rating"}."""
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append((str(row["user"]), str(row["item"]), float(row["rating"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CatalogError(f"malformed rating row at line {lineno}: {exc}") from None
    return RatingsDataset(tuple(records))


def load_prior(path: str | Path) -> GaussianUserPrior:
    """Read a JSON prior: {"mean": [...], "scale_rows": [[...], ...]}."""
    with Path(path).open("r", encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        mean = np.array(obj["mean"], dtype=np.float64)
        scale = np.array(obj["scale_rows"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CatalogError(f"malformed prior file: {exc}") from None
    return GaussianUserPrior(mean=mean, scale=scale)


def save_prior(prior: GaussianUserPrior, path: str | Path) -> None:
    obj = {"mean": prior.mean.tolist(), "scale_rows": prior.scale.tolist()}
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def build_cav_training_set(
    tags: TagDataset, catalog: ItemCatalog, tag: str
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Labeled set for one tag: (embeddings, labels in {+1,-1}, item_ids).

    Positives are items some user applied the tag to. Negatives come from
    (user, item) pairs where the user did not apply this tag to the item,
    applied some other tag to it, and applied this tag to a different item.
    De-duplicated per item; an item qualifying for both labels stays positive
    (a direct application of the tag outweighs the indirect negative signal).
    """
    if tag not in tags.tag_ids:
        raise CatalogError(f"unknown tag: {tag!r}")

    tagged_with = {}  # (user, item) -> set of tags
    users_of_tag = set()
    for user, item, g in tags.records:
        tagged_with.setdefault((user, item), set()).add(g)
        if g == tag:
            users_of_tag.add(user)

    positives = {item for (user, item), gs in tagged_with.items() if tag in gs}
    if not positives:
        raise CatalogError(f"untrainable tag {tag!r}: no positive instances")

    negatives = set()
    for (user, item), gs in tagged_with.items():
        if tag in gs:
            continue
        if user in users_of_tag:  # user used this tag on some other item
            negatives.add(item)
    negatives -= positives

    item_ids = sorted(positives) + sorted(negatives)
    labels = np.array([1.0] * len(positives) + [-1.0] * len(negatives))
    embeddings = np.stack([catalog.embedding(i) for i in item_ids])
    return embeddings, labels, item_ids
