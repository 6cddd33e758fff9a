"""Corpus handling: vocabulary, user histories, on-disk formats and the
clustered synthetic corpus generator.

A corpus directory holds three files:

  vocabulary.txt    one tag per line; the zero-based line number is the id
  interactions.tsv  image_id <TAB> user_id <TAB> comma-separated tags
  features.bin      "ALTFEAT1" magic, u32 record count, u32 feature dim,
                    then per record a u16-length-prefixed image id and
                    dim little-endian float32 feature values

All multi-byte integers are little-endian.  Feature values round-trip
through float32, everything else is lossless.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .config import subsystem_rng
from .errors import ContractError, FormatError, ParseError, VocabularyError

FEATURE_MAGIC = b"ALTFEAT1"

VOCABULARY_FILE = "vocabulary.txt"
INTERACTIONS_FILE = "interactions.tsv"
FEATURES_FILE = "features.bin"


class TagVocabulary:
    """Ordered, duplicate-free tag strings; a tag's index is its class id."""

    def __init__(self, tags: Iterable[str]):
        self.tags = tuple(tags)
        if any(not tag for tag in self.tags):
            raise ContractError("vocabulary tags must be non-empty")
        self._index = {tag: i for i, tag in enumerate(self.tags)}
        if len(self._index) != len(self.tags):
            raise ContractError("vocabulary contains duplicate tags")

    @property
    def size(self) -> int:
        return len(self.tags)

    def index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise VocabularyError(f"unknown tag {tag!r}") from None

    def tag(self, index: int) -> str:
        return self.tags[index]

    def __iter__(self):
        return iter(self.tags)

    def __len__(self) -> int:
        return len(self.tags)


@dataclass
class Sample:
    image_id: str
    user_id: str
    features: np.ndarray  # float64, length feature_dim
    tags: frozenset  # ground-truth tag indices


@dataclass
class Corpus:
    vocabulary: TagVocabulary
    samples: list

    @property
    def feature_dim(self) -> int:
        return 0 if not self.samples else int(self.samples[0].features.shape[0])

    def user_ids(self) -> list[str]:
        seen = dict.fromkeys(sample.user_id for sample in self.samples)
        return list(seen)


@dataclass
class UserHistory:
    """Per-user tag usage counts and their max-normalized vector."""

    user_id: str
    counts: dict
    vector: np.ndarray


def build_user_history(
    samples: Sequence[Sample],
    user_id: str,
    vocab_size: int,
    exclude: frozenset = frozenset(),
) -> UserHistory:
    """Count the user's tags over their samples, skipping excluded image
    ids (the test split), and normalize by the maximum count.

    An unknown user, or one whose every image is excluded, gets the
    all-zero cold-start vector.
    """
    counts: dict[int, int] = {}
    for sample in samples:
        if sample.user_id != user_id or sample.image_id in exclude:
            continue
        for tag in sample.tags:
            if tag >= vocab_size:
                raise ContractError(f"tag index {tag} outside vocabulary of size {vocab_size}")
            counts[tag] = counts.get(tag, 0) + 1
    vector = np.zeros(vocab_size)
    if counts:
        max_count = max(counts.values())
        for tag, count in counts.items():
            vector[tag] = count / max_count
    return UserHistory(user_id=user_id, counts=counts, vector=vector)


def build_histories(
    samples: Sequence[Sample],
    vocab_size: int,
    exclude: frozenset = frozenset(),
) -> dict[str, UserHistory]:
    """Histories for every user appearing in ``samples``."""
    per_user: dict[str, dict[int, int]] = {}
    for sample in samples:
        counts = per_user.setdefault(sample.user_id, {})
        if sample.image_id in exclude:
            continue
        for tag in sample.tags:
            counts[tag] = counts.get(tag, 0) + 1
    histories = {}
    for user_id, counts in per_user.items():
        vector = np.zeros(vocab_size)
        if counts:
            max_count = max(counts.values())
            for tag, count in counts.items():
                vector[tag] = count / max_count
        histories[user_id] = UserHistory(user_id=user_id, counts=counts, vector=vector)
    return histories


def history_from_tags(tags: Iterable[int], vocab_size: int) -> np.ndarray:
    """Ad-hoc history vector from a plain tag list (each tag counted once)."""
    vector = np.zeros(vocab_size)
    for tag in tags:
        if not 0 <= tag < vocab_size:
            raise ContractError(f"tag index {tag} outside vocabulary of size {vocab_size}")
        vector[tag] = 1.0
    return vector


# ---------------------------------------------------------------------
# synthetic corpus generation
# ---------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    num_users: int
    num_clusters: int
    num_images: int
    vocab_size: int
    feature_dim: int
    tags_per_image_range: tuple = (3, 8)
    cluster_tag_affinity: float = 0.6
    seed: int = 0
    # Knobs of the generative process itself; the defaults make the
    # visual concepts learnable while leaving real headroom for the
    # preference signal.
    feature_noise: float = 0.5
    tags_per_concept: int = 5

    def __post_init__(self):
        self.tags_per_image_range = tuple(self.tags_per_image_range)
        if self.num_clusters < 1 or self.num_users < 1 or self.num_images < 1:
            raise ContractError("users, clusters and images must all be >= 1")
        if self.num_clusters > self.num_users:
            raise ContractError(
                f"cannot spread {self.num_clusters} clusters over {self.num_users} users"
            )
        if self.vocab_size < 2 * self.num_clusters:
            raise ContractError("vocabulary too small for the requested cluster count")
        if self.feature_dim < 1:
            raise ContractError("feature_dim must be >= 1")
        lo, hi = self.tags_per_image_range
        if not 1 <= lo <= hi:
            raise ContractError(f"bad tags_per_image_range {self.tags_per_image_range}")
        if not 0.0 <= self.cluster_tag_affinity <= 1.0:
            raise ContractError("cluster_tag_affinity must lie in [0, 1]")


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[Corpus, dict[str, int], dict[str, int]]:
    """Build a corpus where personalization exists by construction.

    Every user belongs to one behavior cluster with a preferred tag
    block; every image carries a latent visual concept with its own tag
    set.  Features are the concept prototype plus Gaussian noise, and
    each ground-truth tag draw comes from the owner's cluster block with
    probability ``cluster_tag_affinity``, otherwise from the concept
    set.  The whole corpus is a pure function of the spec.

    Returns the corpus, the user -> cluster assignment and the
    image -> concept assignment.  The two assignments exist so the
    construction can be audited; they are not part of the on-disk
    formats.
    """
    rng = subsystem_rng(spec.seed, "synthetic")
    width = max(3, len(str(spec.vocab_size - 1)))
    vocabulary = TagVocabulary(f"tag{i:0{width}d}" for i in range(spec.vocab_size))

    # Disjoint preferred-tag blocks per cluster; the rest of the
    # vocabulary feeds the visual concepts.
    perm = [int(i) for i in rng.permutation(spec.vocab_size)]
    block = max(2, spec.vocab_size // (2 * spec.num_clusters))
    cluster_tags = [
        perm[c * block : (c + 1) * block] for c in range(spec.num_clusters)
    ]
    concept_pool = perm[spec.num_clusters * block :]
    if not concept_pool:
        raise ContractError("vocabulary too small to leave any concept tags")

    num_concepts = max(4, spec.vocab_size // 10)
    tags_per_concept = min(spec.tags_per_concept, len(concept_pool))
    concept_prototypes = rng.normal(0.0, 1.0, size=(num_concepts, spec.feature_dim))
    concept_tags = [
        [int(t) for t in rng.choice(concept_pool, size=tags_per_concept, replace=False)]
        for _ in range(num_concepts)
    ]

    user_width = max(4, len(str(spec.num_users - 1)))
    user_ids = [f"u{i:0{user_width}d}" for i in range(spec.num_users)]
    cluster_of_user = {uid: i % spec.num_clusters for i, uid in enumerate(user_ids)}

    lo, hi = spec.tags_per_image_range
    image_width = max(5, len(str(spec.num_images - 1)))
    samples = []
    concept_of_image: dict[str, int] = {}
    for i in range(spec.num_images):
        owner = user_ids[int(rng.integers(spec.num_users))]
        concept = int(rng.integers(num_concepts))
        features = concept_prototypes[concept] + rng.normal(
            0.0, spec.feature_noise, size=spec.feature_dim
        )
        draws = int(rng.integers(lo, hi + 1))
        tags = set()
        preferred = cluster_tags[cluster_of_user[owner]]
        for _ in range(draws):
            if rng.random() < spec.cluster_tag_affinity:
                tags.add(int(preferred[int(rng.integers(len(preferred)))]))
            else:
                pool = concept_tags[concept]
                tags.add(int(pool[int(rng.integers(len(pool)))]))
        image_id = f"img{i:0{image_width}d}"
        concept_of_image[image_id] = concept
        samples.append(
            Sample(
                image_id=image_id,
                user_id=owner,
                features=features,
                tags=frozenset(tags),
            )
        )
    return Corpus(vocabulary=vocabulary, samples=samples), cluster_of_user, concept_of_image


def corpus_digest(corpus: Corpus) -> str:
    """Order-independent SHA-256 digest of the corpus content."""
    hasher = hashlib.sha256()
    for tag in corpus.vocabulary:
        hasher.update(tag.encode("utf-8") + b"\n")
    sample_digests = []
    for sample in corpus.samples:
        sub = hashlib.sha256()
        sub.update(sample.image_id.encode("utf-8") + b"\0")
        sub.update(sample.user_id.encode("utf-8") + b"\0")
        sub.update(np.asarray(sample.features, dtype="<f4").tobytes())
        sub.update(",".join(str(t) for t in sorted(sample.tags)).encode("utf-8"))
        sample_digests.append(sub.digest())
    for digest in sorted(sample_digests):
        hasher.update(digest)
    return hasher.hexdigest()


# ---------------------------------------------------------------------
# on-disk formats
# ---------------------------------------------------------------------


def save_corpus(directory, corpus: Corpus) -> None:
    """Write the three corpus files, each via a temp-file rename so a
    failure never leaves a partially written file behind."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    vocab_text = "".join(f"{tag}\n" for tag in corpus.vocabulary)
    lines = []
    for sample in corpus.samples:
        tag_names = ",".join(corpus.vocabulary.tag(t) for t in sorted(sample.tags))
        lines.append(f"{sample.image_id}\t{sample.user_id}\t{tag_names}\n")
    payloads = {
        VOCABULARY_FILE: vocab_text.encode("utf-8"),
        INTERACTIONS_FILE: "".join(lines).encode("utf-8"),
        FEATURES_FILE: encode_features(corpus.samples),
    }
    staged = []
    try:
        for name, blob in payloads.items():
            tmp = directory / (name + ".tmp")
            tmp.write_bytes(blob)
            staged.append((tmp, directory / name))
        for tmp, target in staged:
            tmp.replace(target)
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise


def encode_features(samples: Sequence[Sample]) -> bytes:
    dim = 0 if not samples else int(samples[0].features.shape[0])
    parts = [FEATURE_MAGIC, struct.pack("<II", len(samples), dim)]
    for sample in samples:
        raw_id = sample.image_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ContractError(f"image id too long: {sample.image_id!r}")
        if sample.features.shape != (dim,):
            raise ContractError("all feature vectors must share one dimension")
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(np.asarray(sample.features, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_features(blob: bytes, source: str = "features") -> dict[str, np.ndarray]:
    if len(blob) < len(FEATURE_MAGIC) + 8:
        raise ParseError(f"{source}: file too short for header")
    if blob[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError(f"{source}: bad magic {blob[:8]!r}")
    count, dim = struct.unpack_from("<II", blob, len(FEATURE_MAGIC))
    offset = len(FEATURE_MAGIC) + 8
    features: dict[str, np.ndarray] = {}
    for record in range(count):
        if offset + 2 > len(blob):
            raise ParseError(f"{source}: truncated at record {record}")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        end = offset + id_len + 4 * dim
        if end > len(blob):
            raise ParseError(f"{source}: truncated at record {record}")
        image_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        values = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        if not np.isfinite(values).all():
            raise ParseError(f"{source}: non-finite features for {image_id!r}")
        offset += 4 * dim
        features[image_id] = values
    if offset != len(blob):
        raise ParseError(f"{source}: {len(blob) - offset} trailing bytes")
    return features


def load_vocabulary(path) -> TagVocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tags = [line.strip() for line in lines if line.strip()]
    if not tags:
        raise ParseError(f"{path}: empty vocabulary")
    return TagVocabulary(tags)


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    for name in (VOCABULARY_FILE, INTERACTIONS_FILE, FEATURES_FILE):
        if not (directory / name).exists():
            raise ParseError(f"missing corpus file: {directory / name}")
    vocabulary = load_vocabulary(directory / VOCABULARY_FILE)
    features = decode_features(
        (directory / FEATURES_FILE).read_bytes(), source=str(directory / FEATURES_FILE)
    )

    samples = []
    interactions_path = directory / INTERACTIONS_FILE
    text = interactions_path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{interactions_path}:{lineno}: expected 3 tab-separated fields")
        image_id, user_id, tag_field = parts
        if not image_id or not user_id:
            raise ParseError(f"{interactions_path}:{lineno}: empty image or user id")
        try:
            tags = frozenset(
                vocabulary.index(tag) for tag in tag_field.split(",") if tag
            )
        except VocabularyError as exc:
            raise VocabularyError(f"{interactions_path}:{lineno}: {exc}") from None
        if image_id not in features:
            raise ParseError(f"{interactions_path}:{lineno}: no features for {image_id!r}")
        samples.append(
            Sample(image_id=image_id, user_id=user_id, features=features[image_id], tags=tags)
        )
    return Corpus(vocabulary=vocabulary, samples=samples)
