"""Datasets: registry, base/novel splitting, few-shot sampling, synthetic
ingestion, mixed-batch construction and in-batch triplet mining.

On-disk layout for real data:

    <root>/images/<class_name>/<file>
    <root>/splits/{train,val,test}.txt     one "relative_path<TAB>class_name" per line
    <root>/splits/base_novel.txt           optional, "class_name<TAB>{base|novel}"

Synthetic data is a flat class-per-folder tree: <synth_root>/<class_name>/<file>.
Folder names are matched case-insensitively with spaces and underscores
unified, because generation pipelines mangle class names.

All sampling is keyed on (seed, stream, position) so any batch can be
recomputed without replaying history; checkpoint resume needs only the
step counter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DataFormatError, UnmatchedClassError

log = logging.getLogger(__name__)

REAL = "real"
SYNTHETIC = "synthetic"

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".npy"}

# Stream tags keep the sampler's independent random streams apart.
_STREAM_REAL = 1
_STREAM_SYNTH = 2
_STREAM_TRIPLET = 3


@dataclass(frozen=True)
class RegistryEntry:
    """Dataset name plus its hand-crafted prompt template."""

    name: str
    template: str


DATASET_REGISTRY: dict[str, RegistryEntry] = {
    e.name: e
    for e in [
        RegistryEntry("caltech101", "a photo of a [CLS]."),
        RegistryEntry("oxford_pets", "a photo of a [CLS], a type of pet."),
        RegistryEntry("stanford_cars", "a photo of a [CLS]."),
        RegistryEntry("flowers102", "a photo of a [CLS], a type of flower."),
        RegistryEntry("food101", "a photo of [CLS], a type of food."),
        RegistryEntry("fgvc_aircraft", "a photo of a [CLS], a type of aircraft."),
        RegistryEntry("sun397", "a photo of a [CLS]."),
        RegistryEntry("dtd", "[CLS] texture."),
        RegistryEntry("eurosat", "a centered satellite photo of [CLS]."),
        RegistryEntry("ucf101", "a photo of a person doing [CLS]."),
        RegistryEntry("imagenet", "a photo of a [CLS]"),
        RegistryEntry("imagenetv2", "a photo of a [CLS]"),
        RegistryEntry("imagenet_sketch", "a photo of a [CLS]"),
        RegistryEntry("imagenet_a", "a photo of a [CLS]"),
        RegistryEntry("imagenet_r", "a photo of a [CLS]"),
        RegistryEntry("toy", "a photo of a [CLS]."),
    ]
}


def get_registry_entry(name: str) -> RegistryEntry:
    key = name.lower().replace("-", "_")
    if key not in DATASET_REGISTRY:
        raise ConfigurationError(
            f"unknown dataset {name!r}; known: {', '.join(sorted(DATASET_REGISTRY))}"
        )
    return DATASET_REGISTRY[key]


@dataclass(frozen=True)
class ClassSpace:
    """Base/novel partition of the label space plus naming and template."""

    base: tuple[int, ...]
    novel: tuple[int, ...]
    names: dict[int, str]
    template: str

    def __post_init__(self):
        overlap = set(self.base) & set(self.novel)
        if overlap:
            raise ConfigurationError(f"classes in both base and novel: {sorted(overlap)}")
        missing = [c for c in (*self.base, *self.novel) if c not in self.names]
        if missing:
            raise ConfigurationError(f"classes without a name: {missing}")
        if self.template.count("[CLS]") != 1:
            raise ConfigurationError(
                f"template must contain exactly one [CLS]: {self.template!r}"
            )

    @property
    def all_classes(self) -> tuple[int, ...]:
        return self.base + self.novel

    def is_base(self, class_id: int) -> bool:
        return class_id in set(self.base)


@dataclass(frozen=True)
class LabeledExample:
    """One sample: patch tokens or an on-disk path, class id, domain tag."""

    content: object
    class_id: int
    domain: str
    uid: str

    def __post_init__(self):
        if self.domain not in (REAL, SYNTHETIC):
            raise ConfigurationError(f"domain must be real|synthetic, got {self.domain!r}")


class TripletIndices(NamedTuple):
    """Indices into a MixedBatch: anchor into .synthetic, others into .real."""

    anchor: int
    positive: int
    negative: int


class MiningResult(NamedTuple):
    triplets: list[TripletIndices]
    skipped: int


@dataclass
class MixedBatch:
    """Real sub-batch, synthetic sub-batch and the mined triplets."""

    real: list[LabeledExample]
    synthetic: list[LabeledExample]
    triplets: list[TripletIndices] = field(default_factory=list)
    skipped_triplets: int = 0
    real_indices: list[int] = field(default_factory=list)
    synth_indices: list[int] = field(default_factory=list)


class DatasetSplits(NamedTuple):
    train: list[LabeledExample]
    val: list[LabeledExample]
    test: list[LabeledExample]
    class_space: ClassSpace


@dataclass
class TrainingData:
    """Everything the trainer consumes for one run."""

    real_train: list[LabeledExample]
    synthetic: list[LabeledExample]
    val: list[LabeledExample]
    class_space: ClassSpace


def _normalize_class_name(name: str) -> str:
    return " ".join(name.lower().replace("_", " ").split())


def _read_split_file(path: Path) -> list[tuple[str, str]]:
    if not path.exists():
        raise FileNotFoundError(f"missing split file: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'path<TAB>class_name'")
        rows.append((parts[0], parts[1]))
    return rows


def load_dataset(root, registry_entry: RegistryEntry) -> DatasetSplits:
    """Index the train/val/test splits and build the class space.

    Classes are enumerated from the union of the split files, sorted by
    name for stable ids. The default base/novel partition takes the
    first half of the alphabetically ordered class list as base; a
    splits/base_novel.txt file overrides it verbatim.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    split_rows = {
        name: _read_split_file(root / "splits" / f"{name}.txt")
        for name in ("train", "val", "test")
    }
    class_names = sorted({cname for rows in split_rows.values() for _, cname in rows})
    if not class_names:
        raise DataFormatError(f"{root}: split files name no classes")
    ids = {cname: i for i, cname in enumerate(class_names)}

    override = root / "splits" / "base_novel.txt"
    if override.exists():
        base, novel, seen = [], [], set()
        for lineno, line in enumerate(override.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("base", "novel"):
                raise DataFormatError(f"{override}:{lineno}: expected 'class<TAB>base|novel'")
            cname, side = parts
            if cname not in ids:
                raise DataFormatError(f"{override}:{lineno}: unknown class {cname!r}")
            if ids[cname] in seen:
                raise DataFormatError(f"{override}:{lineno}: duplicated class {cname!r}")
            seen.add(ids[cname])
            (base if side == "base" else novel).append(ids[cname])
    else:
        half = (len(class_names) + 1) // 2
        base = [ids[c] for c in class_names[:half]]
        novel = [ids[c] for c in class_names[half:]]

    space = ClassSpace(
        base=tuple(base),
        novel=tuple(novel),
        names={i: c for c, i in ids.items()},
        template=registry_entry.template,
    )

    def build(rows):
        return [
            LabeledExample(
                content=str(root / "images" / rel),
                class_id=ids[cname],
                domain=REAL,
                uid=rel,
            )
            for rel, cname in rows
        ]

    return DatasetSplits(
        train=build(split_rows["train"]),
        val=build(split_rows["val"]),
        test=build(split_rows["test"]),
        class_space=space,
    )


def few_shot_sample(train_split: Sequence[LabeledExample], class_space: ClassSpace,
                    shots: int, seed: int) -> list[LabeledExample]:
    """Per base class, min(shots, available) examples without replacement.

    Selection is keyed by sorted uids then a seeded shuffle, so it is
    stable under permutation of the underlying file listing. Novel
    classes contribute nothing; under-populated classes are clipped with
    a warning.
    """
    by_class: dict[int, list[LabeledExample]] = {}
    for ex in train_split:
        by_class.setdefault(ex.class_id, []).append(ex)
    picked = []
    for cid in class_space.base:
        pool = sorted(by_class.get(cid, []), key=lambda e: e.uid)
        if not pool:
            continue
        if len(pool) < shots:
            log.warning(
                "class %s has only %d training examples (< %d shots); clipping",
                class_space.names[cid], len(pool), shots,
            )
        rng = np.random.default_rng([seed, cid])
        order = rng.permutation(len(pool))
        picked.extend(pool[i] for i in order[: min(shots, len(pool))])
    return picked


def ingest_synthetic(directory, class_space: ClassSpace) -> list[LabeledExample]:
    """Tag every file under <dir>/<class_name>/ as a synthetic example.

    Folder names are matched to class names case-insensitively with
    spaces/underscores unified; unmatched folders abort with the full
    offender list.
    """
    directory = Path(directory)
    if not directory.exists():
        raise FileNotFoundError(f"synthetic root does not exist: {directory}")
    lookup = {_normalize_class_name(name): cid for cid, name in class_space.names.items()}
    offenders = [
        d.name
        for d in sorted(directory.iterdir())
        if d.is_dir() and _normalize_class_name(d.name) not in lookup
    ]
    if offenders:
        raise UnmatchedClassError(offenders)
    out = []
    for d in sorted(p for p in directory.iterdir() if p.is_dir()):
        cid = lookup[_normalize_class_name(d.name)]
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            log.warning("synthetic folder %s is empty", d)
            continue
        out.extend(
            LabeledExample(
                content=str(p), class_id=cid, domain=SYNTHETIC, uid=f"{d.name}/{p.name}"
            )
            for p in files
        )
    return out


def resolve_content(example: LabeledExample, patchify) -> np.ndarray:
    """Materialize patch tokens: arrays pass through, paths are loaded."""
    if isinstance(example.content, np.ndarray):
        return example.content
    path = Path(example.content)
    if path.suffix.lower() == ".npy":
        return np.load(path)
    return patchify(path)


def mine_triplets(batch: MixedBatch, class_space: ClassSpace,
                  rng: np.random.Generator) -> MiningResult:
    """One triplet per synthetic base-class anchor that has a real match.

    Positives are drawn uniformly among same-class reals in the batch,
    negatives uniformly among different-class reals. Synthetic novel
    samples never anchor; anchors without a valid positive or negative
    are skipped and counted.
    """
    base = set(class_space.base)
    real_by_class: dict[int, list[int]] = {}
    for i, ex in enumerate(batch.real):
        real_by_class.setdefault(ex.class_id, []).append(i)
    triplets: list[TripletIndices] = []
    skipped = 0
    for a_idx, ex in enumerate(batch.synthetic):
        if ex.class_id not in base:
            continue
        positives = real_by_class.get(ex.class_id, [])
        negatives = [i for i, r in enumerate(batch.real) if r.class_id != ex.class_id]
        if not positives or not negatives:
            skipped += 1
            continue
        p = positives[rng.integers(len(positives))]
        n = negatives[rng.integers(len(negatives))]
        triplets.append(TripletIndices(anchor=a_idx, positive=p, negative=n))
    return MiningResult(triplets, skipped)


class MixedBatchSampler:
    """Deterministic mixed real/synthetic batches with mined triplets.

    Both pools advance through independent streams of per-epoch seeded
    permutations; batch #t covers stream positions [t*size, (t+1)*size),
    so every batch is a pure function of (seed, t) and carries exactly
    ``ratio`` synthetic examples per real one.
    """

    def __init__(self, real_set: Sequence[LabeledExample],
                 synth_set: Sequence[LabeledExample],
                 real_batch_size: int, ratio: int, seed: int,
                 class_space: ClassSpace, triplet_seed: int | None = None):
        if not real_set:
            raise ConfigurationError("real example pool is empty")
        if real_batch_size < 1:
            raise ConfigurationError("real_batch_size must be >= 1")
        if int(ratio) != ratio or ratio < 1:
            raise ConfigurationError("ratio must be an integer >= 1")
        for ex in real_set:
            if ex.domain != REAL:
                raise ConfigurationError(f"non-real example in the real pool: {ex.uid}")
            if ex.class_id not in set(class_space.base):
                raise ConfigurationError(
                    f"real novel-class example may not be trained on: {ex.uid}"
                )
        for ex in synth_set:
            if ex.domain != SYNTHETIC:
                raise ConfigurationError(f"non-synthetic example in the synthetic pool: {ex.uid}")
        self.real_set = list(real_set)
        self.synth_set = list(synth_set)
        self.real_batch_size = int(real_batch_size)
        self.ratio = int(ratio)
        self.seed = seed
        # Mining draws from its own stream so alignment-free runs are
        # reproducible across triplet seeds.
        self.triplet_seed = seed if triplet_seed is None else triplet_seed
        self.class_space = class_space
        self._perm_cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def steps_per_epoch(self) -> int:
        return max(1, len(self.real_set) // self.real_batch_size)

    def _perm(self, stream: int, epoch: int, n: int) -> np.ndarray:
        key = (stream, epoch)
        if key not in self._perm_cache:
            rng = np.random.default_rng([self.seed, stream, epoch])
            self._perm_cache[key] = rng.permutation(n)
        return self._perm_cache[key]

    def _stream_indices(self, stream: int, n: int, start: int, count: int) -> list[int]:
        out = []
        for pos in range(start, start + count):
            epoch, offset = divmod(pos, n)
            out.append(int(self._perm(stream, epoch, n)[offset]))
        return out

    def batch_at(self, step: int) -> MixedBatch:
        """Recompute batch #step from scratch; no iteration state needed."""
        r = self.real_batch_size
        real_idx = self._stream_indices(_STREAM_REAL, len(self.real_set), step * r, r)
        if self.synth_set:
            s = r * self.ratio
            synth_idx = self._stream_indices(
                _STREAM_SYNTH, len(self.synth_set), step * s, s
            )
        else:
            synth_idx = []
        batch = MixedBatch(
            real=[self.real_set[i] for i in real_idx],
            synthetic=[self.synth_set[i] for i in synth_idx],
            real_indices=real_idx,
            synth_indices=synth_idx,
        )
        rng = np.random.default_rng([self.triplet_seed, _STREAM_TRIPLET, step])
        batch.triplets, batch.skipped_triplets = mine_triplets(batch, self.class_space, rng)
        return batch

    def __iter__(self) -> Iterator[MixedBatch]:
        step = 0
        while True:
            yield self.batch_at(step)
            step += 1


def mixed_batch_sampler(real_set, synth_set, real_batch_size, ratio, seed,
                        class_space) -> MixedBatchSampler:
    """Construct the deterministic batch iterator."""
    return MixedBatchSampler(real_set, synth_set, real_batch_size, ratio, seed, class_space)
