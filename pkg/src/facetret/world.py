"""Synthetic attribute world: images with per-facet values and saliences.

Each image carries one value per facet and a salience per facet drawn from
``{salience_low, salience_high}``. Embedding dimension is
``n_facets * values_per_facet``; facet ``f`` owns the block
``[f * V, (f + 1) * V)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigInvalid, FormatError, StoreIOError, UnknownFacet, UnknownImage

CANONICAL_FACETS = (
    "animals",
    "scenes",
    "materials",
    "weathers",
    "objects",
    "times",
    "gestures",
    "count_of_people",
)

VOCAB = {
    "animals": ("bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe"),
    "scenes": ("beach", "kitchen", "bedroom", "airport", "harbor", "street", "mountain", "river", "farm", "zoo"),
    "objects": ("bicycle", "bus", "laptop", "backpack", "sandwich", "umbrella", "clock", "vase", "chair", "bottle"),
    "count_of_people": ("0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "over 10"),
    "materials": ("wood", "stone", "metal", "paper", "brick"),
    "times": ("daytime", "night", "afternoon", "dusk", "morning", "sunrise", "evening"),
    "weathers": (
        "sunny", "clear", "misty", "overcast", "cloudy", "rainy",
        "drizzly", "stormy", "snowy", "warm", "cold", "chilly",
    ),
    "gestures": ("stand", "sit", "lie", "jump", "bend", "squat", "kneel", "crawl"),
}

# Query phrasing per facet. Each template shares its distinctive words with the
# matching GPT-written question so lexical prompt selection is unambiguous.
QUERY_TEMPLATES = {
    "animals": "Find me an everyday image in which {value} animals can be seen.",
    "scenes": "Find me an everyday image of a location type like the {value}.",
    "objects": "Find me an everyday image in which objects such as a {value} are present.",
    "count_of_people": "Find me an everyday image with {value} people present.",
    "materials": "Find me an everyday image showing some object or surface made of {value} material.",
    "times": "Find me an everyday image taken at the time of day {value}.",
    "weathers": "Find me an everyday image where the weather is like {value}.",
    "gestures": "Find me an everyday image where the people are making a {value} gesture.",
}
GENERIC_TEMPLATE = "Find me an everyday image where the {facet} is {value}."

_PAIRS = {
    "materials": [("stone", "brick")],
    "weathers": [("sunny", "clear"), ("warm", "sunny"), ("snowy", "cold"), ("snowy", "chilly"), ("cold", "chilly")]
    + [(a, b) for i, a in enumerate(("misty", "overcast", "cloudy", "rainy", "drizzly", "stormy"))
       for b in ("misty", "overcast", "cloudy", "rainy", "drizzly", "stormy")[i + 1 :]]
    + [(a, b) for a in ("cold", "chilly") for b in ("misty", "overcast", "cloudy", "rainy", "drizzly", "stormy")]
    + [(a, "warm") for a in ("misty", "overcast", "cloudy")],
    "gestures": [("squat", "kneel")],
    "times": [("morning", "sunrise"), ("dusk", "evening")],
}


def default_confusable_pairs(facet: str, value_names: Sequence[str]) -> list[tuple[str, str]]:
    present = set(value_names)
    return [(a, b) for a, b in _PAIRS.get(facet, []) if a in present and b in present]


def value_names_for(facet: str, n: int) -> tuple[str, ...]:
    vocab = VOCAB.get(facet, ())
    return tuple(vocab[j] if j < len(vocab) else f"{facet}_{j}" for j in range(n))


def render_query(facet: str, value_name: str) -> str:
    tpl = QUERY_TEMPLATES.get(facet)
    if tpl is None:
        return GENERIC_TEMPLATE.format(facet=facet.replace("_", " "), value=value_name)
    return tpl.format(value=value_name)


@dataclass(frozen=True)
class SyntheticWorldConfig:
    n_facets: int = 4
    values_per_facet: int = 5
    n_images: int = 2000
    salience_low: float = 0.1
    salience_high: float = 1.0
    dominant_fraction: float = 0.25
    query_blend: float = 3.0
    prompt_boost: float = 8.0
    noise_scale: float = 0.01
    seed: int = 0
    facet_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.facet_names is not None:
            object.__setattr__(self, "facet_names", tuple(self.facet_names))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.n_facets < 2:
            problems.append("n_facets must be >= 2")
        if self.values_per_facet < 3:
            problems.append("values_per_facet must be >= 3")
        if self.n_images < 1:
            problems.append("n_images must be >= 1")
        if not self.salience_low < self.salience_high:
            problems.append("salience_low must be < salience_high")
        if self.salience_low < 0:
            problems.append("salience_low must be >= 0")
        if not 0 < self.dominant_fraction <= 1:
            problems.append("dominant_fraction must be in (0, 1]")
        if self.query_blend < 0:
            problems.append("query_blend must be >= 0")
        if self.prompt_boost < 1:
            problems.append("prompt_boost must be >= 1")
        if self.noise_scale < 0:
            problems.append("noise_scale must be >= 0")
        names = self.facets
        if len(names) != self.n_facets or len(set(names)) != len(names) or not all(names):
            problems.append("facet_names must be n_facets distinct non-empty names")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    @property
    def facets(self) -> tuple[str, ...]:
        if self.facet_names is not None:
            return self.facet_names
        return tuple(
            CANONICAL_FACETS[f] if f < len(CANONICAL_FACETS) else f"facet{f}" for f in range(self.n_facets)
        )

    @property
    def dim(self) -> int:
        return self.n_facets * self.values_per_facet

    def replace(self, **changes) -> "SyntheticWorldConfig":
        d = asdict(self)
        d.update(changes)
        return SyntheticWorldConfig(**d)

    def to_json(self) -> dict:
        d = asdict(self)
        if self.facet_names is not None:
            d["facet_names"] = list(self.facet_names)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticWorldConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown world settings {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc


@dataclass(frozen=True)
class SyntheticImage:
    id: str
    values: tuple[int, ...]
    salience: tuple[float, ...]


@dataclass
class SyntheticWorld:
    config: SyntheticWorldConfig
    images: tuple[SyntheticImage, ...]
    value_names: dict = field(default_factory=dict)
    _index: dict = field(default_factory=dict, repr=False)
    _queries: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.value_names:
            self.value_names = {f: value_names_for(f, self.config.values_per_facet) for f in self.facets}
        self._index = {im.id: pos for pos, im in enumerate(self.images)}
        if len(self._index) != len(self.images):
            raise ConfigInvalid("duplicate image ids in world")
        self._queries = {
            render_query(f, name): (f, v) for f in self.facets for v, name in enumerate(self.value_names[f])
        }

    @property
    def facets(self) -> tuple[str, ...]:
        return self.config.facets

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def image_ids(self) -> list[str]:
        return [im.id for im in self.images]

    def facet_index(self, facet: str) -> int:
        try:
            return self.facets.index(facet)
        except ValueError:
            raise UnknownFacet(f"unknown facet {facet!r}") from None

    def image(self, image_id: str) -> SyntheticImage:
        try:
            return self.images[self._index[image_id]]
        except KeyError:
            raise UnknownImage(f"unknown image {image_id!r}") from None

    def value_index(self, facet: str, value) -> int:
        if isinstance(value, (int, np.integer)):
            v = int(value)
            if not 0 <= v < self.config.values_per_facet:
                raise FormatError(f"value index {v} out of range for facet {facet!r}")
            return v
        try:
            return self.value_names[facet].index(value)
        except (KeyError, ValueError):
            raise UnknownFacet(f"facet {facet!r} has no value {value!r}") from None

    def query_text(self, facet: str, value) -> str:
        self.facet_index(facet)
        return render_query(facet, self.value_names[facet][self.value_index(facet, value)])

    def parse_query(self, text: str) -> tuple[str, int]:
        try:
            return self._queries[text]
        except KeyError:
            raise UnknownFacet(f"query text does not match any facet template: {text!r}") from None

    def noise(self, image_id: str) -> np.ndarray:
        """Seeded standard-normal vector for one image; shared by all its embeddings."""
        digest = int.from_bytes(hashlib.sha256(image_id.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng([self.config.seed, digest])
        return rng.standard_normal(self.dim)

    def arrays(self, image_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(values, salience) matrices of shape (len(ids), n_facets)."""
        ims = [self.image(i) for i in image_ids]
        vals = np.array([im.values for im in ims], dtype=np.int64).reshape(len(ims), self.config.n_facets)
        sal = np.array([im.salience for im in ims], dtype=np.float64).reshape(len(ims), self.config.n_facets)
        return vals, sal

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "value_names": {f: list(v) for f, v in self.value_names.items()},
            "images": [{"id": im.id, "values": list(im.values), "salience": list(im.salience)} for im in self.images],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticWorld":
        try:
            cfg = SyntheticWorldConfig.from_json(d["config"])
            images = tuple(
                SyntheticImage(o["id"], tuple(int(x) for x in o["values"]), tuple(float(x) for x in o["salience"]))
                for o in d["images"]
            )
            names = {f: tuple(v) for f, v in d.get("value_names", {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad world document: {exc}") from exc
        return cls(cfg, images, names)

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StoreIOError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise StoreIOError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def generate_world(config: SyntheticWorldConfig | None = None, seed: int | None = None) -> SyntheticWorld:
    """Populate a world deterministically from ``(config, seed)``.

    Each image gets ``dominant_fraction * n_facets`` high-salience facets on
    average (stochastic rounding), and never fewer than one.
    """
    config = config or SyntheticWorldConfig()
    if seed is not None and seed != config.seed:
        config = config.replace(seed=int(seed))
    config.validate()
    rng = np.random.default_rng(config.seed)
    F, V = config.n_facets, config.values_per_facet
    target = config.dominant_fraction * F
    base = math.floor(target)
    frac = target - base
    images = []
    width = max(6, len(str(config.n_images - 1)))
    for i in range(config.n_images):
        values = rng.integers(0, V, size=F)
        n_high = base + (1 if frac > 0 and rng.random() < frac else 0)
        n_high = min(F, max(1, n_high))
        high = rng.choice(F, size=n_high, replace=False)
        sal = np.full(F, config.salience_low)
        sal[high] = config.salience_high
        images.append(
            SyntheticImage(f"img{i:0{width}d}", tuple(int(v) for v in values), tuple(float(s) for s in sal))
        )
    return SyntheticWorld(config, tuple(images))
