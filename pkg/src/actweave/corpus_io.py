"""Input loading, run configuration and artifact persistence.

File formats: line-delimited JSON for the corpus, TSV for features,
word2vec-style text for embeddings, versioned JSON for the concept tree,
and a JSON-header + raw little-endian float64 layout for checkpoints.
"""
from __future__ import annotations

import hashlib
import json
import struct
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .concept_discovery import ActionConcept, ActNode, ActTree
from .errors import SchemaError
from .vo_extract import VOPair

CHECKPOINT_VERSION = 1
ACT_VERSION = 1


@dataclass(frozen=True)
class ImagedDescription:
    image_id: str
    description: str
    split: str


@dataclass
class FeatureTable:
    dim: int
    entries: dict[str, np.ndarray]


class EmbeddingTable:
    """Word vectors with a deterministic unit-norm fallback for OOV words."""

    def __init__(self, dim: int, entries: dict[str, np.ndarray], oov_seed: int = 0):
        self.dim = dim
        self.entries = entries
        self.oov_seed = oov_seed
        self._oov_cache: dict[str, np.ndarray] = {}

    def vector(self, word: str) -> np.ndarray:
        vec = self.entries.get(word)
        if vec is not None:
            return vec
        cached = self._oov_cache.get(word)
        if cached is None:
            digest = hashlib.blake2b(
                f"{self.oov_seed}:{word}".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            v = rng.standard_normal(self.dim)
            cached = v / np.linalg.norm(v)
            self._oov_cache[word] = cached
        return cached


@dataclass
class PipelineConfig:
    d_img: int = 4096
    d_w2v: int = 500
    d_text: int = 1000
    d_alg: int = 500
    alpha_c: float = 1.0
    alpha_w: float = 0.01
    batch_size: int = 96
    c_nn: int = 4
    theta_init: float = 0.0
    lr_encoder: float = 0.001
    lr_align: float = 0.001
    max_seq_len: int = 6
    seed: int = 0
    visualness_threshold: float = 0.6
    min_concept_samples: int = 2
    stage1_steps: int = 200
    stage2_steps: int = 100

    def __post_init__(self):
        for name in ("d_img", "d_w2v", "d_text", "d_alg", "batch_size",
                     "max_seq_len", "min_concept_samples", "stage1_steps",
                     "stage2_steps"):
            if getattr(self, name) < 1:
                raise SchemaError(f"config.{name} must be positive")
        if self.alpha_c <= 0 or self.alpha_w < 0:
            raise SchemaError("config: require alpha_c > 0 and alpha_w >= 0")
        if self.c_nn < 1:
            raise SchemaError("config.c_nn must be >= 1")
        if not 0.0 <= self.visualness_threshold <= 1.0:
            raise SchemaError("config.visualness_threshold must be in [0, 1]")
        if self.lr_encoder <= 0 or self.lr_align <= 0:
            raise SchemaError("config: learning rates must be positive")

    @classmethod
    def from_toml(cls, path) -> "PipelineConfig":
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise SchemaError(f"{path}: {e}") from e
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, pairs: list[str]) -> "PipelineConfig":
        """Apply `key=value` strings with field-typed coercion."""
        types = {f.name: f.type for f in fields(self)}
        updates = {}
        for pair in pairs:
            if "=" not in pair:
                raise SchemaError(f"--set expects key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            if key not in types:
                raise SchemaError(f"unknown config key {key!r}")
            caster = int if types[key] == "int" else float
            try:
                updates[key] = caster(value)
            except ValueError as e:
                raise SchemaError(f"bad value for {key}: {value!r}") from e
        return replace(self, **updates)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_corpus(path) -> list[ImagedDescription]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {e}") from e
            for key in ("image_id", "description", "split"):
                if key not in obj:
                    raise SchemaError(f"{path}:{lineno}: missing field {key!r}")
            image_id = obj["image_id"]
            description = obj["description"]
            split = obj["split"]
            if not isinstance(image_id, str) or not image_id:
                raise SchemaError(f"{path}:{lineno}: image_id must be non-empty")
            if not isinstance(description, str) or not description.strip():
                raise SchemaError(f"{path}:{lineno}: description must be non-empty")
            if split not in ("train", "test"):
                raise SchemaError(f"{path}:{lineno}: split must be train|test")
            records.append(ImagedDescription(image_id, description, split))
    if not records:
        raise SchemaError(f"{path}: empty corpus")
    return records


def load_features(path) -> FeatureTable:
    entries: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise SchemaError(f"{path}:{lineno}: expected id and values")
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise SchemaError(f"{path}:{lineno}: non-numeric value") from e
            if not np.all(np.isfinite(vec)):
                raise SchemaError(f"{path}:{lineno}: non-finite value")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise SchemaError(
                    f"{path}:{lineno}: row has {len(vec)} values, expected {dim}")
            entries[parts[0]] = vec
    if dim is None:
        raise SchemaError(f"{path}: empty feature file")
    return FeatureTable(dim=dim, entries=entries)


def load_embeddings(path, seed: int = 0) -> EmbeddingTable:
    entries: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split()
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # optional "<count> <dim>" header
                except ValueError:
                    pass
            word = parts[0].lower()
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise SchemaError(f"{path}:{lineno}: non-numeric value") from e
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise SchemaError(f"{path}:{lineno}: inconsistent dimension")
            entries[word] = vec
    if dim is None:
        raise SchemaError(f"{path}: empty embedding file")
    return EmbeddingTable(dim=dim, entries=entries, oov_seed=seed)


def check_feature_coverage(corpus, features: FeatureTable) -> None:
    """Fail fast if any corpus image lacks a feature vector."""
    missing = sorted({r.image_id for r in corpus} - features.entries.keys())
    if missing:
        raise SchemaError(
            f"{len(missing)} image id(s) missing from features, e.g. {missing[:5]}")


# --- concept tree persistence -------------------------------------------------

def _node_to_json(node: ActNode) -> dict:
    return {
        "name": list(node.name),
        "verb": node.concept.pair.verb if node.concept else None,
        "object": node.concept.pair.object if node.concept else None,
        "images": sorted(node.images),
        "children": [_node_to_json(c) for c in node.children],
    }


def _node_from_json(obj: dict) -> ActNode:
    try:
        name = tuple(obj["name"])
        children = [_node_from_json(c) for c in obj["children"]]
        images = set(obj["images"])
        verb, obj_word = obj["verb"], obj["object"]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed tree node: {e}") from e
    concept = None
    if verb is not None:
        concept = ActionConcept(pair=VOPair(verb=verb, object=obj_word),
                                image_ids=set(images))
    return ActNode(name=name, children=children, concept=concept, images=images)


def save_act(tree: ActTree, path) -> None:
    payload = {"version": ACT_VERSION, "root": _node_to_json(tree.root)}
    Path(path).write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_act(path) -> ActTree:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid tree file: {e}") from e
    if payload.get("version") != ACT_VERSION:
        raise SchemaError(f"{path}: unknown tree schema version {payload.get('version')!r}")
    return ActTree(root=_node_from_json(payload["root"]))


# --- checkpoint persistence ---------------------------------------------------

def save_checkpoint(model, opt_states: dict, path) -> None:
    """Persist model parameters plus per-subnetwork Adam state, bit-exactly."""
    param_order = sorted(model.params)
    arrays: list[np.ndarray] = [model.params[k] for k in param_order]
    adam_meta = {}
    for opt_name in sorted(opt_states):
        state = opt_states[opt_name]
        adam_meta[opt_name] = {"t": state.t, "lr": state.lr,
                               "params": sorted(state.m)}
        for k in adam_meta[opt_name]["params"]:
            arrays.append(state.m[k])
            arrays.append(state.v[k])
    header = {
        "version": CHECKPOINT_VERSION,
        "dims": model.dims,
        "param_order": param_order,
        "shapes": {k: list(model.params[k].shape) for k in param_order},
        "adam": adam_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, config: PipelineConfig | None = None):
    """Restore (model, opt_states). With a config, dimensions must match."""
    from .asa_model import AdamState, AsaModel

    with open(path, "rb") as f:
        raw = f.read(4)
        if len(raw) < 4:
            raise SchemaError(f"{path}: truncated checkpoint")
        (hlen,) = struct.unpack("<I", raw)
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise SchemaError(f"{path}: bad checkpoint header: {e}") from e
        if header.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unknown checkpoint version")
        dims = header["dims"]
        if config is not None:
            for key in ("d_img", "d_w2v", "d_text", "d_alg", "max_seq_len"):
                if dims[key] != getattr(config, key):
                    raise SchemaError(
                        f"{path}: checkpoint {key}={dims[key]} does not match "
                        f"config {key}={getattr(config, key)}")

        def read_array(shape):
            count = int(np.prod(shape)) if shape else 1
            data = f.read(count * 8)
            if len(data) != count * 8:
                raise SchemaError(f"{path}: truncated checkpoint data")
            return np.frombuffer(data, dtype="<f8").reshape(shape).copy()

        params = {k: read_array(header["shapes"][k]) for k in header["param_order"]}
        opt_states = {}
        for opt_name in sorted(header["adam"]):
            meta = header["adam"][opt_name]
            state = AdamState(lr=meta["lr"])
            state.t = meta["t"]
            for k in meta["params"]:
                state.m[k] = read_array(header["shapes"][k])
                state.v[k] = read_array(header["shapes"][k])
            opt_states[opt_name] = state
    model = AsaModel(params=params, dims=dims)
    return model, opt_states
