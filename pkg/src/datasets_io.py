"""
Dataset loaders and stores: Causalogue / Causaction records, externally computed
embedding bundles, and the on-disk layout of synthetic benchmark datasets.
"""
import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import BindingError, DataError, SchemaError, TensorFormatError
from .scm import CausalGraph, Dataset, Sample
from .tensor_core import load_tensor, save_tensor

logger = logging.getLogger(__name__)

CAUSALOGUE_TYPES = [
    "Chain_I", "Chain_II", "Chain_III", "Chain_IV",
    "Fork_I", "Fork_II", "Fork_III", "Fork_IV",
    "Hybrid_I", "Hybrid_II",
]
CAUSACTION_PROCESSES = [
    "cereals", "coffee", "friedegg", "juice", "milk",
    "pancake", "salad", "sandwich", "scrambledegg", "tea",
]
OTHER_LABEL = "Other"
STORE_SCHEMA = 1


@dataclass(frozen=True)
class CausalogueRecord:
    """One dialogue (or action video): N ordered units with lower-triangular labels"""
    causal_type: str
    dia_id: int
    clauses: "OrderedDict[int, str]"   # 0-indexed
    label: np.ndarray                 # N x N, label[i, j] = 1 iff unit j causes unit i
    structure_id: int = -1

    @property
    def n_vars(self) -> int:
        return len(self.clauses)

    def graph(self) -> CausalGraph:
        return CausalGraph.from_adjacency(self.label)


def _parse_label_row(raw, n: int, dia_id) -> List[int]:
    if isinstance(raw, str):
        parts = [p.strip() for p in raw.split(",")]
    elif isinstance(raw, (list, tuple)):
        parts = list(raw)
    else:
        raise SchemaError(f"label row must be a comma-separated string, got {type(raw).__name__}", dia_id)
    if len(parts) != n:
        raise SchemaError(f"label row has {len(parts)} entries, expected {n}", dia_id)
    try:
        values = [int(p) for p in parts]
    except (TypeError, ValueError):
        raise SchemaError(f"label row {raw!r} is not a list of integers", dia_id)
    if any(v not in (0, 1) for v in values):
        raise SchemaError(f"label row {raw!r} must contain only 0 and 1", dia_id)
    return values


def parse_record(raw: Dict[str, Any], allowed_sizes: Iterable[int],
                 vocabulary: Sequence[str]) -> CausalogueRecord:
    """Validate one raw JSON record; file keys are 1-indexed, storage is 0-indexed"""
    if not isinstance(raw, dict):
        raise SchemaError(f"record must be an object, got {type(raw).__name__}")
    dia_id = raw.get("dia_id")
    if not isinstance(dia_id, int) or isinstance(dia_id, bool):
        raise SchemaError(f"dia_id must be an integer, got {dia_id!r}", dia_id)
    causal_type = raw.get("causal_type")
    if not isinstance(causal_type, str):
        raise SchemaError("causal_type must be a string", dia_id)
    if causal_type == OTHER_LABEL:
        structure_id = -1
    elif causal_type in vocabulary:
        structure_id = list(vocabulary).index(causal_type)
    else:
        raise SchemaError(f"unknown causal_type {causal_type!r}", dia_id)

    clauses_raw = raw.get("clause", raw.get("clauses"))
    if not isinstance(clauses_raw, dict) or not clauses_raw:
        raise SchemaError("clause must be a non-empty object of index -> text", dia_id)
    try:
        keys = sorted(int(k) for k in clauses_raw)
    except ValueError:
        raise SchemaError("clause keys must be integers", dia_id)
    n = len(keys)
    if keys != list(range(1, n + 1)):
        raise SchemaError(f"clause keys must be 1..{n}, got {keys}", dia_id)
    if n not in set(allowed_sizes):
        raise SchemaError(f"record has {n} units, allowed sizes are {sorted(set(allowed_sizes))}", dia_id)
    clauses = OrderedDict((k - 1, str(clauses_raw[str(k)] if str(k) in clauses_raw else clauses_raw[k]))
                          for k in keys)

    label_raw = raw.get("label")
    if not isinstance(label_raw, dict):
        raise SchemaError("label must be an object of row index -> row", dia_id)
    label = np.zeros((n, n), dtype=np.int8)
    for i in range(1, n + 1):
        if str(i) not in label_raw:
            raise SchemaError(f"label row {i} is missing", dia_id)
        label[i - 1] = _parse_label_row(label_raw[str(i)], n, dia_id)
    if np.any(np.triu(label) != 0):
        raise SchemaError("label has causes at or above the diagonal (later unit causing earlier)", dia_id)
    return CausalogueRecord(causal_type=causal_type, dia_id=dia_id, clauses=clauses,
                            label=label, structure_id=structure_id)


def _read_json_records(path: str) -> List[Any]:
    if not os.path.exists(path):
        raise DataError(f"Record file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        if text.lstrip().startswith("["):
            return json.loads(text)
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})")


def load_records(path: str, allowed_sizes: Iterable[int], vocabulary: Sequence[str]) -> List[CausalogueRecord]:
    records = [parse_record(raw, allowed_sizes, vocabulary) for raw in _read_json_records(path)]
    seen = set()
    for rec in records:
        if rec.dia_id in seen:
            raise SchemaError("duplicate dia_id", rec.dia_id)
        seen.add(rec.dia_id)
    others = sum(1 for r in records if r.structure_id == -1)
    logger.info("✅ Loaded %d records from %s (%d labeled %s)", len(records), path, others, OTHER_LABEL)
    return records


def load_causalogue(path: str) -> List[CausalogueRecord]:
    """Four-utterance dialogues with one of ten structure types (or Other)"""
    return load_records(path, (4,), CAUSALOGUE_TYPES)


def load_causaction(path: str) -> List[CausalogueRecord]:
    """Cooking-process videos with 4 to 9 ordered actions"""
    return load_records(path, range(4, 10), CAUSACTION_PROCESSES)


@dataclass
class EmbeddingBundle:
    """Precomputed N x D embeddings keyed by record id"""
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def load_dir(cls, directory: str) -> "EmbeddingBundle":
        if not os.path.isdir(directory):
            raise DataError(f"Embedding directory not found: {directory}")
        tensors = {}
        for name in sorted(os.listdir(directory)):
            if name.endswith(".idt"):
                tensors[name[:-4]] = load_tensor(os.path.join(directory, name))
        logger.info("✅ Loaded %d embedding tensors from %s", len(tensors), directory)
        return cls(tensors)

    def save_dir(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        for key, value in self.tensors.items():
            save_tensor(os.path.join(directory, f"{key}.idt"), value)

    def __contains__(self, key) -> bool:
        return str(key) in self.tensors

    def get(self, key) -> np.ndarray:
        return self.tensors[str(key)]


def bind_embeddings(records: Sequence[CausalogueRecord], bundle: EmbeddingBundle,
                    vocabulary: Optional[Sequence[str]] = None) -> Dataset:
    """Pair records with their embeddings; every record id must be present"""
    missing = [r.dia_id for r in records if r.dia_id not in bundle]
    if missing:
        raise BindingError(f"no embeddings for {len(missing)} record(s): {missing[:10]}", missing)
    samples = []
    for rec in records:
        x = np.asarray(bundle.get(rec.dia_id), dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != rec.n_vars:
            raise BindingError(
                f"embedding for dia_id={rec.dia_id} has shape {x.shape}, expected ({rec.n_vars}, D)",
                [rec.dia_id])
        samples.append(Sample(x=x, structure_id=rec.structure_id, ground_truth=rec.graph(),
                              meta={"dia_id": rec.dia_id, "causal_type": rec.causal_type}))
    metadata = {"source": "records", "vocabulary": list(vocabulary or [])}
    return Dataset(samples=samples, metadata=metadata)


def _sha256(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _json_safe(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


class DatasetStore:
    """
    Directory layout:
      manifest.json                 schema, generator config, conventions, checksums
      samples/s00000.idt            3 x N x D stack of (X, C, E), or 1 x N x D of X alone
      samples/s00000.L.idt          confounder values L (K x D), when known
      skeletons/k0000.A.idt         causal strengths A of each structure id
      skeletons/k0000.B.idt         confounder loadings B, when known
    """

    def __init__(self, root: str):
        self.root = root
        self.manifest: Dict[str, Any] = {}

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.root, "manifest.json")

    def _write(self, rel_path: str, data) -> Dict[str, str]:
        path = os.path.join(self.root, rel_path)
        save_tensor(path, data)
        return {"file": rel_path, "sha256": _sha256(path)}

    def _read(self, entry: Dict[str, str]) -> np.ndarray:
        path = os.path.join(self.root, entry["file"])
        if not os.path.exists(path):
            raise TensorFormatError(f"manifest references a missing file: {path}")
        if _sha256(path) != entry["sha256"]:
            raise TensorFormatError(f"{path}: checksum mismatch")
        return load_tensor(path)

    def save(self, dataset: Dataset):
        os.makedirs(os.path.join(self.root, "samples"), exist_ok=True)
        os.makedirs(os.path.join(self.root, "skeletons"), exist_ok=True)
        skeletons: Dict[str, Dict[str, Any]] = {}
        sample_entries = []
        for idx, sample in enumerate(dataset):
            sid = str(sample.structure_id)
            if sample.ground_truth is not None:
                if sid not in skeletons:
                    skeletons[sid] = {"strengths": self._write(
                        f"skeletons/k{len(skeletons):04d}.A.idt", sample.ground_truth.strengths)}
                    if "loadings" in sample.meta:
                        skeletons[sid]["loadings"] = self._write(
                            f"skeletons/k{len(skeletons) - 1:04d}.B.idt", sample.meta["loadings"])
                else:
                    stored = self._read(skeletons[sid]["strengths"])
                    if not np.array_equal(stored, sample.ground_truth.strengths):
                        raise DataError(f"sample {idx}: structure {sid} has conflicting strengths")

            has_truth = sample.confounding is not None and sample.noise is not None
            stack = np.stack([sample.x, sample.confounding, sample.noise]) if has_truth else sample.x[None]
            entry = {
                "structure_id": sample.structure_id,
                "n": sample.n_vars,
                "d": sample.dim,
                "tensor": self._write(f"samples/s{idx:05d}.idt", stack),
                "meta": _json_safe({k: v for k, v in sample.meta.items() if k != "loadings"}),
            }
            if sample.confounders is not None:
                entry["confounders"] = self._write(f"samples/s{idx:05d}.L.idt", sample.confounders)
            sample_entries.append(entry)

        self.manifest = {
            "schema_version": STORE_SCHEMA,
            "generator": _json_safe(dataset.metadata.get("generator", {})),
            "conventions": _json_safe(dataset.metadata.get("conventions", {})),
            "metadata": _json_safe({k: v for k, v in dataset.metadata.items()
                                    if k not in ("generator", "conventions")}),
            "skeletons": skeletons,
            "samples": sample_entries,
        }
        with open(self.manifest_path, "w", encoding="utf-8") as f:
            json.dump(self.manifest, f, indent=2, sort_keys=True)
        logger.info("✅ Saved dataset with %d samples and %d skeletons to %s",
                    len(sample_entries), len(skeletons), self.root)

    def load(self) -> Dataset:
        if not os.path.exists(self.manifest_path):
            raise DataError(f"Dataset manifest not found: {self.manifest_path}")
        with open(self.manifest_path, "r", encoding="utf-8") as f:
            self.manifest = json.load(f)
        if self.manifest.get("schema_version") != STORE_SCHEMA:
            raise DataError(f"Unsupported dataset schema: {self.manifest.get('schema_version')}")

        graphs, loadings = {}, {}
        for sid, entry in self.manifest["skeletons"].items():
            graphs[sid] = CausalGraph.from_strengths(self._read(entry["strengths"]))
            if "loadings" in entry:
                loadings[sid] = self._read(entry["loadings"])

        samples = []
        for entry in self.manifest["samples"]:
            sid = str(entry["structure_id"])
            stack = self._read(entry["tensor"])
            if stack.ndim != 3 or stack.shape[1:] != (entry["n"], entry["d"]):
                raise TensorFormatError(f"{entry['tensor']['file']}: unexpected shape {stack.shape}")
            meta = dict(entry.get("meta", {}))
            if sid in loadings:
                meta["loadings"] = loadings[sid]
            samples.append(Sample(
                x=stack[0].copy(),
                structure_id=entry["structure_id"],
                ground_truth=graphs.get(sid),
                confounding=stack[1].copy() if stack.shape[0] == 3 else None,
                noise=stack[2].copy() if stack.shape[0] == 3 else None,
                confounders=self._read(entry["confounders"]) if "confounders" in entry else None,
                meta=meta,
            ))
        metadata = dict(self.manifest.get("metadata", {}))
        metadata["generator"] = self.manifest.get("generator", {})
        metadata["conventions"] = self.manifest.get("conventions", {})
        logger.info("✅ Loaded dataset with %d samples from %s", len(samples), self.root)
        return Dataset(samples=samples, metadata=metadata)

    def get_stats(self) -> Dict[str, Any]:
        if not self.manifest:
            return {"status": "not_loaded"}
        sizes = sorted({s["n"] for s in self.manifest["samples"]})
        return {
            "status": "loaded",
            "total_samples": len(self.manifest["samples"]),
            "skeletons": len(self.manifest["skeletons"]),
            "sizes": sizes,
            "embedding_dim": self.manifest["samples"][0]["d"] if self.manifest["samples"] else None,
        }


def save_synthetic(dataset: Dataset, directory: str) -> DatasetStore:
    store = DatasetStore(directory)
    store.save(dataset)
    return store


def load_synthetic(directory: str) -> Dataset:
    return DatasetStore(directory).load()
