"""Tensor containers, dataset manifests, block atlases and stratified splits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DTYPE_TAG = "f32le"
LAYOUT_TAG = "row-major"
MANIFEST_HEADER = ["subject_id", "label", "ts_path", "fa_path"]


class ContainerError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class TensorContainer:
    """N-d float32 array plus a free-form string metadata map.

    On disk a container is a directory holding ``meta.json`` and ``data.bin``
    (raw little-endian float32, row-major).
    """

    shape: list[int]
    payload: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_array(cls, array, **meta) -> "TensorContainer":
        arr = np.asarray(array, dtype="<f4")
        return cls(list(arr.shape), arr.ravel(), {k: str(v) for k, v in meta.items()})

    def to_array(self) -> np.ndarray:
        return np.asarray(self.payload, dtype=np.float32).reshape(self.shape)


def write_tensor(t: TensorContainer, path) -> None:
    shape = [int(s) for s in t.shape]
    if not shape or any(s <= 0 for s in shape):
        raise ContainerError(f"shape must be non-empty with positive entries, got {shape}")
    payload = np.ascontiguousarray(np.asarray(t.payload).ravel(), dtype="<f4")
    if payload.size != int(np.prod(shape)):
        raise ContainerError(
            f"payload/shape mismatch: {payload.size} scalars for shape {shape}"
        )
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "shape": shape,
            "dtype": DTYPE_TAG,
            "layout": LAYOUT_TAG,
            "meta": {str(k): str(v) for k, v in t.meta.items()},
        }
        (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        (path / "data.bin").write_bytes(payload.tobytes())
    except OSError as exc:
        raise ContainerError(f"cannot write container at {path}: {exc}") from exc


def read_tensor(path) -> TensorContainer:
    path = Path(path)
    meta_file, data_file = path / "meta.json", path / "data.bin"
    if not meta_file.is_file() or not data_file.is_file():
        raise ContainerError(f"missing container files in {path}")
    info = json.loads(meta_file.read_text())
    if info.get("dtype") != DTYPE_TAG:
        raise ContainerError(f"unsupported dtype {info.get('dtype')!r}")
    if info.get("layout", LAYOUT_TAG) != LAYOUT_TAG:
        raise ContainerError(f"unsupported layout {info.get('layout')!r}")
    shape = [int(s) for s in info["shape"]]
    expected = int(np.prod(shape)) * 4
    raw = data_file.read_bytes()
    if len(raw) < expected:
        raise ContainerError(f"truncated payload: {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise ContainerError(f"payload/shape mismatch: {len(raw)} bytes, expected {expected}")
    payload = np.frombuffer(raw, dtype="<f4").copy()
    return TensorContainer(shape, payload, dict(info.get("meta", {})))


def save_array(path, array, **meta) -> None:
    write_tensor(TensorContainer.from_array(array, **meta), path)


def load_array(path) -> np.ndarray:
    return read_tensor(path).to_array()


@dataclass(frozen=True)
class BlockAtlas:
    """Parcellation of an X*Y*Z grid into rectangular ROI blocks.

    ``blocks[k]`` is ``(x0, x1, y0, y1, z0, z1)`` with half-open bounds.
    """

    grid: tuple[int, int, int]
    blocks: tuple[tuple[int, int, int, int, int, int], ...]

    def __post_init__(self):
        occupied = np.zeros(self.grid, dtype=bool)
        for k, (x0, x1, y0, y1, z0, z1) in enumerate(self.blocks):
            if not (0 <= x0 < x1 <= self.grid[0] and 0 <= y0 < y1 <= self.grid[1]
                    and 0 <= z0 < z1 <= self.grid[2]):
                raise ValueError(f"atlas block {k} lies outside grid {self.grid}")
            if occupied[x0:x1, y0:y1, z0:z1].any():
                raise ValueError(f"atlas block {k} overlaps another block")
            occupied[x0:x1, y0:y1, z0:z1] = True

    @classmethod
    def regular(cls, grid, arrangement) -> "BlockAtlas":
        """Tile ``grid`` with an ``arrangement`` of equal blocks, x-major ordering."""
        grid = tuple(int(g) for g in grid)
        arrangement = tuple(int(a) for a in arrangement)
        if any(g % a for g, a in zip(grid, arrangement)):
            raise ValueError(f"grid {grid} not divisible by arrangement {arrangement}")
        size = [g // a for g, a in zip(grid, arrangement)]
        blocks = []
        for i in range(arrangement[0]):
            for j in range(arrangement[1]):
                for k in range(arrangement[2]):
                    blocks.append((i * size[0], (i + 1) * size[0],
                                   j * size[1], (j + 1) * size[1],
                                   k * size[2], (k + 1) * size[2]))
        return cls(grid, tuple(blocks))

    @property
    def n_rois(self) -> int:
        return len(self.blocks)

    def mask(self, roi: int) -> np.ndarray:
        out = np.zeros(self.grid, dtype=bool)
        x0, x1, y0, y1, z0, z1 = self.blocks[roi]
        out[x0:x1, y0:y1, z0:z1] = True
        return out

    def block_means(self, volume) -> np.ndarray:
        volume = np.asarray(volume)
        return np.array([volume[x0:x1, y0:y1, z0:z1].mean()
                         for x0, x1, y0, y1, z0, z1 in self.blocks])

    def to_dict(self) -> dict:
        return {"grid": list(self.grid), "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d) -> "BlockAtlas":
        return cls(tuple(d["grid"]), tuple(tuple(b) for b in d["blocks"]))


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    label: int
    paths: dict


@dataclass
class DatasetManifest:
    """Subject table plus cohort metadata; paths are resolved against ``root``."""

    rows: list[ManifestRow]
    cohort: dict
    root: Path = Path(".")

    def __post_init__(self):
        ids = [r.subject_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate subject_id in manifest")
        n_classes = self.n_classes
        for r in self.rows:
            if not 0 <= r.label < n_classes:
                raise ManifestError(f"label {r.label} of {r.subject_id} outside 0..{n_classes - 1}")

    @property
    def class_names(self) -> list[str]:
        return list(self.cohort.get("class_names", []))

    @property
    def n_classes(self) -> int:
        names = self.class_names
        if names:
            return len(names)
        return max((r.label for r in self.rows), default=-1) + 1

    @property
    def subject_ids(self) -> list[str]:
        return [r.subject_id for r in self.rows]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.rows], dtype=int)

    @property
    def atlas(self) -> BlockAtlas:
        return BlockAtlas.from_dict(self.cohort["atlas"])

    def resolve(self, row: ManifestRow, key: str) -> Path:
        p = Path(row.paths[key])
        return p if p.is_absolute() else self.root / p

    def subset(self, subject_ids) -> "DatasetManifest":
        keep = set(subject_ids)
        return DatasetManifest([r for r in self.rows if r.subject_id in keep], self.cohort, self.root)

    def row(self, subject_id: str) -> ManifestRow:
        for r in self.rows:
            if r.subject_id == subject_id:
                return r
        raise KeyError(subject_id)

    def check_paths(self) -> None:
        for r in self.rows:
            for key in r.paths:
                if not self.resolve(r, key).exists():
                    raise ManifestError(f"unresolvable path {key} for {r.subject_id}")


def write_manifest(m: DatasetManifest, path, cohort_name: str = "cohort.json") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = [k for k in m.rows[0].paths] if m.rows else []
    header = ["subject_id", "label"] + [f"{k}_path" for k in keys]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in m.rows:
            w.writerow([r.subject_id, r.label] + [str(r.paths[k]) for k in keys])
    (path.parent / cohort_name).write_text(json.dumps(m.cohort, indent=2, sort_keys=True))


def read_manifest(path, cohort_name: str = "cohort.json") -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found")
    cohort_file = path.parent / cohort_name
    cohort = json.loads(cohort_file.read_text()) if cohort_file.is_file() else {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if header[:2] != ["subject_id", "label"]:
            raise ManifestError(f"manifest header must start with subject_id,label; got {header}")
        keys = [h[: -len("_path")] for h in header[2:] if h.endswith("_path")]
        rows = [ManifestRow(rec["subject_id"], int(rec["label"]),
                            {k: rec[f"{k}_path"] for k in keys}) for rec in reader]
    return DatasetManifest(rows, cohort, path.parent)


def split_dataset(m: DatasetManifest, fold: int, n_folds: int = 10, seed: int = 0):
    """Stratified train/val/test partition with rotating held-out blocks.

    Each class is shuffled with ``seed`` and cut into ``n_folds`` chunks; chunk
    ``fold`` is the test block and chunk ``fold + 1`` the validation block, so
    ``n_folds=10`` gives the 8:1:1 proportions.
    """
    if n_folds < 3:
        raise ValueError("n_folds must be >= 3")
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold {fold} outside 0..{n_folds - 1}")
    labels = m.labels
    ids = np.array(m.subject_ids, dtype=object)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in np.unique(labels):
        members = ids[labels == c]
        if len(members) < n_folds:
            raise ValueError(f"too few subjects in class {c}: {len(members)} < n_folds={n_folds}")
        members = members[rng.permutation(len(members))]
        chunks = np.array_split(members, n_folds)
        for k, chunk in enumerate(chunks):
            if k == fold:
                test.extend(chunk)
            elif k == (fold + 1) % n_folds:
                val.extend(chunk)
            else:
                train.extend(chunk)
    order = {sid: i for i, sid in enumerate(m.subject_ids)}
    parts = [sorted(p, key=order.__getitem__) for p in (train, val, test)]
    return tuple(m.subset(p) for p in parts)
