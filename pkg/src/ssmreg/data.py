"""Dataset records, on-disk layout, and the reconstruction tooling.

Layout: <root>/<plant_id>/<modality>/<timestamp>.png with sibling labels/
(files "<modality>_<timestamp>.png"), masks/ ("<modality>_<timestamp>.mask.png")
and, for synthetic data, flow/ ("<t_moving>_<t_fixed>.npz"). The pair manifest
pairs.tsv sits at the root; empty cells mean "no file" (train records carry
no label paths).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from random import Random

import numpy as np
from PIL import Image

MANIFEST_HEADER = "# pairs.tsv schema=1"
MANIFEST_COLUMNS = ("moving_path", "fixed_path", "moving_label_path",
                    "fixed_label_path", "moving_mask_path", "fixed_mask_path",
                    "plant_id", "t_moving", "t_fixed")
NON_MODALITY_DIRS = {"labels", "masks", "flow"}


@dataclass
class PairRecord:
    moving_path: str
    fixed_path: str
    moving_label_path: str | None
    fixed_label_path: str | None
    moving_mask_path: str
    fixed_mask_path: str
    plant_id: str
    t_moving: str
    t_fixed: str

    @property
    def has_labels(self) -> bool:
        return bool(self.moving_label_path) and bool(self.fixed_label_path)

    def strip_labels(self) -> "PairRecord":
        return replace(self, moving_label_path=None, fixed_label_path=None)


def load_image(path, channels: int | None = None) -> np.ndarray:
    """PNG -> float32 in [0,1]; H x W for 1 channel, H x W x 3 otherwise."""
    if Path(path).suffix.lower() in (".jpg", ".jpeg"):
        import warnings
        warnings.warn(f"{path}: lossy format, intensities are approximate")
    img = Image.open(path)
    if channels == 1:
        img = img.convert("L")
    elif channels == 3:
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr


def save_image(arr: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)
    return path


def load_labels(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.int64)


def save_labels(arr: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(arr)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("label ids must fit uint8 storage")
    Image.fromarray(arr.astype(np.uint8)).save(path)
    return path


def _relativize(p: str, root: Path) -> str:
    try:
        return Path(p).relative_to(root).as_posix()
    except ValueError:
        return p


def write_manifest(records, path) -> Path:
    """Paths are stored relative to the manifest directory when possible, so
    a dataset tree can be moved (and hashed) as a unit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    lines = [MANIFEST_HEADER, "\t".join(MANIFEST_COLUMNS)]
    for r in records:
        cells = [r.moving_path, r.fixed_path,
                 r.moving_label_path or "", r.fixed_label_path or "",
                 r.moving_mask_path, r.fixed_mask_path]
        cells = [_relativize(str(Path(c).resolve()), root) if c else ""
                 for c in cells]
        lines.append("\t".join(cells + [r.plant_id, r.t_moving, r.t_fixed]))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> list[PairRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#") or "schema=1" not in lines[0]:
        raise ValueError(f"{path}: not a schema=1 pair manifest")
    root = Path(path).resolve().parent

    def absolve(cell):
        if not cell:
            return None
        p = Path(cell)
        return cell if p.is_absolute() else str(root / p)

    records = []
    for line in lines[2:]:
        if not line.strip():
            continue
        cells = line.split("\t")
        records.append(PairRecord(
            moving_path=absolve(cells[0]), fixed_path=absolve(cells[1]),
            moving_label_path=absolve(cells[2]),
            fixed_label_path=absolve(cells[3]),
            moving_mask_path=absolve(cells[4]), fixed_mask_path=absolve(cells[5]),
            plant_id=cells[6], t_moving=cells[7], t_fixed=cells[8],
        ))
    return records


def _timestamp_key(ts: str):
    m = re.search(r"(\d+)", ts)
    return (0, int(m.group(1))) if m else (1, ts)


def _list_frames(mod_dir: Path) -> list[str]:
    stems = [p.stem for p in mod_dir.iterdir() if p.is_file()]
    return sorted(stems, key=_timestamp_key)


def _bbox_square(label: np.ndarray, margin: float):
    """Tight box of nonzero labels, margin-expanded, squared, kept in frame."""
    ys, xs = np.nonzero(label)
    if ys.size == 0:
        return None
    H, W = label.shape
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    side = max(y1 - y0, x1 - x0)
    side = min(round(side * (1 + 2 * margin)), min(H, W))
    cy, cx = (y0 + y1) / 2, (x0 + x1) / 2
    top = int(round(cy - side / 2))
    left = int(round(cx - side / 2))
    top = max(0, min(top, H - side))
    left = max(0, min(left, W - side))
    return top, left, side


def crop_by_latest_labels(plant_dir, out_dir, margin: float = 0.1,
                          size=(128, 128)) -> list[str]:
    """Crop every frame of each modality by the latest labeled frame's box.

    Returns warning strings for modalities that could not be processed.
    """
    plant_dir, out_dir = Path(plant_dir), Path(out_dir)
    labels_dir = plant_dir / "labels"
    warnings = []
    for mod_dir in sorted(p for p in plant_dir.iterdir()
                          if p.is_dir() and p.name not in NON_MODALITY_DIRS):
        mod = mod_dir.name
        labeled = sorted(labels_dir.glob(f"{mod}_*"),
                         key=lambda p: _timestamp_key(p.stem[len(mod) + 1:])) \
            if labels_dir.is_dir() else []
        if not labeled:
            warnings.append(f"{plant_dir.name}/{mod}: no labeled frame, skipped")
            continue
        latest = load_labels(labeled[-1])
        box = _bbox_square(latest, margin)
        if box is None:
            warnings.append(f"{plant_dir.name}/{mod}: empty latest label, skipped")
            continue
        top, left, side = box
        for frame in mod_dir.iterdir():
            img = Image.open(frame)
            crop = img.crop((left, top, left + side, top + side))
            out = out_dir / mod / frame.name
            out.parent.mkdir(parents=True, exist_ok=True)
            crop.resize((size[1], size[0]), Image.BILINEAR).save(out)
        for lab in labels_dir.glob(f"{mod}_*"):
            img = Image.open(lab)
            crop = img.crop((left, top, left + side, top + side))
            out = out_dir / "labels" / lab.name
            out.parent.mkdir(parents=True, exist_ok=True)
            crop.resize((size[1], size[0]), Image.NEAREST).save(out)
    return warnings


def _instance_count(label_path: Path) -> int:
    lab = load_labels(label_path)
    return int(np.unique(lab[lab > 0]).size)


@dataclass
class PairRule:
    moving_modality: str = "rgb"
    fixed_modality: str = "ir"
    min_dt: int = 0
    max_dt: int | None = None


def select_pairs(root, rule: PairRule = PairRule()) -> list[PairRecord]:
    """Enumerate same-plant cross-modality pairs under the timestamp rule.

    When both frames carry labels the instance counts must match; unlabeled
    frames pair freely (their records carry no label paths).
    """
    root = Path(root)
    records = []
    for plant in sorted(p for p in root.iterdir() if p.is_dir()):
        mov_dir = plant / rule.moving_modality
        fix_dir = plant / rule.fixed_modality
        if not (mov_dir.is_dir() and fix_dir.is_dir()):
            continue
        counts = {}
        for t1, t2 in product(_list_frames(mov_dir), _list_frames(fix_dir)):
            k1, k2 = _timestamp_key(t1), _timestamp_key(t2)
            if k1[0] == 0 and k2[0] == 0:
                dt = abs(k1[1] - k2[1])
                if dt < rule.min_dt or (rule.max_dt is not None and dt > rule.max_dt):
                    continue
            lab1 = plant / "labels" / f"{rule.moving_modality}_{t1}.png"
            lab2 = plant / "labels" / f"{rule.fixed_modality}_{t2}.png"
            both_labeled = lab1.is_file() and lab2.is_file()
            if both_labeled:
                for lp in (lab1, lab2):
                    if lp not in counts:
                        counts[lp] = _instance_count(lp)
                if counts[lab1] != counts[lab2]:
                    continue
            mov = next(mov_dir.glob(f"{t1}.*"))
            fix = next(fix_dir.glob(f"{t2}.*"))
            records.append(PairRecord(
                moving_path=str(mov), fixed_path=str(fix),
                moving_label_path=str(lab1) if both_labeled else None,
                fixed_label_path=str(lab2) if both_labeled else None,
                moving_mask_path=str(plant / "masks"
                                     / f"{rule.moving_modality}_{t1}.mask.png"),
                fixed_mask_path=str(plant / "masks"
                                    / f"{rule.fixed_modality}_{t2}.mask.png"),
                plant_id=plant.name, t_moving=t1, t_fixed=t2,
            ))
    return records


def make_splits(records, train_n: int = 300, test_n: int = 900,
                seed: int = 0):
    """Seeded disjoint train/test sampling; train records lose their labels.

    Test pairs come from the labeled pool; train pairs prefer the unlabeled
    pool and top up from the labeled remainder (stripped) when it runs dry.
    """
    rng = Random(seed)
    labeled = [r for r in records if r.has_labels]
    unlabeled = [r for r in records if not r.has_labels]
    test = rng.sample(labeled, min(test_n, len(labeled)))
    taken = {id(r) for r in test}
    pool = unlabeled + [r for r in labeled if id(r) not in taken]
    train = [r.strip_labels() for r in rng.sample(pool, min(train_n, len(pool)))]
    return train, test
