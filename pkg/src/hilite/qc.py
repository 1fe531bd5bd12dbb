"""Dataset manifesting, misalignment rejection and stratified sampling.

On-disk layout::

    <root>/<category>/<light>/<angle>/<environment>/<id>_hl.png
    <root>/<category>/<light>/<angle>/<environment>/<id>_gt.png

An optional ``<root>/languages.csv`` (columns ``id,language``) supplies the
language tag; pairs it does not list get ``DEFAULT_LANGUAGE``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from . import imagecore, prior
from .errors import DuplicateIdError, EmptyManifestError, EmptyRootError, ManifestError

log = logging.getLogger(__name__)

CATEGORIES = ("single_leaf", "book", "poster", "menu", "card", "plastic_sleeved")
LIGHTS = ("cold", "white", "warm", "red", "yellow", "green", "cyan", "blue", "purple")
ANGLES = ("vertical", "deg15", "deg30", "deg45", "gt45")
ENVIRONMENTS = ("laboratory", "daily")
LABEL_FIELDS = ("category", "light", "angle", "environment", "language")
CSV_HEADER = ("id", "highlight_path", "gt_path", "category", "light", "angle", "environment", "language")
LAYOUTS = ("default",)
DEFAULT_LANGUAGE = "und"

_ROLE_SUFFIX = {"_hl": "highlight", "_gt": "gt"}
_ALLOWED = {"category": CATEGORIES, "light": LIGHTS, "angle": ANGLES, "environment": ENVIRONMENTS}


@dataclass(frozen=True)
class PairRecord:
    id: str
    highlight_path: str
    gt_path: str
    category: str
    light: str
    angle: str
    environment: str
    language: str = DEFAULT_LANGUAGE

    def __post_init__(self):
        for name, allowed in _ALLOWED.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ManifestError(f"{self.id}: {name} {value!r} not in {allowed}")


@dataclass(frozen=True)
class SkippedEntry:
    path: str
    reason: str


@dataclass
class Manifest:
    records: list[PairRecord]
    source_root: str = ""
    skipped: list[SkippedEntry] = field(default_factory=list)

    def __post_init__(self):
        seen: dict[str, PairRecord] = {}
        for r in self.records:
            if r.id in seen:
                raise DuplicateIdError(r.id, seen[r.id].highlight_path, r.highlight_path)
            seen[r.id] = r

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]


@dataclass(frozen=True)
class AlignmentConfig:
    dilation: int = 5
    max_shift: int = 8
    residual_tol: float = 0.02
    prior: prior.PriorConfig = field(default_factory=prior.PriorConfig)


@dataclass(frozen=True)
class AlignmentReport:
    pair_id: str
    residual_outside_mask: float
    estimated_shift: tuple[int, int]
    verdict: str

    @property
    def aligned(self) -> bool:
        return self.verdict == "aligned"

    def to_json(self) -> dict:
        residual = self.residual_outside_mask
        return {
            "pair_id": self.pair_id,
            "residual_outside_mask": residual if math.isfinite(residual) else "inf",
            "estimated_shift": list(self.estimated_shift),
            "verdict": self.verdict,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AlignmentReport":
        return cls(
            pair_id=obj["pair_id"],
            residual_outside_mask=float(obj["residual_outside_mask"]),
            estimated_shift=tuple(int(v) for v in obj["estimated_shift"]),
            verdict=obj["verdict"],
        )


# --------------------------------------------------------------------------
# scanning


def _read_languages(root: Path) -> dict[str, str]:
    path = root / "languages.csv"
    if not path.is_file():
        return {}
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["id"]: row["language"] for row in csv.DictReader(fh)}


def _split_name(stem: str) -> tuple[str, str] | None:
    for suffix, role in _ROLE_SUFFIX.items():
        if stem.endswith(suffix) and len(stem) > len(suffix):
            return stem[: -len(suffix)], role
    return None


def scan_manifest(root, layout: str = "default") -> Manifest:
    """Discover highlight/ground-truth pairs under ``root``.

    Files that do not fit the layout, carry unknown labels, or lack their
    partner are listed in ``Manifest.skipped`` with a reason.
    """
    if layout not in LAYOUTS:
        raise ManifestError(f"unknown layout {layout!r}; known: {', '.join(LAYOUTS)}")
    root = Path(root)
    if not root.is_dir():
        raise EmptyRootError(f"root directory does not exist: {root}")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "languages.csv")
    if not files:
        raise EmptyRootError(f"no files under {root}")
    languages = _read_languages(root)

    skipped: list[SkippedEntry] = []
    groups: dict[tuple[Path, str], dict[str, Path]] = {}
    for path in files:
        rel = path.relative_to(root)
        if not imagecore.is_image_file(path):
            skipped.append(SkippedEntry(str(path), "not an image file"))
            continue
        if len(rel.parts) != 5:
            skipped.append(SkippedEntry(
                str(path), "expected <category>/<light>/<angle>/<environment>/<id>_{hl,gt}.<ext>"))
            continue
        split = _split_name(path.stem)
        if split is None:
            skipped.append(SkippedEntry(str(path), "file name lacks the _hl or _gt suffix"))
            continue
        pair_id, role = split
        slot = groups.setdefault((path.parent, pair_id), {})
        if role in slot:
            skipped.append(SkippedEntry(str(path), f"second {role} file for id {pair_id!r}"))
            continue
        slot[role] = path

    records: dict[str, PairRecord] = {}
    for (folder, pair_id), slot in sorted(groups.items()):
        labels = dict(zip(("category", "light", "angle", "environment"), folder.relative_to(root).parts))
        missing = {"highlight", "gt"} - slot.keys()
        if missing:
            present = next(iter(slot.values()))
            skipped.append(SkippedEntry(str(present), f"missing {missing.pop()} file"))
            continue
        bad = [f"{k} {v!r}" for k, v in labels.items() if v not in _ALLOWED[k]]
        if bad:
            skipped.append(SkippedEntry(str(slot["highlight"]), "unknown " + ", ".join(bad)))
            continue
        if pair_id in records:
            raise DuplicateIdError(pair_id, records[pair_id].highlight_path, str(slot["highlight"]))
        records[pair_id] = PairRecord(
            id=pair_id,
            highlight_path=str(slot["highlight"]),
            gt_path=str(slot["gt"]),
            language=languages.get(pair_id, DEFAULT_LANGUAGE),
            **labels,
        )
    for entry in skipped:
        log.info("skipped %s: %s", entry.path, entry.reason)
    return Manifest(records=[records[k] for k in sorted(records)], source_root=str(root),
                    skipped=skipped)


# --------------------------------------------------------------------------
# serialization


def write_manifest_csv(m: Manifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in m.records:
            writer.writerow([getattr(r, k) for k in CSV_HEADER])


def read_manifest_csv(path, source_root: str = "") -> Manifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(CSV_HEADER)}")
        records = [PairRecord(**row) for row in reader]
    return Manifest(records=records, source_root=source_root)


def write_manifest_jsonl(m: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in m.records:
            fh.write(json.dumps(asdict(r)) + "\n")


def read_manifest_jsonl(path, source_root: str = "") -> Manifest:
    with open(path, encoding="utf-8") as fh:
        records = [PairRecord(**json.loads(line)) for line in fh if line.strip()]
    return Manifest(records=records, source_root=source_root)


def read_manifest(path) -> Manifest:
    """Read a manifest from ``.csv`` or ``.jsonl`` by extension."""
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".json"):
        return read_manifest_jsonl(path)
    return read_manifest_csv(path)


def write_reports_jsonl(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_json()) + "\n")


def read_reports_jsonl(path) -> list[AlignmentReport]:
    with open(path, encoding="utf-8") as fh:
        return [AlignmentReport.from_json(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# alignment


def _gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    g = gray.astype(np.float64)
    return np.hypot(ndimage.sobel(g, axis=0, mode="nearest"), ndimage.sobel(g, axis=1, mode="nearest"))


def _window_sums(img: np.ndarray, wh: int, ww: int) -> np.ndarray:
    """Sum of ``img`` over every ``wh x ww`` window (valid positions only)."""
    c = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    c[1:, 1:] = img.cumsum(axis=0).cumsum(axis=1)
    return c[wh:, ww:] - c[:-wh, ww:] - c[wh:, :-ww] + c[:-wh, :-ww]


def estimate_shift(highlight_gray, gt_gray, max_shift: int = 8) -> tuple[int, int]:
    """Integer ``(dx, dy)`` such that ``highlight[y + dy, x + dx]`` best matches ``gt[y, x]``.

    Scores are normalized cross-correlations of gradient magnitudes between
    the central window of ``gt`` and every displaced window of
    ``highlight``. Smooth highlight blobs barely register in gradient
    magnitude, and neither does a global illumination offset. Near-ties go
    to the smallest displacement, so featureless pairs report ``(0, 0)``.
    """
    a = _gradient_magnitude(np.asarray(gt_gray))
    b = _gradient_magnitude(np.asarray(highlight_gray))
    h, w = a.shape
    s = min(max_shift, max(0, min(h, w) // 2 - 1))
    ref = a[s:h - s, s:w - s]
    wh, ww = ref.shape
    n = ref.size
    ref = ref - ref.mean()
    ref_norm = math.sqrt(float((ref * ref).sum()))
    num = signal.correlate(b, ref, mode="valid", method="fft")
    win_sum = _window_sums(b, wh, ww)
    win_var = np.maximum(_window_sums(b * b, wh, ww) - win_sum**2 / n, 0.0)
    den = ref_norm * np.sqrt(win_var)
    scores = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
    order = sorted(
        ((dx, dy) for dy in range(-s, s + 1) for dx in range(-s, s + 1)),
        key=lambda d: (abs(d[0]) + abs(d[1]), d[1], d[0]),
    )
    best, best_score = (0, 0), -math.inf
    for dx, dy in order:
        score = scores[dy + s, dx + s]
        # FFT round-off is ~1e-12; demand a real improvement to move off a tie
        if score > best_score + 1e-9:
            best, best_score = (dx, dy), score
    return best


def dilate(mask, radius: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask
    return ndimage.binary_dilation(mask, structure=np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool))


def check_alignment_images(pair_id: str, highlight, gt, cfg: AlignmentConfig | None = None) -> AlignmentReport:
    """Alignment verdict for an in-memory pair; see :func:`check_alignment`."""
    cfg = cfg or AlignmentConfig()
    highlight = imagecore.as_image(highlight)
    gt = imagecore.as_image(gt)
    if highlight.shape[:2] != gt.shape[:2]:
        return AlignmentReport(pair_id, math.inf, (0, 0), "misaligned")
    g_hl = imagecore.to_grayscale(highlight).astype(np.float64)
    g_gt = imagecore.to_grayscale(gt).astype(np.float64)
    _, binary = prior.generate_prior(g_hl, g_gt, cfg.prior)
    region = dilate(binary, cfg.dilation)
    outside = ~region
    residual = float(np.abs(g_hl - g_gt)[outside].mean()) if outside.any() else 0.0
    shift = estimate_shift(g_hl, g_gt, cfg.max_shift)
    aligned = residual <= cfg.residual_tol and shift == (0, 0)
    return AlignmentReport(pair_id, residual, shift, "aligned" if aligned else "misaligned")


def check_alignment(pair: PairRecord, cfg: AlignmentConfig | None = None) -> AlignmentReport:
    """Flag a pair whose residual outside the dilated highlight mask is too large,
    or whose gradient cross-correlation peaks away from zero displacement.
    """
    highlight = imagecore.load_image(pair.highlight_path)
    gt = imagecore.load_image(pair.gt_path)
    return check_alignment_images(pair.id, highlight, gt, cfg)


def check_all(m: Manifest, cfg: AlignmentConfig | None = None, jobs: int = 1) -> list[AlignmentReport]:
    """One report per record, in manifest order regardless of ``jobs``."""
    cfg = cfg or AlignmentConfig()
    if jobs <= 1:
        return [check_alignment(r, cfg) for r in m.records]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda r: check_alignment(r, cfg), m.records))


def filter_aligned(m: Manifest, cfg: AlignmentConfig | None = None,
                   jobs: int = 1) -> tuple[Manifest, list[AlignmentReport]]:
    if not m.records:
        raise EmptyManifestError("manifest has no records")
    reports = check_all(m, cfg, jobs)
    kept = [r for r, rep in zip(m.records, reports) if rep.aligned]
    rejected = [rep for rep in reports if not rep.aligned]
    return Manifest(records=kept, source_root=m.source_root), rejected


# --------------------------------------------------------------------------
# sampling


def _stratum_key(r: PairRecord, strata) -> tuple:
    return tuple(getattr(r, f) for f in strata)


def strata_groups(m: Manifest, strata) -> dict[tuple, list[PairRecord]]:
    for f in strata:
        if f not in LABEL_FIELDS:
            raise ManifestError(f"unknown stratum field {f!r}; choose from {', '.join(LABEL_FIELDS)}")
    groups: dict[tuple, list[PairRecord]] = {}
    for r in m.records:
        groups.setdefault(_stratum_key(r, strata), []).append(r)
    return {k: sorted(v, key=lambda r: r.id) for k, v in sorted(groups.items())}


def stratum_quota(fraction: float, n: int) -> int:
    """``ceil(fraction * n)`` computed on the decimal value of ``fraction``.

    ``0.1 * 70`` is ``7.000000000000001`` in floats; the exact rational
    avoids that off-by-one.
    """
    return math.ceil(Fraction(str(fraction)) * n)


def stratified_sample(m: Manifest, fraction: float, strata, seed: int) -> Manifest:
    """Sample ``ceil(fraction * n)`` records per stratum without replacement."""
    if not m.records:
        raise EmptyManifestError("manifest has no records")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    chosen: list[PairRecord] = []
    for members in strata_groups(m, list(strata)).values():
        k = stratum_quota(fraction, len(members))
        picks = rng.choice(len(members), size=k, replace=False)
        chosen.extend(members[i] for i in picks)
    chosen.sort(key=lambda r: r.id)
    return Manifest(records=chosen, source_root=m.source_root)
