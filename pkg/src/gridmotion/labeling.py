"""Semi-automatic label generation, dataset splitting and the self-training loop.

The label store is a directory: per-frame base labels (the automatic pass),
per-frame current labels (base plus corrections), cluster records, a manifest
with split membership and provenance, and an append-only audit log of every
correction. Replaying the audit log over the base labels reproduces the
current labels exactly, and the store serializes writers, so concurrent
correction submissions cannot interleave.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clusters import (
    DbscanConfig,
    LabeledCluster,
    cluster_from_record,
    cluster_record,
    make_clusters,
    read_cluster_records,
    refine_with_occupancy,
    write_cluster_records,
)
from .sim import LABEL_DYNAMIC, LABEL_STATIC

PROVENANCES = ("simulator", "baseline-auto", "cnn-auto", "human-corrected")
SPLITS = ("train", "validation", "test")
ACTIONS = ("accept", "reject", "flip-to-static", "add-region", "skip-frame")


class CorrectionConflict(ValueError):
    """Raised when a correction clashes with the current review state."""


class UnknownCluster(KeyError):
    pass


@dataclass
class SuppressionConfig:
    mode: str = "combined-p"      # none | normalized-speed | combined-p
    threshold: float = 0.0
    min_cluster_cells: int = 1

    def __post_init__(self):
        if self.mode not in ("none", "normalized-speed", "combined-p"):
            raise ValueError(f"unknown suppression mode {self.mode!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")


def suppress(clusters: list[LabeledCluster],
             config: SuppressionConfig) -> list[LabeledCluster]:
    """Drop clusters failing the false-positive criterion; never adds any."""
    out = []
    for cl in clusters:
        if cl.size < config.min_cluster_cells:
            continue
        if config.mode == "combined-p" and cl.suppression_p < config.threshold:
            continue
        if config.mode == "normalized-speed" and \
                cl.mean_normalized_speed < config.threshold:
            continue
        out.append(cl)
    return out


# -- classifiers for the automatic pass -----------------------------------------------


@dataclass
class FrameData:
    """Everything the automatic labelers may need for one frame."""

    stats: object                  # StatsMap
    occupied: np.ndarray
    encoded: object = None         # EncodedFrame (cnn mode)


class BaselineClassifier:
    """Velocity-statistics baseline at a fixed score threshold."""

    def __init__(self, threshold: float, occupied_threshold: float = 0.6):
        self.threshold = threshold
        self.occupied_threshold = occupied_threshold

    def dynamic_mask(self, frame: FrameData) -> np.ndarray:
        from .clusters import baseline_classify

        _, mask = baseline_classify(frame.stats, self.threshold,
                                    self.occupied_threshold)
        return mask

    def head_maps(self, frame: FrameData):
        return None, None


class CnnClassifier:
    """Trained network thresholded on the dynamic-class probability."""

    def __init__(self, net, prob_threshold: float):
        self.net = net
        self.prob_threshold = prob_threshold

    def dynamic_mask(self, frame: FrameData) -> np.ndarray:
        from .encode import network_input

        out = self.net.predict(network_input(frame.encoded,
                                             dtype=np.dtype(self.net.dtype)))
        self._last = out
        return out["prob_dynamic"] >= self.prob_threshold

    def head_maps(self, frame: FrameData):
        out = getattr(self, "_last", None)
        if out is None or "sin" not in out:
            return None, None
        return out["sin"], out["cos"]


def auto_label(frame: FrameData, classifier,
               db: DbscanConfig = DbscanConfig()):
    """Classify, refine with occupancy, cluster. Returns (labels, clusters).

    Cells outside the surviving clusters are static.
    """
    mask = refine_with_occupancy(classifier.dynamic_mask(frame), frame.occupied)
    sin_map, cos_map = classifier.head_maps(frame)
    clusters = make_clusters(mask, frame.stats, db, sin_map, cos_map)
    labels = np.full(mask.shape, LABEL_STATIC, dtype=np.int8)
    for cl in clusters:
        for (r, c) in cl.cells:
            labels[r, c] = LABEL_DYNAMIC
    return labels, clusters


# -- dataset splitting ----------------------------------------------------------------


@dataclass
class Dataset:
    """Frame ids per split plus per-frame label provenance."""

    splits: dict = field(default_factory=lambda: {s: [] for s in SPLITS})
    provenance: dict = field(default_factory=dict)   # frame id -> provenance
    gap_frames: list = field(default_factory=list)   # excluded buffer frames

    def split_of(self, frame_id) -> str | None:
        for name, ids in self.splits.items():
            if frame_id in ids:
                return name
        return None

    def all_ids(self):
        return [i for ids in self.splits.values() for i in ids]


def split_dataset(frame_ids: list, fractions=(0.8, 0.1, 0.1),
                  min_gap: int = 20, seed: int = 0,
                  provenance: str = "simulator") -> Dataset:
    """Assign time-ordered frames to contiguous train/validation/test segments.

    Buffer frames between segments (min_gap per boundary) belong to no split,
    so consecutive frames of different splits are at least min_gap apart in
    the source sequence. Segment order is drawn from the seed.
    """
    n = len(frame_ids)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    usable = n - 2 * min_gap
    if usable < 10:
        raise ValueError(f"{n} frames leave too little data with gap {min_gap}")
    sizes = [int(round(usable * f)) for f in fractions]
    sizes[0] = usable - sizes[1] - sizes[2]
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(3))

    ds = Dataset()
    pos = 0
    for k, part in enumerate(order):
        name = SPLITS[part]
        take = sizes[part]
        ds.splits[name] = list(frame_ids[pos:pos + take])
        pos += take
        if k < 2:
            ds.gap_frames.extend(frame_ids[pos:pos + min_gap])
            pos += min_gap
    for fid in ds.all_ids():
        ds.provenance[fid] = provenance
    return ds


def merge_auto_labeled(dataset: Dataset, new_ids: list,
                       provenance: str = "cnn-auto") -> Dataset:
    """New training frames join the train split; other splits are untouched."""
    out = Dataset(splits={s: list(ids) for s, ids in dataset.splits.items()},
                  provenance=dict(dataset.provenance),
                  gap_frames=list(dataset.gap_frames))
    for fid in new_ids:
        if out.split_of(fid) is not None:
            raise ValueError(f"frame {fid} already belongs to a split")
        out.splits["train"].append(fid)
        out.provenance[fid] = provenance
    return out


def ssl_round(train_set: Dataset, unlabeled_ids: list, net, suppression,
              take_every: int, frame_loader, db: DbscanConfig = DbscanConfig(),
              prob_threshold: float = 0.5):
    """One self-training round: auto-label a subsample, suppress, merge.

    `frame_loader(frame_id) -> FrameData`. Returns (augmented dataset,
    {frame_id: (labels, clusters)}). Validation/test splits are never touched.
    """
    if take_every < 1:
        raise ValueError("take_every must be >= 1")
    chosen = list(unlabeled_ids)[::take_every]
    classifier = CnnClassifier(net, prob_threshold)
    results = {}
    for fid in chosen:
        frame = frame_loader(fid)
        labels, clusters = auto_label(frame, classifier, db)
        kept = suppress(clusters, suppression)
        if len(kept) != len(clusters):
            labels = np.full(labels.shape, LABEL_STATIC, dtype=np.int8)
            for cl in kept:
                for (r, c) in cl.cells:
                    labels[r, c] = LABEL_DYNAMIC
        results[fid] = (labels, kept)
    return merge_auto_labeled(train_set, chosen), results


# -- label store ----------------------------------------------------------------------


class LabelStore:
    """Directory-backed label state with an append-only audit log.

    Single-writer: every mutation takes the store lock, applies, persists,
    and appends one audit record before returning.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.lock = threading.Lock()
        (self.root / "base").mkdir(parents=True, exist_ok=True)
        (self.root / "labels").mkdir(exist_ok=True)
        (self.root / "clusters").mkdir(exist_ok=True)
        self.manifest_path = self.root / "store.json"
        self.audit_path = self.root / "audit.log"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = {"frames": {}}

    # -- ingest ------------------------------------------------------------

    def add_frame(self, frame_id: str, labels: np.ndarray,
                  clusters: list[LabeledCluster], split: str,
                  provenance: str, timestamp: float = 0.0) -> None:
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        with self.lock:
            np.save(self.root / "base" / f"{frame_id}.npy", labels)
            np.save(self.root / "labels" / f"{frame_id}.npy", labels)
            write_cluster_records(clusters, frame_id,
                                  self.root / "clusters" / f"{frame_id}.jsonl")
            self.manifest["frames"][frame_id] = {
                "split": split, "provenance": provenance,
                "timestamp": timestamp, "status": "pending",
            }
            self._persist_manifest()

    def _persist_manifest(self):
        self.manifest_path.write_text(
            json.dumps(self.manifest, sort_keys=True, indent=1))

    # -- reads ---------------------------------------------------------------

    def frame_ids(self, split: str | None = None) -> list[str]:
        frames = self.manifest["frames"]
        ids = sorted(frames)
        if split is not None:
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r}")
            ids = [i for i in ids if frames[i]["split"] == split]
        return ids

    def labels(self, frame_id: str) -> np.ndarray:
        return np.load(self.root / "labels" / f"{frame_id}.npy")

    def clusters(self, frame_id: str) -> list[LabeledCluster]:
        path = self.root / "clusters" / f"{frame_id}.jsonl"
        return [cluster_from_record(r) for r in read_cluster_records(path)]

    def export_labels(self, frame_id: str) -> np.ndarray:
        """Training labels with all corrections applied."""
        return self.labels(frame_id)

    def progress(self) -> dict:
        counts = {}
        for fid, meta in self.manifest["frames"].items():
            split = meta["split"]
            entry = counts.setdefault(split, {"pending": 0, "reviewed": 0,
                                              "skipped": 0, "total": 0})
            entry["total"] += 1
            status = meta.get("status", "pending")
            key = status if status in entry else "pending"
            entry[key] += 1
        return counts

    # -- corrections -----------------------------------------------------------

    def apply_correction(self, frame_id: str, cluster_id: int | None,
                         action: str, region: list | None = None) -> None:
        """Apply one review action, persist it, append the audit record."""
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        with self.lock:
            if frame_id not in self.manifest["frames"]:
                raise KeyError(f"unknown frame {frame_id}")
            self._apply(frame_id, cluster_id, action, region)
            with open(self.audit_path, "a") as fh:
                fh.write(json.dumps(
                    {"seq": self._next_seq(), "frame": frame_id,
                     "cluster": cluster_id, "action": action,
                     "region": region}, sort_keys=True) + "\n")

    def _next_seq(self) -> int:
        if not self.audit_path.exists():
            return 0
        return sum(1 for line in self.audit_path.read_text().splitlines()
                   if line.strip())

    def _apply(self, frame_id, cluster_id, action, region):
        labels = self.labels(frame_id)
        clusters = self.clusters(frame_id)
        meta = self.manifest["frames"][frame_id]

        if action == "skip-frame":
            meta["status"] = "skipped"
            self._persist_manifest()
            return

        if action == "add-region":
            if not region:
                raise ValueError("add-region requires cells")
            rejected_cells = {tuple(c) for cl in clusters
                              if cl.review in ("rejected", "flipped")
                              for c in cl.cells}
            for (r, c) in region:
                if (r, c) in rejected_cells:
                    raise CorrectionConflict(
                        f"cell ({r}, {c}) belongs to a rejected cluster")
            for (r, c) in region:
                labels[r, c] = LABEL_DYNAMIC
        else:
            target = next((cl for cl in clusters
                           if cl.cluster_id == cluster_id), None)
            if target is None:
                raise UnknownCluster(f"no cluster {cluster_id} in {frame_id}")
            if target.review != "auto":
                raise CorrectionConflict(
                    f"cluster {cluster_id} already {target.review}")
            if action == "accept":
                target.review = "accepted"
            elif action in ("reject", "flip-to-static"):
                target.review = "rejected" if action == "reject" else "flipped"
                for (r, c) in target.cells:
                    labels[r, c] = LABEL_STATIC

        np.save(self.root / "labels" / f"{frame_id}.npy", labels)
        write_cluster_records(clusters, frame_id,
                              self.root / "clusters" / f"{frame_id}.jsonl")
        meta["provenance"] = "human-corrected"
        meta["status"] = "reviewed"
        self._persist_manifest()

    # -- audit replay ------------------------------------------------------------

    def replay(self) -> dict[str, np.ndarray]:
        """Rebuild the current labels from base labels plus the audit log."""
        state = {}
        reviews = {}
        for fid in self.frame_ids():
            state[fid] = np.load(self.root / "base" / f"{fid}.npy")
            base_clusters = [cluster_from_record(r) for r in read_cluster_records(
                self.root / "clusters" / f"{fid}.jsonl")]
            reviews[fid] = {cl.cluster_id: cl for cl in base_clusters}
        if self.audit_path.exists():
            for line in self.audit_path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                fid, action = rec["frame"], rec["action"]
                if action == "skip-frame":
                    continue
                if action == "add-region":
                    for (r, c) in rec["region"]:
                        state[fid][r, c] = LABEL_DYNAMIC
                elif action in ("reject", "flip-to-static"):
                    cl = reviews[fid][rec["cluster"]]
                    for (r, c) in cl.cells:
                        state[fid][r, c] = LABEL_STATIC
        return state
