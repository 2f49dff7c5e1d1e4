"""Local HTTP service for the annotation UI.

Stateless above the label store and frame directory: every response is
derived from what is on disk, and every mutation is persisted (store write
plus audit append) before the response is sent. Rasters travel as base64 of
raw little-endian float32 with explicit dimensions.
"""

from __future__ import annotations

import base64
import math
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import frame_io
from .clusters import cluster_record
from .grid import stats_map
from .labeling import (
    SPLITS,
    CorrectionConflict,
    LabelStore,
    UnknownCluster,
)


class CorrectionRequest(BaseModel):
    cluster_id: int | None = None
    action: str
    region: list[list[int]] | None = None


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode()


def _clean(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def create_app(store: LabelStore, frames_dir, ui_dir=None) -> FastAPI:
    app = FastAPI(title="gridmotion annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["http://localhost", "http://127.0.0.1",
                       "http://localhost:8000", "http://127.0.0.1:8000"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    frames_dir = Path(frames_dir)

    def frame_payload(frame_id: str) -> dict:
        meta = store.manifest["frames"][frame_id]
        path = frames_dir / f"{frame_id}.dgf"
        if not path.exists():
            raise HTTPException(404, f"frame file missing for {frame_id}")
        gmap = frame_io.load_frame(path)
        sm = stats_map(gmap)
        clusters = [
            {k: _clean(v) for k, v in cluster_record(cl, frame_id).items()}
            for cl in store.clusters(frame_id)
        ]
        return {
            "id": frame_id,
            "side": gmap.spec.side_cells,
            "cell_size": gmap.spec.cell_size,
            "timestamp": gmap.timestamp,
            "split": meta["split"],
            "provenance": meta["provenance"],
            "status": meta.get("status", "pending"),
            "occupancy_b64": _b64(gmap.occupancy),
            "mean_vx_b64": _b64(sm.mean_vx),
            "mean_vy_b64": _b64(sm.mean_vy),
            "labels_b64": _b64(store.export_labels(frame_id).astype(np.float32)),
            "clusters": clusters,
        }

    @app.get("/frames")
    def list_frames(split: str | None = None, offset: int = 0, limit: int = 200):
        if split is not None and split not in SPLITS:
            raise HTTPException(400, f"unknown split {split!r}")
        ids = store.frame_ids(split)
        frames = []
        for fid in ids[offset:offset + limit]:
            meta = store.manifest["frames"][fid]
            frames.append({"id": fid, "split": meta["split"],
                           "timestamp": meta.get("timestamp", 0.0),
                           "status": meta.get("status", "pending"),
                           "provenance": meta["provenance"]})
        return {"frames": frames, "total": len(ids), "offset": offset,
                "progress": store.progress()}

    @app.get("/frames/{frame_id}")
    def get_frame(frame_id: str):
        if frame_id not in store.manifest["frames"]:
            raise HTTPException(404, f"unknown frame {frame_id}")
        return frame_payload(frame_id)

    @app.post("/frames/{frame_id}/corrections")
    def post_correction(frame_id: str, body: CorrectionRequest):
        if frame_id not in store.manifest["frames"]:
            raise HTTPException(404, f"unknown frame {frame_id}")
        try:
            store.apply_correction(
                frame_id, body.cluster_id, body.action,
                region=[tuple(c) for c in body.region] if body.region else None)
        except CorrectionConflict as exc:
            raise HTTPException(409, str(exc))
        except UnknownCluster as exc:
            raise HTTPException(404, str(exc))
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return frame_payload(frame_id)

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(store_dir, frames_dir, ui_dir=None, host="127.0.0.1", port=8000):
    import uvicorn

    store = LabelStore(store_dir)
    app = create_app(store, frames_dir, ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
