import { describe, expect, it } from "vitest";
import { FramePayload } from "../src/api";
import {
  actionFailed,
  beginAction,
  cycleCluster,
  initialState,
  progressSummary,
  selectCluster,
  stepFrame,
  totalsConsistent,
  withIndex,
  withPayload,
} from "../src/state";

function payload(id: string, clusterIds: number[]): FramePayload {
  return {
    id,
    side: 8,
    cell_size: 0.25,
    timestamp: 1.0,
    split: "train",
    provenance: "baseline-auto",
    status: "pending",
    occupancy_b64: "",
    mean_vx_b64: "",
    mean_vy_b64: "",
    labels_b64: "",
    clusters: clusterIds.map((cid) => ({
      frame_id: id,
      cluster_id: cid,
      n_cells: 4,
      cells: [[0, 0]],
      hull: [[0, 0]],
      mean_speed: 1,
      mean_normalized_speed: 1,
      mean_mahalanobis: 1,
      suppression_p: 1,
      heading_vel: 0,
      heading_cnn: null,
      review: "auto",
    })),
  };
}

describe("selection invariant", () => {
  it("selected cluster always belongs to the current frame", () => {
    let s = withPayload(initialState(), payload("f0", [0, 1]));
    s = selectCluster(s, 1);
    expect(s.selectedCluster).toBe(1);
    // a new payload without cluster 1 clears the selection
    s = withPayload(s, payload("f1", [7]));
    expect(s.selectedCluster).toBeNull();
  });

  it("ignores selections of unknown clusters", () => {
    let s = withPayload(initialState(), payload("f0", [0]));
    s = selectCluster(s, 42);
    expect(s.selectedCluster).toBeNull();
  });

  it("cycles through clusters in order", () => {
    let s = withPayload(initialState(), payload("f0", [3, 5, 9]));
    s = cycleCluster(s, 1);
    expect(s.selectedCluster).toBe(3);
    s = cycleCluster(s, 1);
    expect(s.selectedCluster).toBe(5);
    s = cycleCluster(s, -1);
    expect(s.selectedCluster).toBe(3);
  });
});

describe("actions", () => {
  it("cluster verbs require a selection", () => {
    const s = withPayload(initialState(), payload("f0", [0]));
    const attempted = beginAction(s, "reject");
    expect(attempted.pendingAction).toBeNull();
    expect(attempted.message).toContain("select");
  });

  it("skip-frame needs no selection", () => {
    const s = withPayload(initialState(), payload("f0", [0]));
    expect(beginAction(s, "skip-frame").pendingAction).toBe("skip-frame");
  });

  it("only one submission at a time", () => {
    let s = withPayload(initialState(), payload("f0", [0]));
    s = selectCluster(s, 0);
    s = beginAction(s, "reject");
    const again = beginAction(s, "accept");
    expect(again.pendingAction).toBe("reject");
  });

  it("payload acknowledgment clears the pending action", () => {
    let s = withPayload(initialState(), payload("f0", [0]));
    s = selectCluster(s, 0);
    s = beginAction(s, "accept");
    s = withPayload(s, payload("f0", [0]));
    expect(s.pendingAction).toBeNull();
  });

  it("a 409 asks for a refresh and a network failure is visible", () => {
    let s = withPayload(initialState(), payload("f0", [0]));
    s = selectCluster(s, 0);
    s = beginAction(s, "reject");
    const conflicted = actionFailed(s, 409, "cluster 0 already accepted");
    expect(conflicted.pendingAction).toBeNull();
    expect(conflicted.message).toContain("refresh");
    const offline = actionFailed(s, 0, "server unreachable");
    expect(offline.message).toContain("not saved");
  });
});

describe("frame navigation", () => {
  it("steps within bounds only", () => {
    let s = initialState();
    s = withIndex(s, [
      { id: "a", split: "train", timestamp: 0, status: "pending", provenance: "x" },
      { id: "b", split: "train", timestamp: 1, status: "pending", provenance: "x" },
    ]);
    s = { ...s, currentIndex: 0 };
    expect(stepFrame(s, 1)).toBe(1);
    expect(stepFrame(s, -1)).toBeNull();
    s = { ...s, currentIndex: 1 };
    expect(stepFrame(s, 1)).toBeNull();
  });
});

describe("progress", () => {
  it("renders the server counts and checks totals", () => {
    const progress = {
      train: { pending: 2, reviewed: 3, skipped: 1, total: 6 },
      test: { pending: 1, reviewed: 0, skipped: 0, total: 1 },
    };
    expect(totalsConsistent(progress)).toBe(true);
    const text = progressSummary(progress);
    expect(text).toContain("train: 3/6 reviewed");
    expect(text).toContain("test: 0/1 reviewed");
    expect(
      totalsConsistent({ train: { pending: 1, reviewed: 1, skipped: 0, total: 3 } }),
    ).toBe(false);
  });
});
