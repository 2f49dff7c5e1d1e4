// View state and its transitions. The UI never mutates labels locally: a
// pending action is cleared only by a server acknowledgment (or failure),
// and the displayed frame is always the payload the server last returned.

import { FrameIndexEntry, FramePayload, ReviewAction, SplitProgress } from "./api";

export interface Overlays {
  occupancy: boolean;
  velocity: boolean;
  hulls: boolean;
  headings: boolean;
}

export interface ViewState {
  frameIds: string[];
  currentIndex: number;
  payload: FramePayload | null;
  selectedCluster: number | null;
  pendingAction: ReviewAction | null;
  overlays: Overlays;
  message: string;
}

export function initialState(): ViewState {
  return {
    frameIds: [],
    currentIndex: -1,
    payload: null,
    selectedCluster: null,
    pendingAction: null,
    overlays: { occupancy: true, velocity: true, hulls: true, headings: true },
    message: "",
  };
}

export function withIndex(state: ViewState, entries: FrameIndexEntry[]): ViewState {
  const ids = entries.map((e) => e.id);
  const currentIndex = ids.length ? Math.max(0, Math.min(state.currentIndex, ids.length - 1)) : -1;
  return { ...state, frameIds: ids, currentIndex };
}

export function withPayload(state: ViewState, payload: FramePayload): ViewState {
  // selection must belong to the displayed frame
  const stillThere =
    state.selectedCluster !== null &&
    payload.clusters.some((c) => c.cluster_id === state.selectedCluster);
  return {
    ...state,
    payload,
    selectedCluster: stillThere ? state.selectedCluster : null,
    pendingAction: null,
  };
}

export function selectCluster(state: ViewState, clusterId: number | null): ViewState {
  if (clusterId === null || state.payload === null) {
    return { ...state, selectedCluster: null };
  }
  const known = state.payload.clusters.some((c) => c.cluster_id === clusterId);
  return { ...state, selectedCluster: known ? clusterId : state.selectedCluster };
}

export function cycleCluster(state: ViewState, delta: number): ViewState {
  if (!state.payload || state.payload.clusters.length === 0) return state;
  const ids = state.payload.clusters.map((c) => c.cluster_id);
  const at = state.selectedCluster === null ? -1 : ids.indexOf(state.selectedCluster);
  const next = ((at + delta) % ids.length + ids.length) % ids.length;
  return { ...state, selectedCluster: ids[next] };
}

export function stepFrame(state: ViewState, delta: number): number | null {
  if (state.frameIds.length === 0) return null;
  const next = state.currentIndex + delta;
  if (next < 0 || next >= state.frameIds.length) return null;
  return next;
}

export function beginAction(state: ViewState, action: ReviewAction): ViewState {
  if (state.pendingAction !== null) return state; // one submission at a time
  const needsCluster = action === "accept" || action === "reject" || action === "flip-to-static";
  if (needsCluster && state.selectedCluster === null) {
    return { ...state, message: "select a cluster first" };
  }
  return { ...state, pendingAction: action, message: "" };
}

export function actionFailed(state: ViewState, status: number, detail: string): ViewState {
  const message =
    status === 409
      ? `conflict: ${detail} - refresh the frame`
      : status === 0
        ? `submission failed, not saved: ${detail}`
        : `error ${status}: ${detail}`;
  return { ...state, pendingAction: null, message };
}

/** Progress numbers mirror the server's counts; nothing is derived locally. */
export function progressSummary(progress: Record<string, SplitProgress>): string {
  const parts: string[] = [];
  for (const split of Object.keys(progress).sort()) {
    const p = progress[split];
    parts.push(`${split}: ${p.reviewed}/${p.total} reviewed, ${p.skipped} skipped`);
  }
  return parts.join("  |  ");
}

export function totalsConsistent(progress: Record<string, SplitProgress>): boolean {
  return Object.values(progress).every(
    (p) => p.pending + p.reviewed + p.skipped === p.total,
  );
}
