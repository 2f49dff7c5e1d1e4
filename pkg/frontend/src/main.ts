// Application bootstrap: frame list, canvas, review actions, keyboard
// shortcuts. Label changes only ever come back from the server; a failed
// submission is shown and nothing is queued.

import { ApiError, Client, FramePayload, ReviewAction } from "./api";
import { clusterAt, decodeRasters, renderFrame } from "./render";
import {
  ViewState,
  actionFailed,
  beginAction,
  cycleCluster,
  initialState,
  progressSummary,
  selectCluster,
  stepFrame,
  withIndex,
  withPayload,
} from "./state";

const client = new Client("");
let state: ViewState = initialState();
let paintMode = false;
let paintedCells: number[][] = [];

const canvas = document.getElementById("grid") as HTMLCanvasElement;
const frameLabel = document.getElementById("frame-label")!;
const clusterPanel = document.getElementById("cluster-panel")!;
const progressBar = document.getElementById("progress")!;
const messageBar = document.getElementById("message")!;

function setState(next: ViewState): void {
  state = next;
  draw();
}

function draw(): void {
  messageBar.textContent = state.message;
  if (!state.payload) {
    frameLabel.textContent = "no frame";
    return;
  }
  const p = state.payload;
  frameLabel.textContent =
    `${p.id}  [${p.split}]  t=${p.timestamp.toFixed(1)}s  ` +
    `${p.status}  (${state.currentIndex + 1}/${state.frameIds.length})`;
  renderFrame(canvas, p, decodeRasters(p), state.overlays, state.selectedCluster);
  renderClusterPanel(p);
}

function renderClusterPanel(p: FramePayload): void {
  const rows = p.clusters
    .map((c) => {
      const heading =
        c.heading_cnn ?? c.heading_vel;
      const deg = heading === null ? "-" : ((heading * 180) / Math.PI).toFixed(0);
      const cls = c.cluster_id === state.selectedCluster ? "cluster selected" : "cluster";
      return (
        `<div class="${cls}" data-cluster="${c.cluster_id}">` +
        `#${c.cluster_id} ${c.review} | ${c.n_cells} cells | ` +
        `v=${c.mean_speed.toFixed(1)} m/s | m=${c.mean_mahalanobis.toFixed(1)} | ` +
        `p=${c.suppression_p.toFixed(1)} | heading ${deg}&deg;</div>`
      );
    })
    .join("");
  clusterPanel.innerHTML = rows || "<div class='cluster'>no clusters</div>";
  for (const el of Array.from(clusterPanel.querySelectorAll(".cluster[data-cluster]"))) {
    el.addEventListener("click", () => {
      setState(selectCluster(state, Number((el as HTMLElement).dataset.cluster)));
    });
  }
}

async function refreshIndex(): Promise<void> {
  const index = await client.listFrames();
  progressBar.textContent = progressSummary(index.progress);
  setState(withIndex(state, index.frames));
}

async function loadFrame(index: number): Promise<void> {
  const id = state.frameIds[index];
  if (!id) return;
  try {
    const payload = await client.getFrame(id);
    state = { ...state, currentIndex: index };
    setState(withPayload(state, payload));
  } catch (err) {
    showError(err);
  }
}

function showError(err: unknown): void {
  if (err instanceof ApiError) {
    setState(actionFailed(state, err.status, err.message));
  } else {
    setState(actionFailed(state, 0, String(err)));
  }
}

async function submit(action: ReviewAction): Promise<void> {
  const before = state;
  const next = beginAction(state, action);
  if (next.pendingAction === null) {
    setState(next);
    return;
  }
  setState(next);
  const clusterId =
    action === "add-region" || action === "skip-frame" ? null : state.selectedCluster;
  const region = action === "add-region" ? paintedCells : undefined;
  try {
    const payload = await client.postCorrection(state.payload!.id, action, clusterId, region);
    paintedCells = [];
    setState(withPayload({ ...state, message: `${action} saved` }, payload));
    await refreshIndex();
    if (action === "skip-frame") {
      const idx = stepFrame(state, 1);
      if (idx !== null) await loadFrame(idx);
    }
  } catch (err) {
    // no optimistic state to roll back: the canvas still shows `before`'s payload
    state = { ...before };
    showError(err);
  }
}

function toggleOverlay(name: keyof ViewState["overlays"]): void {
  setState({
    ...state,
    overlays: { ...state.overlays, [name]: !state.overlays[name] },
  });
}

canvas.addEventListener("click", (ev) => {
  if (!state.payload) return;
  const rect = canvas.getBoundingClientRect();
  const x = ev.clientX - rect.left;
  const y = ev.clientY - rect.top;
  if (paintMode) {
    const side = state.payload.side;
    const scale = Math.max(1, Math.floor(canvas.width / side));
    const col = Math.floor(x / scale);
    const row = side - 1 - Math.floor(y / scale);
    paintedCells.push([row, col]);
    setState({ ...state, message: `${paintedCells.length} cells painted (Enter to submit)` });
    return;
  }
  setState(selectCluster(state, clusterAt(state.payload, x, y, canvas.width)));
});

document.addEventListener("keydown", async (ev) => {
  if (ev.defaultPrevented) return;
  switch (ev.key) {
    case "ArrowRight": {
      const idx = stepFrame(state, 1);
      if (idx !== null) await loadFrame(idx);
      break;
    }
    case "ArrowLeft": {
      const idx = stepFrame(state, -1);
      if (idx !== null) await loadFrame(idx);
      break;
    }
    case "Tab":
      ev.preventDefault();
      setState(cycleCluster(state, ev.
        shiftKey ? -1 : 1));
      break;
    case "a":
      await submit("accept");
      break;
    case "r":
      await submit("reject");
      break;
    case "f":
      await submit("flip-to-static");
      break;
    case "s":
      await submit("skip-frame");
      break;
    case "p":
      paintMode = !paintMode;
      paintedCells = [];
      setState({ ...state, message: paintMode ? "paint mode: click cells, Enter to submit" : "" });
      break;
    case "Enter":
      if (paintMode && paintedCells.length) {
        paintMode = false;
        await submit("add-region");
      }
      break;
    case "1":
      toggleOverlay("occupancy");
      break;
    case "2":
      toggleOverlay("velocity");
      break;
    case "3":
      toggleOverlay("hulls");
      break;
    case "4":
      toggleOverlay("headings");
      break;
  }
});

(async () => {
  try {
    await refreshIndex();
    if (state.frameIds.length) await loadFrame(0);
  } catch (err) {
    showError(err);
  }
})();
