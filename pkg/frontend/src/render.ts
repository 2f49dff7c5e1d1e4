// Canvas rendering: grayscale occupancy, velocity hue overlay, cluster hulls
// styled by review status, and per-cluster heading arrows.

import { ClusterRecord, FramePayload, decodeRaster } from "./api";
import { Overlays } from "./state";
import { hslToRgb, hueForHeading, occupancyGray, reviewColor, SPEED_SATURATION_LIMIT } from "./color";

export interface Rasters {
  occupancy: Float32Array;
  meanVx: Float32Array;
  meanVy: Float32Array;
}

export function decodeRasters(payload: FramePayload): Rasters {
  return {
    occupancy: decodeRaster(payload.occupancy_b64, payload.side),
    meanVx: decodeRaster(payload.mean_vx_b64, payload.side),
    meanVy: decodeRaster(payload.mean_vy_b64, payload.side),
  };
}

// Grid rows grow with world +y; canvas rows grow downward.
function cellToCanvas(row: number, col: number, side: number, scale: number) {
  return { x: col * scale, y: (side - 1 - row) * scale };
}

export function renderFrame(
  canvas: HTMLCanvasElement,
  payload: FramePayload,
  rasters: Rasters,
  overlays: Overlays,
  selectedCluster: number | null,
): void {
  const side = payload.side;
  const scale = Math.max(1, Math.floor(canvas.width / side));
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  const image = ctx.createImageData(side, side);
  for (let row = 0; row < side; row++) {
    for (let col = 0; col < side; col++) {
      const i = row * side + col;
      const px = ((side - 1 - row) * side + col) * 4;
      let r: number, g: number, b: number;
      const gray = overlays.occupancy ? occupancyGray(rasters.occupancy[i]) : 255;
      r = g = b = gray;
      if (overlays.velocity) {
        const vx = rasters.meanVx[i];
        const vy = rasters.meanVy[i];
        const speed = Math.hypot(vx, vy);
        if (speed > 0.5 && rasters.occupancy[i] > 0.6) {
          const hue = hueForHeading(Math.atan2(vy, vx));
          const sat = Math.min(speed, SPEED_SATURATION_LIMIT) / SPEED_SATURATION_LIMIT;
          [r, g, b] = hslToRgb(hue, Math.round(sat * 100), 45);
        }
      }
      image.data[px] = r;
      image.data[px + 1] = g;
      image.data[px + 2] = b;
      image.data[px + 3] = 255;
    }
  }
  // draw the cell image scaled up without smoothing
  const off = new OffscreenCanvas(side, side);
  const offCtx = off.getContext("2d")!;
  offCtx.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, side * scale, side * scale);

  if (overlays.hulls) {
    for (const cluster of payload.clusters) {
      drawHull(ctx, cluster, side, scale, cluster.cluster_id === selectedCluster);
    }
  }
  if (overlays.headings) {
    for (const cluster of payload.clusters) {
      drawHeading(ctx, cluster, side, scale);
    }
  }
}

function drawHull(
  ctx: CanvasRenderingContext2D,
  cluster: ClusterRecord,
  side: number,
  scale: number,
  selected: boolean,
): void {
  if (cluster.hull.length === 0) return;
  ctx.strokeStyle = reviewColor(cluster.review);
  ctx.lineWidth = selected ? 3 : 1.5;
  ctx.beginPath();
  cluster.hull.forEach(([row, col], i) => {
    const { x, y } = cellToCanvas(row, col, side, scale);
    const cx = x + scale / 2;
    const cy = y + scale / 2;
    if (i === 0) ctx.moveTo(cx, cy);
    else ctx.lineTo(cx, cy);
  });
  ctx.closePath();
  ctx.stroke();
}

function drawHeading(
  ctx: CanvasRenderingContext2D,
  cluster: ClusterRecord,
  side: number,
  scale: number,
): void {
  const heading = cluster.heading_cnn ?? cluster.heading_vel;
  if (heading === null || cluster.cells.length === 0) return;
  let sumRow = 0;
  let sumCol = 0;
  for (const [row, col] of cluster.cells) {
    sumRow += row;
    sumCol += col;
  }
  const center = cellToCanvas(sumRow / cluster.cells.length, sumCol / cluster.cells.length, side, scale);
  const cx = center.x + scale / 2;
  const cy = center.y + scale / 2;
  const len = Math.max(3, Math.sqrt(cluster.n_cells)) * scale;
  // +y in the world is up on the canvas
  const dx = Math.cos(heading) * len;
  const dy = -Math.sin(heading) * len;
  ctx.strokeStyle = "#111111";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + dx, cy + dy);
  ctx.stroke();
  const tip = Math.atan2(dy, dx);
  ctx.beginPath();
  ctx.moveTo(cx + dx, cy + dy);
  ctx.lineTo(cx + dx - 6 * Math.cos(tip - 0.4), cy + dy - 6 * Math.sin(tip - 0.4));
  ctx.moveTo(cx + dx, cy + dy);
  ctx.lineTo(cx + dx - 6 * Math.cos(tip + 0.4), cy + dy - 6 * Math.sin(tip + 0.4));
  ctx.stroke();
}

/** Map a canvas click back to a cluster id, if any hull contains the cell. */
export function clusterAt(
  payload: FramePayload,
  canvasX: number,
  canvasY: number,
  canvasWidth: number,
): number | null {
  const side = payload.side;
  const scale = Math.max(1, Math.floor(canvasWidth / side));
  const col = Math.floor(canvasX / scale);
  const row = side - 1 - Math.floor(canvasY / scale);
  for (const cluster of payload.clusters) {
    if (cluster.cells.some(([r, c]) => r === row && c === col)) {
      return cluster.cluster_id;
    }
  }
  // fall back to the nearest cluster within a couple of cells
  let best: { id: number; d2: number } | null = null;
  for (const cluster of payload.clusters) {
    for (const [r, c] of cluster.cells) {
      const d2 = (r - row) ** 2 + (c - col) ** 2;
      if (d2 <= 9 && (best === null || d2 < best.d2)) {
        best = { id: cluster.cluster_id, d2 };
      }
    }
  }
  return best ? best.id : null;
}
