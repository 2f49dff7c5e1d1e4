// Typed client for the annotation service. Every number shown in the UI
// comes from these payloads; the client never invents label state locally.

export interface ClusterRecord {
  frame_id: string;
  cluster_id: number;
  n_cells: number;
  cells: number[][];
  hull: number[][];
  mean_speed: number;
  mean_normalized_speed: number;
  mean_mahalanobis: number;
  suppression_p: number;
  heading_vel: number | null;
  heading_cnn: number | null;
  review: string;
}

export interface FramePayload {
  id: string;
  side: number;
  cell_size: number;
  timestamp: number;
  split: string;
  provenance: string;
  status: string;
  occupancy_b64: string;
  mean_vx_b64: string;
  mean_vy_b64: string;
  labels_b64: string;
  clusters: ClusterRecord[];
}

export interface FrameIndexEntry {
  id: string;
  split: string;
  timestamp: number;
  status: string;
  provenance: string;
}

export interface SplitProgress {
  pending: number;
  reviewed: number;
  skipped: number;
  total: number;
}

export interface FrameIndex {
  frames: FrameIndexEntry[];
  total: number;
  offset: number;
  progress: Record<string, SplitProgress>;
}

export type ReviewAction =
  | "accept"
  | "reject"
  | "flip-to-static"
  | "add-region"
  | "skip-frame";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

/** Raw little-endian float32 raster shipped as base64. */
export function decodeRaster(b64: string, side: number): Float32Array {
  const binary = atob(b64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    bytes[i] = binary.charCodeAt(i);
  }
  const floats = new Float32Array(bytes.buffer);
  if (floats.length !== side * side) {
    throw new Error(`raster holds ${floats.length} values, expected ${side * side}`);
  }
  return floats;
}

export class Client {
  constructor(private base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `server unreachable: ${err}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        // keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response.json() as Promise<T>;
  }

  listFrames(split?: string, offset = 0, limit = 500): Promise<FrameIndex> {
    const params = new URLSearchParams({ offset: String(offset), limit: String(limit) });
    if (split) params.set("split", split);
    return this.request<FrameIndex>(`/frames?${params}`);
  }

  getFrame(id: string): Promise<FramePayload> {
    return this.request<FramePayload>(`/frames/${encodeURIComponent(id)}`);
  }

  postCorrection(
    id: string,
    action: ReviewAction,
    clusterId: number | null,
    region?: number[][],
  ): Promise<FramePayload> {
    return this.request<FramePayload>(`/frames/${encodeURIComponent(id)}/corrections`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ cluster_id: clusterId, action, region: region ?? null }),
    });
  }
}
