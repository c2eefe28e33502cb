/**
 * Typed client for the annotation service's HTTP/JSON API.
 *
 * Every mutation the UI performs goes through this module; the UI holds
 * no authoritative state of its own.  The fetch implementation is
 * injectable so tests can run against a scripted transport.
 */

export interface PoseJson {
  t: [number, number, number];
  q: [number, number, number, number];
}

export interface SessionInfo {
  id: string;
  volume_id: string;
  pose: PoseJson;
  t_step: number;
  rot_step_deg: number;
  undo_depth: number;
}

export interface VolumeInfo {
  id: string;
  dims: [number, number, number];
  spacing_mm: number;
}

export interface Annotation {
  id: string;
  volume_id: string;
  label: string;
  pose: PoseJson;
  annotator: string;
  timestamp: string;
  snapshot: string;
}

export interface PoseUpdate {
  pose: PoseJson;
  undo_depth: number;
}

export interface SliceResult {
  bytes: ArrayBuffer;
  etag: string;
}

export type NudgeAxis = "tx" | "ty" | "tz" | "rx" | "ry" | "rz";

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let message = `HTTP ${resp.status}`;
    try {
      const body = (await resp.json()) as { error?: string };
      if (body && typeof body.error === "string") message = body.error;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new ApiError(resp.status, message);
  }
  return (await resp.json()) as T;
}

export class Client {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  async listVolumes(): Promise<VolumeInfo[]> {
    const resp = await this.fetchFn(this.url("/volumes"));
    const body = await asJson<{ volumes: VolumeInfo[] }>(resp);
    return body.volumes;
  }

  async createSession(volumeId: string): Promise<SessionInfo> {
    const resp = await this.fetchFn(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ volume_id: volumeId }),
    });
    return asJson<SessionInfo>(resp);
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}`));
    return asJson<SessionInfo>(resp);
  }

  async nudge(
    sessionId: string,
    axis: NudgeAxis,
    dir: 1 | -1,
    mult: number,
  ): Promise<PoseUpdate> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}/nudge`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ axis, dir, mult }),
    });
    return asJson<PoseUpdate>(resp);
  }

  async undo(sessionId: string): Promise<PoseUpdate> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}/undo`), {
      method: "POST",
    });
    return asJson<PoseUpdate>(resp);
  }

  async fetchSlice(
    sessionId: string,
    format: "png" | "pgm" = "png",
  ): Promise<SliceResult> {
    const resp = await this.fetchFn(
      this.url(`/sessions/${sessionId}/slice?format=${format}`),
    );
    if (!resp.ok) {
      throw new ApiError(resp.status, `slice fetch failed: HTTP ${resp.status}`);
    }
    const etag = resp.headers.get("ETag") ?? "";
    return { bytes: await resp.arrayBuffer(), etag };
  }

  async saveAnnotation(
    sessionId: string,
    label: string,
    annotator: string,
  ): Promise<Annotation> {
    const resp = await this.fetchFn(
      this.url(`/sessions/${sessionId}/annotations`),
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ label, annotator }),
      },
    );
    return asJson<Annotation>(resp);
  }

  async listAnnotations(volumeId?: string): Promise<Annotation[]> {
    const suffix = volumeId ? `?volume=${encodeURIComponent(volumeId)}` : "";
    const resp = await this.fetchFn(this.url(`/annotations${suffix}`));
    const body = await asJson<{ annotations: Annotation[] }>(resp);
    return body.annotations;
  }
}
