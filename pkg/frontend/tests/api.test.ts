import { describe, expect, it } from "vitest";

import { ApiError, Client, type FetchLike } from "../src/api.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function scripted(responses: Response[]): { fetch: FetchLike; calls: Call[] } {
  const calls: Call[] = [];
  const queue = [...responses];
  const fetch: FetchLike = (url, init) => {
    calls.push({ url, init });
    const next = queue.shift();
    if (!next) throw new Error("no scripted response left");
    return Promise.resolve(next);
  };
  return { fetch, calls };
}

describe("Client", () => {
  it("lists volumes from the documented shape", async () => {
    const { fetch, calls } = scripted([
      jsonResponse({ volumes: [{ id: "ph0", dims: [64, 64, 64], spacing_mm: 1.5 }] }),
    ]);
    const vols = await new Client("http://h", fetch).listVolumes();
    expect(calls[0]?.url).toBe("http://h/volumes");
    expect(vols).toHaveLength(1);
    expect(vols[0]?.id).toBe("ph0");
  });

  it("creates sessions with a JSON volume_id body", async () => {
    const { fetch, calls } = scripted([
      jsonResponse({ id: "s1", volume_id: "ph0", pose: { t: [0, 0, 0], q: [1, 0, 0, 0] }, t_step: 0.01, rot_step_deg: 1, undo_depth: 0 }, 201),
    ]);
    const session = await new Client("http://h", fetch).createSession("ph0");
    expect(session.id).toBe("s1");
    expect(calls[0]?.init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0]?.init?.body))).toEqual({ volume_id: "ph0" });
  });

  it("posts nudges with axis, dir, and mult", async () => {
    const { fetch, calls } = scripted([
      jsonResponse({ pose: { t: [0.01, 0, 0], q: [1, 0, 0, 0] }, undo_depth: 1 }),
    ]);
    const update = await new Client("http://h", fetch).nudge("s1", "tx", 1, 0.1);
    expect(update.undo_depth).toBe(1);
    expect(calls[0]?.url).toBe("http://h/sessions/s1/nudge");
    expect(JSON.parse(String(calls[0]?.init?.body))).toEqual({
      axis: "tx",
      dir: 1,
      mult: 0.1,
    });
  });

  it("returns slice bytes together with the ETag", async () => {
    const payload = new Uint8Array([80, 53, 10]);
    const resp = new Response(payload, {
      status: 200,
      headers: { ETag: '"deadbeef"', "Content-Type": "image/png" },
    });
    const { fetch, calls } = scripted([resp]);
    const result = await new Client("http://h", fetch).fetchSlice("s1");
    expect(calls[0]?.url).toBe("http://h/sessions/s1/slice?format=png");
    expect(result.etag).toBe('"deadbeef"');
    expect(new Uint8Array(result.bytes)).toEqual(payload);
  });

  it("surfaces server error messages as ApiError", async () => {
    const { fetch } = scripted([jsonResponse({ error: "no session s9" }, 404)]);
    const err = await new Client("http://h", fetch)
      .getSession("s9")
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).message).toBe("no session s9");
  });

  it("falls back to the status line on non-JSON errors", async () => {
    const { fetch } = scripted([new Response("gateway said no", { status: 502 })]);
    const err = await new Client("http://h", fetch)
      .listVolumes()
      .catch((e: unknown) => e);
    expect((err as ApiError).message).toBe("HTTP 502");
  });

  it("filters annotation listings by volume", async () => {
    const { fetch, calls } = scripted([jsonResponse({ annotations: [] })]);
    await new Client("http://h", fetch).listAnnotations("ph 1");
    expect(calls[0]?.url).toBe("http://h/annotations?volume=ph%201");
  });

  it("saves annotations against the session", async () => {
    const ann = {
      id: "a1",
      volume_id: "ph0",
      label: "mid-sagittal",
      pose: { t: [0, 0, 0], q: [1, 0, 0, 0] },
      annotator: "rk",
      timestamp: "2026-01-01T00:00:00+00:00",
      snapshot: "snapshots/a1.pgm",
    };
    const { fetch, calls } = scripted([jsonResponse(ann, 201)]);
    const saved = await new Client("http://h", fetch).saveAnnotation(
      "s1",
      "mid-sagittal",
      "rk",
    );
    expect(saved.id).toBe("a1");
    expect(calls[0]?.url).toBe("http://h/sessions/s1/annotations");
    expect(JSON.parse(String(calls[0]?.init?.body))).toEqual({
      label: "mid-sagittal",
      annotator: "rk",
    });
  });
});
