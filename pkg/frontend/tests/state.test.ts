import { describe, expect, it } from "vitest";

import type { SliceResult } from "../src/api.js";
import { SliceSync, createUiState } from "../src/state.js";

function slice(tag: string): SliceResult {
  return { bytes: new ArrayBuffer(4), etag: tag };
}

function deferred<T>() {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("SliceSync", () => {
  it("coalesces rapid requests into at most two fetches", async () => {
    const first = deferred<SliceResult>();
    let call = 0;
    let tag = '"a"';
    const displayed: string[] = [];
    const sync = new SliceSync({
      fetchSlice: () => {
        call += 1;
        return call === 1 ? first.promise : Promise.resolve(slice(tag));
      },
      expectedTag: async () => tag,
      display: (r) => displayed.push(r.etag),
    });

    const done = sync.request();
    tag = '"b"';
    void sync.request();
    void sync.request();
    void sync.request();
    first.resolve(slice('"a"'));
    await done;

    expect(sync.fetches).toBe(2);
    expect(displayed).toEqual(['"b"']);
  });

  it("discards a response whose tag no longer matches the pose", async () => {
    const tags = ['"stale"', '"fresh"'];
    const displayed: string[] = [];
    const staled: string[] = [];
    const sync = new SliceSync({
      fetchSlice: () => Promise.resolve(slice(tags.shift() ?? '"fresh"')),
      expectedTag: async () => '"fresh"',
      display: (r) => displayed.push(r.etag),
      onStale: (r) => staled.push(r.etag),
    });

    await sync.request();

    expect(staled).toEqual(['"stale"']);
    expect(displayed).toEqual(['"fresh"']);
    expect(sync.fetches).toBe(2);
  });

  it("gives up after repeated stale responses instead of spinning", async () => {
    const errors: unknown[] = [];
    const sync = new SliceSync({
      fetchSlice: () => Promise.resolve(slice('"never-right"')),
      expectedTag: async () => '"wanted"',
      display: () => {
        throw new Error("must not display a stale slice");
      },
      onError: (e) => errors.push(e),
    });

    await sync.request();

    expect(errors).toHaveLength(1);
    expect(sync.fetches).toBe(3);
  });

  it("reports fetch failures and stops until asked again", async () => {
    let fail = true;
    const errors: unknown[] = [];
    const displayed: string[] = [];
    const sync = new SliceSync({
      fetchSlice: () =>
        fail
          ? Promise.reject(new Error("boom"))
          : Promise.resolve(slice('"ok"')),
      expectedTag: async () => '"ok"',
      display: (r) => displayed.push(r.etag),
      onError: (e) => errors.push(e),
    });

    await sync.request();
    expect(errors).toHaveLength(1);
    expect(displayed).toEqual([]);
    expect(sync.busy).toBe(false);

    fail = false;
    await sync.request();
    expect(displayed).toEqual(['"ok"']);
  });

  it("reports busy only while a drain is running", async () => {
    const gate = deferred<SliceResult>();
    const sync = new SliceSync({
      fetchSlice: () => gate.promise,
      expectedTag: async () => '"t"',
      display: () => {},
    });
    const done = sync.request();
    expect(sync.busy).toBe(true);
    gate.resolve(slice('"t"'));
    await done;
    expect(sync.busy).toBe(false);
  });
});

describe("createUiState", () => {
  it("starts with no session and an empty cache", () => {
    const s = createUiState();
    expect(s.sessionId).toBeNull();
    expect(s.pose).toBeNull();
    expect(s.pendingSlice).toBe(false);
    expect(s.annotations).toEqual([]);
  });
});
