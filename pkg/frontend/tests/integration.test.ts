/**
 * Live-service contract test, driving the same modules the browser
 * runs.  Gated on PLANEPOSE_URL; start a server first, e.g.
 *
 *   planepose annotate-serve --volume-dir volumes --data /tmp/ann
 *   PLANEPOSE_URL=http://127.0.0.1:8711 npm test
 *
 * Setting PLANEPOSE_DATA to the server's data directory additionally
 * verifies the stored snapshot bytes on disk.
 */

import { describe, expect, it } from "vitest";

import { Client, type PoseJson, type SliceResult } from "../src/api.js";
import type { NudgeCmd } from "../src/controls.js";
import { poseHash, quotedTag } from "../src/hud.js";
import { SliceSync } from "../src/state.js";

const base = process.env.PLANEPOSE_URL;
const liveTest = base ? describe : describe.skip;

const SCRIPT: NudgeCmd[] = [
  { axis: "tx", dir: 1, mult: 1 },
  { axis: "ty", dir: -1, mult: 1 },
  { axis: "tz", dir: 1, mult: 0.1 },
  { axis: "rx", dir: 1, mult: 1 },
  { axis: "ry", dir: -1, mult: 1 },
  { axis: "rz", dir: 1, mult: 0.1 },
  { axis: "tx", dir: -1, mult: 1 },
  { axis: "rx", dir: -1, mult: 1 },
  { axis: "ty", dir: 1, mult: 0.1 },
  { axis: "rz", dir: -1, mult: 1 },
];

liveTest("annotation UI against a live service", () => {
  it(
    "keeps the HUD pose equal to the displayed image's hash, then saves",
    async () => {
      const client = new Client(base!, (u, i) => fetch(u, i));
      const volumes = await client.listVolumes();
      expect(volumes.length).toBeGreaterThan(0);
      const volumeId = volumes[0]!.id;

      const session = await client.createSession(volumeId);
      let pose: PoseJson = session.pose;
      let displayed: SliceResult | null = null;

      const sync = new SliceSync({
        fetchSlice: () => client.fetchSlice(session.id, "pgm"),
        expectedTag: async () => quotedTag(await poseHash(pose)),
        display: (r) => {
          displayed = r;
        },
      });

      for (const cmd of SCRIPT) {
        const update = await client.nudge(session.id, cmd.axis, cmd.dir, cmd.mult);
        pose = update.pose;
        await sync.request();
        expect(displayed).not.toBeNull();
        // the invariant the HUD relies on: displayed image tag equals
        // the hash of the pose the client believes it is at
        expect(displayed!.etag).toBe(quotedTag(await poseHash(pose)));
      }
      expect(sync.fetches).toBeGreaterThanOrEqual(SCRIPT.length);

      const label = `contract-${Date.now()}`;
      const saved = await client.saveAnnotation(session.id, label, "it");
      const listed = await client.listAnnotations(volumeId);
      expect(listed.map((a) => a.id)).toContain(saved.id);

      // the stored pose is the displayed pose, serialized form and all
      expect(saved.pose).toEqual(pose);

      // re-rendering the stored pose reproduces the displayed payload
      // byte for byte (PGM header included)
      const again = await client.fetchSlice(session.id, "pgm");
      expect(again.etag).toBe(displayed!.etag);
      expect(new Uint8Array(again.bytes)).toEqual(new Uint8Array(displayed!.bytes));

      const dataDir = process.env.PLANEPOSE_DATA;
      if (dataDir) {
        const { readFileSync } = await import("node:fs");
        const snap = readFileSync(`${dataDir}/${saved.snapshot}`);
        expect(new Uint8Array(snap)).toEqual(new Uint8Array(displayed!.bytes));
      }
    },
    60_000,
  );

  it("rejects an empty label server-side as well", async () => {
    const client = new Client(base!, (u, i) => fetch(u, i));
    const volumes = await client.listVolumes();
    const session = await client.createSession(volumes[0]!.id);
    const err = await client
      .saveAnnotation(session.id, "   ", "it")
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(Error);
    expect((err as Error).message).toMatch(/label/);
  });
});
