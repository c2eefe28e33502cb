/**
 * DOM wiring.  All logic lives in api/state/controls/hud; this file only
 * connects them to elements in index.html.
 */

import { Client, type PoseJson, type SliceResult } from "./api.js";
import { KeyRepeater, gamepadNudges, type NudgeCmd } from "./controls.js";
import { formatPoseLine, poseHash, quotedTag } from "./hud.js";
import { SliceSync, createUiState } from "./state.js";

const GAMEPAD_POLL_MS = 100;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function boot(): void {
  const client = new Client("..");
  const state = createUiState();

  const volumeSelect = el<HTMLSelectElement>("volume-select");
  const sliceImg = el<HTMLImageElement>("slice-img");
  const hudPose = el<HTMLElement>("hud-pose");
  const hudHash = el<HTMLElement>("hud-hash");
  const hudStatus = el<HTMLElement>("hud-status");
  const banner = el<HTMLElement>("error-banner");
  const bannerText = el<HTMLElement>("error-text");
  const retryBtn = el<HTMLButtonElement>("retry-btn");
  const labelInput = el<HTMLInputElement>("label-input");
  const annotatorInput = el<HTMLInputElement>("annotator-input");
  const saveBtn = el<HTMLButtonElement>("save-btn");
  const saveMsg = el<HTMLElement>("save-msg");
  const undoBtn = el<HTMLButtonElement>("undo-btn");
  const annList = el<HTMLElement>("annotation-list");

  let objectUrl: string | null = null;
  // pose that produced the tag most recently handed to SliceSync; the
  // HUD is updated from it only when the matching image is displayed
  let tagPose: PoseJson | null = null;
  let tagHash = "";

  function showError(err: unknown): void {
    bannerText.textContent = err instanceof Error ? err.message : String(err);
    banner.hidden = false;
  }

  const sync = new SliceSync({
    fetchSlice: () => {
      if (!state.sessionId) return Promise.reject(new Error("no session"));
      state.pendingSlice = true;
      hudStatus.textContent = "rendering";
      return client.fetchSlice(state.sessionId);
    },
    expectedTag: async () => {
      tagPose = state.pose;
      tagHash = tagPose ? await poseHash(tagPose) : "";
      return quotedTag(tagHash);
    },
    display: (r: SliceResult) => {
      state.pendingSlice = false;
      state.displayedEtag = r.etag;
      const blob = new Blob([r.bytes], { type: "image/png" });
      const next = URL.createObjectURL(blob);
      sliceImg.src = next;
      if (objectUrl) URL.revokeObjectURL(objectUrl);
      objectUrl = next;
      if (tagPose) hudPose.textContent = formatPoseLine(tagPose);
      hudHash.textContent = tagHash;
      hudStatus.textContent = "in sync";
      banner.hidden = true;
    },
    onError: (err) => {
      state.pendingSlice = false;
      hudStatus.textContent = "error";
      showError(err);
    },
  });

  retryBtn.addEventListener("click", () => {
    banner.hidden = true;
    void sync.request();
  });

  async function applyPose(pose: PoseJson): Promise<void> {
    state.pose = pose;
    void sync.request();
  }

  async function sendNudge(cmd: NudgeCmd): Promise<void> {
    if (!state.sessionId) return;
    try {
      const update = await client.nudge(
        state.sessionId,
        cmd.axis,
        cmd.dir,
        cmd.mult,
      );
      await applyPose(update.pose);
    } catch (err) {
      showError(err);
    }
  }

  const repeater = new KeyRepeater((cmd) => void sendNudge(cmd));

  window.addEventListener("keydown", (ev) => {
    if (ev.repeat) return;
    const target = ev.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "SELECT")) {
      return;
    }
    if (repeater.press(ev.key, ev.shiftKey)) ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => repeater.release(ev.key));
  window.addEventListener("blur", () => repeater.releaseAll());

  setInterval(() => {
    const pads = navigator.getGamepads ? navigator.getGamepads() : [];
    for (const pad of pads) {
      if (!pad) continue;
      for (const cmd of gamepadNudges(pad.axes, state.fine)) {
        void sendNudge(cmd);
      }
      break;
    }
  }, GAMEPAD_POLL_MS);

  async function refreshAnnotations(): Promise<void> {
    if (!state.volumeId) return;
    try {
      state.annotations = await client.listAnnotations(state.volumeId);
      annList.replaceChildren(
        ...state.annotations.map((a) => {
          const li = document.createElement("li");
          li.textContent = `${a.label} (${a.annotator || "anon"}) ${a.timestamp}`;
          li.dataset.id = a.id;
          return li;
        }),
      );
    } catch (err) {
      showError(err);
    }
  }

  saveBtn.addEventListener("click", async () => {
    const label = labelInput.value.trim();
    if (!label) {
      saveMsg.textContent = "label must not be empty";
      return;
    }
    if (!state.sessionId) return;
    saveMsg.textContent = "";
    try {
      const ann = await client.saveAnnotation(
        state.sessionId,
        label,
        annotatorInput.value.trim(),
      );
      saveMsg.textContent = `saved ${ann.id}`;
      labelInput.value = "";
      await refreshAnnotations();
    } catch (err) {
      showError(err);
    }
  });

  undoBtn.addEventListener("click", async () => {
    if (!state.sessionId) return;
    try {
      const update = await client.undo(state.sessionId);
      await applyPose(update.pose);
    } catch (err) {
      showError(err);
    }
  });

  volumeSelect.addEventListener("change", async () => {
    const vid = volumeSelect.value;
    if (!vid) return;
    try {
      const session = await client.createSession(vid);
      state.sessionId = session.id;
      state.volumeId = vid;
      await applyPose(session.pose);
      await refreshAnnotations();
    } catch (err) {
      showError(err);
    }
  });

  void (async () => {
    try {
      const volumes = await client.listVolumes();
      volumeSelect.replaceChildren(
        new Option("choose a volume", "", true, true),
        ...volumes.map((v) => new Option(`${v.id} ${v.dims.join("x")}`, v.id)),
      );
    } catch (err) {
      showError(err);
    }
  })();
}

document.addEventListener("DOMContentLoaded", boot);
