/**
 * UI state and the slice request coalescer.
 *
 * The central invariant: at most one slice request is in flight, and
 * the image on screen always carries the ETag of the pose the HUD
 * shows.  Rapid nudges mark the view dirty; the drain loop refetches
 * until the returned tag matches the current pose, discarding any
 * response that raced a pose change.
 */

import type { Annotation, PoseJson, SliceResult } from "./api.js";

export interface UiState {
  sessionId: string | null;
  volumeId: string | null;
  /** last authoritative pose, as returned by the server */
  pose: PoseJson | null;
  /** ETag of the image currently on screen */
  displayedEtag: string | null;
  pendingSlice: boolean;
  fine: boolean;
  annotations: Annotation[];
}

export function createUiState(): UiState {
  return {
    sessionId: null,
    volumeId: null,
    pose: null,
    displayedEtag: null,
    pendingSlice: false,
    fine: false,
    annotations: [],
  };
}

export interface SliceSyncOptions {
  fetchSlice: () => Promise<SliceResult>;
  /** quoted ETag expected for the current pose */
  expectedTag: () => Promise<string>;
  display: (r: SliceResult) => void;
  onStale?: (r: SliceResult) => void;
  onError?: (err: unknown) => void;
}

const MAX_STALE_RETRIES = 3;

export class SliceSync {
  /** count of issued fetches, for tests and the HUD */
  fetches = 0;

  private dirty = false;
  private running: Promise<void> | null = null;

  constructor(private readonly opts: SliceSyncOptions) {}

  get busy(): boolean {
    return this.running !== null;
  }

  /**
   * Mark the view dirty and return a promise that settles once the
   * drain loop has gone idle again.
   */
  request(): Promise<void> {
    this.dirty = true;
    if (!this.running) {
      this.running = this.drain().finally(() => {
        this.running = null;
      });
    }
    return this.running;
  }

  private async drain(): Promise<void> {
    let staleRuns = 0;
    while (this.dirty) {
      this.dirty = false;
      let result: SliceResult;
      this.fetches += 1;
      try {
        result = await this.opts.fetchSlice();
      } catch (err) {
        // surface the failure and stop; retry is an explicit user action
        this.opts.onError?.(err);
        return;
      }
      const want = await this.opts.expectedTag();
      if (result.etag === want) {
        staleRuns = 0;
        this.opts.display(result);
      } else {
        this.opts.onStale?.(result);
        staleRuns += 1;
        if (staleRuns < MAX_STALE_RETRIES) {
          this.dirty = true;
        } else {
          this.opts.onError?.(
            new Error("slice response repeatedly stale; view paused"),
          );
          return;
        }
      }
    }
  }
}
