/**
 * Keyboard and gamepad bindings.
 *
 * Keys: arrows and WASD translate in-plane, Q/E translate along the
 * plane normal, I/K and J/L rotate about the plane's local x and y,
 * U/O roll about the normal.  Holding shift scales every nudge by 0.1.
 * Gamepad: left stick drives in-plane translation, right stick the two
 * tilts; stick values inside the deadzone produce nothing.
 */

import type { NudgeAxis } from "./api.js";

export interface NudgeCmd {
  axis: NudgeAxis;
  dir: 1 | -1;
  mult: number;
}

export const FINE_MULTIPLIER = 0.1;
export const GAMEPAD_DEADZONE = 0.15;
export const REPEAT_INTERVAL_MS = 150;

const KEY_MAP: Record<string, [NudgeAxis, 1 | -1]> = {
  arrowleft: ["tx", -1],
  arrowright: ["tx", 1],
  arrowup: ["ty", 1],
  arrowdown: ["ty", -1],
  a: ["tx", -1],
  d: ["tx", 1],
  w: ["ty", 1],
  s: ["ty", -1],
  q: ["tz", -1],
  e: ["tz", 1],
  i: ["rx", 1],
  k: ["rx", -1],
  j: ["ry", 1],
  l: ["ry", -1],
  u: ["rz", 1],
  o: ["rz", -1],
};

export function nudgeForKey(key: string, fine: boolean): NudgeCmd | null {
  const hit = KEY_MAP[key.toLowerCase()];
  if (!hit) return null;
  return { axis: hit[0], dir: hit[1], mult: fine ? FINE_MULTIPLIER : 1.0 };
}

export function isBoundKey(key: string): boolean {
  return key.toLowerCase() in KEY_MAP;
}

/** stick axis index -> nudge axis, in Gamepad API order */
const GAMEPAD_AXES: NudgeAxis[] = ["tx", "ty", "rx", "ry"];

export function gamepadNudges(
  axes: readonly number[],
  fine = false,
): NudgeCmd[] {
  const out: NudgeCmd[] = [];
  const n = Math.min(axes.length, GAMEPAD_AXES.length);
  for (let i = 0; i < n; i++) {
    const v = axes[i]!;
    if (Math.abs(v) <= GAMEPAD_DEADZONE) continue;
    // remap the live range (deadzone, 1] onto (0, 1]
    const span = (Math.abs(v) - GAMEPAD_DEADZONE) / (1 - GAMEPAD_DEADZONE);
    const mult = Math.round(span * (fine ? FINE_MULTIPLIER : 1.0) * 1000) / 1000;
    if (mult <= 0) continue;
    out.push({ axis: GAMEPAD_AXES[i]!, dir: v > 0 ? 1 : -1, mult });
  }
  return out;
}

type TimerHandle = ReturnType<typeof setInterval>;

/**
 * Fires once per physical key press, then repeats at a fixed rate while
 * the key stays down.  The browser's own auto-repeat events must be
 * filtered out by the caller (KeyboardEvent.repeat), and re-entrant
 * presses of an already-held key are ignored here as a second guard.
 */
export class KeyRepeater {
  private held = new Map<string, TimerHandle>();

  constructor(
    private readonly fire: (cmd: NudgeCmd) => void,
    private readonly intervalMs: number = REPEAT_INTERVAL_MS,
    private readonly setTimer: typeof setInterval = setInterval,
    private readonly clearTimer: typeof clearInterval = clearInterval,
  ) {}

  /** returns true when the key is bound, whether or not it fired */
  press(key: string, fine: boolean): boolean {
    const cmd = nudgeForKey(key, fine);
    if (!cmd) return false;
    const id = key.toLowerCase();
    if (this.held.has(id)) return true;
    this.fire(cmd);
    const handle = this.setTimer(() => this.fire(cmd), this.intervalMs);
    this.held.set(id, handle);
    return true;
  }

  release(key: string): void {
    const id = key.toLowerCase();
    const handle = this.held.get(id);
    if (handle !== undefined) {
      this.clearTimer(handle);
      this.held.delete(id);
    }
  }

  releaseAll(): void {
    for (const handle of this.held.values()) this.clearTimer(handle);
    this.held.clear();
  }
}
