import { describe, expect, it } from "vitest";

import {
  FINE_MULTIPLIER,
  GAMEPAD_DEADZONE,
  KeyRepeater,
  gamepadNudges,
  isBoundKey,
  nudgeForKey,
  type NudgeCmd,
} from "../src/controls.js";

describe("nudgeForKey", () => {
  it("maps arrows and wasd onto in-plane translation", () => {
    expect(nudgeForKey("ArrowLeft", false)).toEqual({ axis: "tx", dir: -1, mult: 1 });
    expect(nudgeForKey("ArrowRight", false)).toEqual({ axis: "tx", dir: 1, mult: 1 });
    expect(nudgeForKey("w", false)).toEqual({ axis: "ty", dir: 1, mult: 1 });
    expect(nudgeForKey("S", false)).toEqual({ axis: "ty", dir: -1, mult: 1 });
  });

  it("maps q/e to the normal and ijkl/uo to rotation", () => {
    expect(nudgeForKey("q", false)?.axis).toBe("tz");
    expect(nudgeForKey("e", false)).toEqual({ axis: "tz", dir: 1, mult: 1 });
    expect(nudgeForKey("i", false)).toEqual({ axis: "rx", dir: 1, mult: 1 });
    expect(nudgeForKey("L", false)).toEqual({ axis: "ry", dir: -1, mult: 1 });
    expect(nudgeForKey("u", false)?.axis).toBe("rz");
    expect(nudgeForKey("o", false)).toEqual({ axis: "rz", dir: -1, mult: 1 });
  });

  it("applies the fine multiplier under shift", () => {
    expect(nudgeForKey("ArrowUp", true)?.mult).toBe(FINE_MULTIPLIER);
  });

  it("ignores unbound keys", () => {
    expect(nudgeForKey("x", false)).toBeNull();
    expect(nudgeForKey("Enter", false)).toBeNull();
    expect(isBoundKey("Escape")).toBe(false);
    expect(isBoundKey("ArrowDown")).toBe(true);
  });
});

describe("gamepadNudges", () => {
  it("produces nothing inside the deadzone", () => {
    expect(gamepadNudges([0, 0, 0, 0])).toEqual([]);
    expect(gamepadNudges([0.1, -0.12, 0.05, -0.14])).toEqual([]);
    expect(gamepadNudges([GAMEPAD_DEADZONE, -GAMEPAD_DEADZONE, 0, 0])).toEqual([]);
  });

  it("maps live axes to proportional nudges", () => {
    const cmds = gamepadNudges([1.0, 0, -0.575, 0]);
    expect(cmds).toHaveLength(2);
    expect(cmds[0]).toEqual({ axis: "tx", dir: 1, mult: 1 });
    expect(cmds[1]?.axis).toBe("rx");
    expect(cmds[1]?.dir).toBe(-1);
    expect(cmds[1]?.mult).toBe(0.5);
  });

  it("scales by the fine multiplier", () => {
    const cmds = gamepadNudges([1.0, 0, 0, 0], true);
    expect(cmds).toEqual([{ axis: "tx", dir: 1, mult: 0.1 }]);
  });

  it("ignores axes beyond the mapped four", () => {
    expect(gamepadNudges([0, 0, 0, 0, 1.0, 1.0])).toEqual([]);
  });
});

describe("KeyRepeater", () => {
  function fakeTimers() {
    const timers = new Map<number, () => void>();
    let next = 1;
    const setT = ((fn: () => void) => {
      const id = next++;
      timers.set(id, fn);
      return id as unknown as ReturnType<typeof setInterval>;
    }) as typeof setInterval;
    const clearT = ((id: ReturnType<typeof setInterval>) => {
      timers.delete(id as unknown as number);
    }) as typeof clearInterval;
    const tick = () => {
      for (const fn of [...timers.values()]) fn();
    };
    return { setT, clearT, tick, count: () => timers.size };
  }

  it("fires exactly once per press and repeats while held", () => {
    const fired: NudgeCmd[] = [];
    const t = fakeTimers();
    const rep = new KeyRepeater((c) => fired.push(c), 150, t.setT, t.clearT);

    expect(rep.press("ArrowUp", false)).toBe(true);
    expect(fired).toHaveLength(1);

    // a second press event for a held key must not double-fire
    expect(rep.press("ArrowUp", false)).toBe(true);
    expect(fired).toHaveLength(1);

    t.tick();
    t.tick();
    t.tick();
    expect(fired).toHaveLength(4);

    rep.release("ArrowUp");
    t.tick();
    expect(fired).toHaveLength(4);
    expect(t.count()).toBe(0);
  });

  it("tracks each held key separately and clears all on demand", () => {
    const fired: NudgeCmd[] = [];
    const t = fakeTimers();
    const rep = new KeyRepeater((c) => fired.push(c), 150, t.setT, t.clearT);

    rep.press("w", false);
    rep.press("i", true);
    expect(fired.map((c) => c.axis)).toEqual(["ty", "rx"]);
    expect(fired[1]?.mult).toBe(FINE_MULTIPLIER);
    expect(t.count()).toBe(2);

    rep.releaseAll();
    expect(t.count()).toBe(0);
  });

  it("reports unbound keys as unhandled", () => {
    const t = fakeTimers();
    const rep = new KeyRepeater(() => {}, 150, t.setT, t.clearT);
    expect(rep.press("z", false)).toBe(false);
    expect(t.count()).toBe(0);
  });
});
