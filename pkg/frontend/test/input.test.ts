import { describe, expect, it } from "vitest";
import { KeyTracker, commandFromKeys } from "../src/input.js";

describe("commandFromKeys", () => {
  it("maps W to +x at v_max", () => {
    expect(commandFromKeys(new Set(["w"]), 0.6)).toEqual([0.6, 0, 0]);
  });

  it("returns zero with nothing held", () => {
    expect(commandFromKeys(new Set(), 0.6)).toEqual([0, 0, 0]);
  });

  it("normalizes diagonals to v_max magnitude", () => {
    const v = commandFromKeys(new Set(["w", "d"]), 0.6);
    expect(Math.hypot(...v)).toBeCloseTo(0.6, 12);
    expect(v[0]).toBeGreaterThan(0);
    expect(v[1]).toBeLessThan(0);
  });

  it("cancels opposing keys", () => {
    expect(commandFromKeys(new Set(["w", "s"]), 0.6)).toEqual([0, 0, 0]);
  });

  it("supports the vertical pair", () => {
    expect(commandFromKeys(new Set(["r"]), 0.5)).toEqual([0, 0, 0.5]);
    expect(commandFromKeys(new Set(["f"]), 0.5)).toEqual([0, 0, -0.5]);
  });

  it("maps arrows like WASD", () => {
    expect(commandFromKeys(new Set(["arrowup"]), 1)).toEqual([1, 0, 0]);
    expect(commandFromKeys(new Set(["arrowright"]), 1)).toEqual([0, -1, 0]);
  });
});

describe("KeyTracker", () => {
  it("tracks held keys and reports changes only", () => {
    const keys = new KeyTracker();
    expect(keys.down("W")).toBe(true);
    expect(keys.down("w")).toBe(false); // auto-repeat must not resend
    expect(keys.command(0.6)).toEqual([0.6, 0, 0]);
    expect(keys.up("w")).toBe(true);
    expect(keys.command(0.6)).toEqual([0, 0, 0]);
    expect(keys.anyHeld).toBe(false);
  });

  it("ignores unrelated keys", () => {
    const keys = new KeyTracker();
    expect(keys.down("q")).toBe(false);
    expect(keys.command(0.6)).toEqual([0, 0, 0]);
  });

  it("clear releases everything", () => {
    const keys = new KeyTracker();
    keys.down("w");
    keys.down("a");
    keys.clear();
    expect(keys.command(0.6)).toEqual([0, 0, 0]);
  });
});
