/** Keyboard capture: held keys map to a world-frame velocity command at
 * fixed magnitude v_max; diagonals are normalized; releasing every key
 * yields an immediate zero command. */

export const KEY_AXES: Record<string, [number, number, number]> = {
  w: [1, 0, 0],
  s: [-1, 0, 0],
  arrowup: [1, 0, 0],
  arrowdown: [-1, 0, 0],
  a: [0, 1, 0],
  d: [0, -1, 0],
  arrowleft: [0, 1, 0],
  arrowright: [0, -1, 0],
  r: [0, 0, 1],
  f: [0, 0, -1],
};

export function isCommandKey(key: string): boolean {
  return key.toLowerCase() in KEY_AXES;
}

/** Velocity command from the currently held keys. */
export function commandFromKeys(
  held: ReadonlySet<string>,
  vMax: number,
): [number, number, number] {
  let x = 0;
  let y = 0;
  let z = 0;
  for (const key of held) {
    const axis = KEY_AXES[key.toLowerCase()];
    if (!axis) continue;
    x += axis[0];
    y += axis[1];
    z += axis[2];
  }
  const n = Math.hypot(x, y, z);
  if (n === 0) return [0, 0, 0];
  return [(x / n) * vMax, (y / n) * vMax, (z / n) * vMax];
}

export class KeyTracker {
  private held = new Set<string>();

  down(key: string): boolean {
    const k = key.toLowerCase();
    if (!(k in KEY_AXES) || this.held.has(k)) return false;
    this.held.add(k);
    return true;
  }

  up(key: string): boolean {
    return this.held.delete(key.toLowerCase());
  }

  clear(): void {
    this.held.clear();
  }

  command(vMax: number): [number, number, number] {
    return commandFromKeys(this.held, vMax);
  }

  get anyHeld(): boolean {
    return this.held.size > 0;
  }
}
