/**
 * Keyboard -> ternary action vector mapping.
 *
 * Packing (dx, dy, dz): arrow keys drive +-x / +-y, PageUp/PageDown or W/S
 * drive +-z. Pouring (dx, dphi): arrows drive +-x, Q/A tilt the cup.
 * Opposing keys held together cancel to 0 on that axis.
 */

import { ACTION_ARITY, type Task } from './protocol.js';

interface AxisBinding {
  axis: number;
  sign: 1 | -1;
}

const PACKING_KEYS: Record<string, AxisBinding> = {
  ArrowRight: { axis: 0, sign: 1 },
  ArrowLeft: { axis: 0, sign: -1 },
  ArrowUp: { axis: 1, sign: 1 },
  ArrowDown: { axis: 1, sign: -1 },
  PageUp: { axis: 2, sign: 1 },
  PageDown: { axis: 2, sign: -1 },
  KeyW: { axis: 2, sign: 1 },
  KeyS: { axis: 2, sign: -1 },
};

const POURING_KEYS: Record<string, AxisBinding> = {
  ArrowRight: { axis: 0, sign: 1 },
  ArrowLeft: { axis: 0, sign: -1 },
  KeyQ: { axis: 1, sign: 1 },
  KeyA: { axis: 1, sign: -1 },
};

const BINDINGS: Record<Task, Record<string, AxisBinding>> = {
  packing: PACKING_KEYS,
  pouring: POURING_KEYS,
};

/** True if the key code means anything for the given task. */
export function isMappedKey(code: string, task: Task): boolean {
  return code in BINDINGS[task];
}

/**
 * Collapse the currently held key codes into one ternary vector. Components
 * are clamped to {-1, 0, 1}; opposing keys (or W held with PageDown, etc.)
 * cancel axis-wise.
 */
export function keysToAction(held: ReadonlySet<string>, task: Task): number[] {
  const vector = new Array<number>(ACTION_ARITY[task]).fill(0);
  const bindings = BINDINGS[task];
  for (const code of held) {
    const b = bindings[code];
    if (b) vector[b.axis] += b.sign;
  }
  return vector.map((v) => Math.max(-1, Math.min(1, v)));
}

export function isZero(vector: readonly number[]): boolean {
  return vector.every((v) => v === 0);
}
