import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { ConsoleController, SEND_PERIOD_MS } from '../src/controller.js';
import type { SocketLike } from '../src/connection.js';

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.();
  }

  receive(frame: unknown): void {
    this.onmessage?.({ data: typeof frame === 'string' ? frame : JSON.stringify(frame) });
  }

  actionsSent(): number[][] {
    return this.sent
      .map((raw) => JSON.parse(raw))
      .filter((m) => m.type === 'action')
      .map((m) => m.values);
  }
}

function obsPacket(extra: Record<string, unknown> = {}): Record<string, unknown> {
  return {
    type: 'obs',
    tick: 1,
    task: 'packing',
    scenario: 'hard_slanted',
    visual: '',
    tactile: '',
    mel: [[0]],
    recording: false,
    terminal: false,
    applied_class: 13,
    ...extra,
  };
}

describe('ConsoleController', () => {
  let sockets: FakeSocket[];
  let controller: ConsoleController;
  const events: { packets: unknown[]; errors: string[]; actions: number[][] } = {
    packets: [],
    errors: [],
    actions: [],
  };

  beforeEach(() => {
    vi.useFakeTimers();
    sockets = [];
    events.packets = [];
    events.errors = [];
    events.actions = [];
    controller = new ConsoleController(
      'ws://test',
      'packing',
      {
        onPacket: (p) => events.packets.push(p),
        onError: (m) => events.errors.push(m),
        onActionSent: (v) => events.actions.push(v),
      },
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
    );
  });

  afterEach(() => {
    controller.stop();
    vi.useRealTimers();
  });

  it('sends one action per tick while keys are held, zero once on release', () => {
    controller.start();
    sockets[0].open();
    controller.keyDown('ArrowRight');
    controller.keyDown('PageDown');
    vi.advanceTimersByTime(5 * SEND_PERIOD_MS);
    expect(sockets[0].actionsSent()).toEqual(Array(5).fill([1, 0, -1]));

    controller.keyUp('ArrowRight');
    controller.keyUp('PageDown');
    vi.advanceTimersByTime(10 * SEND_PERIOD_MS);
    const all = sockets[0].actionsSent();
    expect(all).toHaveLength(6); // exactly one trailing zero vector
    expect(all[5]).toEqual([0, 0, 0]);
  });

  it('keeps sending the (cancelled) zero vector while opposing keys stay held', () => {
    controller.start();
    sockets[0].open();
    controller.keyDown('ArrowLeft');
    controller.keyDown('ArrowRight');
    vi.advanceTimersByTime(3 * SEND_PERIOD_MS);
    expect(sockets[0].actionsSent()).toEqual(Array(3).fill([0, 0, 0]));
  });

  it('does not send before the socket is open, and never exceeds 10 Hz', () => {
    controller.start();
    controller.keyDown('ArrowUp');
    vi.advanceTimersByTime(3 * SEND_PERIOD_MS);
    expect(sockets[0].sent).toHaveLength(0);
    sockets[0].open();
    vi.advanceTimersByTime(1000);
    expect(sockets[0].actionsSent().length).toBeLessThanOrEqual(10);
  });

  it('dispatches obs / error / pong frames and tolerates garbage', () => {
    controller.start();
    sockets[0].open();
    sockets[0].receive(obsPacket());
    sockets[0].receive({ type: 'error', message: 'nope' });
    sockets[0].receive('{not json');
    expect(events.packets).toHaveLength(1);
    expect(controller.latestPacket?.tick).toBe(1);
    expect(events.errors).toEqual(['nope', 'unparseable server frame']);
  });

  it('reconnects with backoff after a drop', () => {
    controller.start();
    sockets[0].open();
    expect(controller.status).toBe('open');
    sockets[0].onclose?.();
    expect(controller.status).toBe('closed');
    vi.advanceTimersByTime(600);
    expect(sockets).toHaveLength(2);
    sockets[1].open();
    expect(controller.status).toBe('open');
  });

  it('counts an episode when recording stops or a recorded session resets', () => {
    controller.start();
    sockets[0].open();
    sockets[0].receive(obsPacket({ recording: true }));
    controller.setRecording(false);
    expect(controller.episodesRecorded).toBe(1);
    sockets[0].receive(obsPacket({ recording: true }));
    controller.reset('left_flat', 7);
    expect(controller.episodesRecorded).toBe(2);
    const msgs = sockets[0].sent.map((raw) => JSON.parse(raw));
    expect(msgs).toContainEqual({ type: 'record', on: false });
    expect(msgs).toContainEqual({ type: 'reset', scenario: 'left_flat', seed: 7 });
  });

  it('clears held keys on reset so stale motion does not leak into the new episode', () => {
    controller.start();
    sockets[0].open();
    controller.keyDown('ArrowRight');
    controller.reset();
    vi.advanceTimersByTime(SEND_PERIOD_MS);
    expect(sockets[0].actionsSent()).toEqual([[0, 0, 0]]);
  });
});
