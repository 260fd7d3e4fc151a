/**
 * Headless console controller: holds the session state and drives the wire
 * protocol. It owns the held-keys set, the 10 Hz action send timer, and the
 * control messages (reset / record / ping). All rendering is delegated to a
 * listener, so the controller runs unchanged in the browser and in Node
 * tests.
 *
 * Send semantics match the server's latest-wins mailbox: while any mapped key
 * is held, the current vector goes out once per timer tick; on full release a
 * single zero vector is sent and the sender goes idle. The console therefore
 * never exceeds the 10 Hz tick rate.
 */

import { TeleopConnection, type ConnectionStatus, type SocketFactory } from './connection.js';
import { isMappedKey, isZero, keysToAction } from './keymap.js';
import type { ObsPacket, ServerFrame, Task } from './protocol.js';

export const SEND_PERIOD_MS = 100;

export interface ConsoleListener {
  onPacket?: (packet: ObsPacket) => void;
  onStatus?: (status: ConnectionStatus) => void;
  onActionSent?: (values: number[]) => void;
  onError?: (message: string) => void;
  onPong?: () => void;
}

export class ConsoleController {
  readonly held = new Set<string>();
  lastSentAction: number[] | null = null;
  latestPacket: ObsPacket | null = null;
  episodesRecorded = 0;
  private connection: TeleopConnection;
  private sendTimer: ReturnType<typeof setInterval> | null = null;
  private idle = true;

  constructor(
    url: string,
    public task: Task,
    private readonly listener: ConsoleListener,
    socketFactory: SocketFactory,
  ) {
    this.connection = new TeleopConnection(
      url,
      {
        onFrame: (frame) => this.handleFrame(frame),
        onStatus: (status) => listener.onStatus?.(status),
        onGarbage: () => listener.onError?.('unparseable server frame'),
      },
      socketFactory,
    );
  }

  start(): void {
    this.connection.connect();
    this.sendTimer = setInterval(() => this.sendTick(), SEND_PERIOD_MS);
  }

  stop(): void {
    if (this.sendTimer !== null) clearInterval(this.sendTimer);
    this.sendTimer = null;
    this.connection.close();
  }

  get status(): ConnectionStatus {
    return this.connection.status;
  }

  // -- keyboard -------------------------------------------------------------

  /** Returns true when the key is mapped (so the UI can preventDefault). */
  keyDown(code: string): boolean {
    if (!isMappedKey(code, this.task)) return false;
    this.held.add(code);
    this.idle = false;
    return true;
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  currentAction(): number[] {
    return keysToAction(this.held, this.task);
  }

  private sendTick(): void {
    const vector = this.currentAction();
    if (this.held.size === 0 && isZero(vector)) {
      if (this.idle) return;
      this.idle = true; // emit the zero vector once, then stay quiet
    }
    if (this.connection.send({ type: 'action', values: vector })) {
      this.lastSentAction = vector;
      this.listener.onActionSent?.(vector);
    }
  }

  // -- session controls -----------------------------------------------------

  reset(scenario?: string, seed?: number): void {
    if (this.latestPacket?.recording) this.episodesRecorded += 1;
    this.held.clear();
    this.connection.send({ type: 'reset', scenario, seed });
  }

  setRecording(on: boolean): void {
    if (!on && this.latestPacket?.recording) this.episodesRecorded += 1;
    this.connection.send({ type: 'record', on });
  }

  ping(): void {
    this.connection.send({ type: 'ping' });
  }

  // -- server frames --------------------------------------------------------

  private handleFrame(frame: ServerFrame): void {
    switch (frame.type) {
      case 'obs':
        this.latestPacket = frame;
        this.task = frame.task;
        this.listener.onPacket?.(frame);
        break;
      case 'error':
        this.listener.onError?.(frame.message);
        break;
      case 'pong':
        this.listener.onPong?.();
        break;
    }
  }
}
