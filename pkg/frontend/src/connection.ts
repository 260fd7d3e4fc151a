/**
 * WebSocket connection wrapper with automatic reconnect.
 *
 * The socket constructor is injectable so tests (and the Node-based console
 * loop test) can supply the `ws` package or a fake in place of the browser
 * WebSocket.
 */

import { parseServerFrame, type ClientMessage, type ServerFrame } from './protocol.js';

/** The slice of the WebSocket API the console relies on. Handler parameters
 * are typed loosely so browser WebSocket, the `ws` package, and test fakes
 * all satisfy it. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onclose: ((ev: any) => void) | null;
  onerror: ((ev: any) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus = 'connecting' | 'open' | 'closed';

export interface ConnectionCallbacks {
  onFrame: (frame: ServerFrame) => void;
  onStatus?: (status: ConnectionStatus) => void;
  /** raw frames that failed to parse; the UI stays live */
  onGarbage?: (raw: string) => void;
}

const BACKOFF_INITIAL_MS = 500;
const BACKOFF_MAX_MS = 8000;

export class TeleopConnection {
  private socket: SocketLike | null = null;
  private backoffMs = BACKOFF_INITIAL_MS;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  status: ConnectionStatus = 'closed';

  constructor(
    private readonly url: string,
    private readonly callbacks: ConnectionCallbacks,
    private readonly socketFactory: SocketFactory,
  ) {}

  connect(): void {
    this.stopped = false;
    this.open();
  }

  private open(): void {
    this.setStatus('connecting');
    const socket = this.socketFactory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.backoffMs = BACKOFF_INITIAL_MS;
      this.setStatus('open');
    };
    socket.onmessage = (ev: { data: unknown }) => {
      const raw = String(ev.data);
      const frame = parseServerFrame(raw);
      if (frame) {
        this.callbacks.onFrame(frame);
      } else {
        this.callbacks.onGarbage?.(raw);
      }
    };
    socket.onclose = () => this.handleDrop();
    socket.onerror = () => {
      // onclose follows onerror for real sockets; fakes may only fire one
    };
  }

  private handleDrop(): void {
    this.socket = null;
    this.setStatus('closed');
    if (this.stopped) return;
    this.retryTimer = setTimeout(() => this.open(), this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
  }

  send(msg: ClientMessage): boolean {
    if (this.status !== 'open' || !this.socket) return false;
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    this.socket?.close();
    this.socket = null;
    this.setStatus('closed');
  }

  private setStatus(status: ConnectionStatus): void {
    if (status === this.status) return;
    this.status = status;
    this.callbacks.onStatus?.(status);
  }
}
