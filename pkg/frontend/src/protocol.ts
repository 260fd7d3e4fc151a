/**
 * Wire schema of the teleoperation WebSocket service (JSON text frames).
 *
 * The console consumes this protocol verbatim and nothing else: every pixel
 * and score it displays originates from a server packet.
 */

export type Task = 'packing' | 'pouring';

/** Server -> client observation packet, one per 10 Hz tick. */
export interface ObsPacket {
  type: 'obs';
  tick: number;
  task: Task;
  scenario: string;
  /** base64-encoded PNG of the camera view */
  visual: string;
  /** base64-encoded PNG of the tactile gel view */
  tactile: string;
  /** 64 mel bands x 50 frames, natural-log magnitudes */
  mel: number[][];
  recording: boolean;
  terminal: boolean;
  /** action class applied this tick, null once the episode is terminal */
  applied_class: number | null;
  /** pouring only: current scale reading in grams */
  scale_g?: number;
  /** present when terminal */
  outcome?: Record<string, unknown>;
}

export interface ErrorFrame {
  type: 'error';
  message: string;
}

export interface PongFrame {
  type: 'pong';
}

export type ServerFrame = ObsPacket | ErrorFrame | PongFrame;

export interface ActionMessage {
  type: 'action';
  values: number[];
}

export interface ResetMessage {
  type: 'reset';
  scenario?: string;
  seed?: number;
}

export interface RecordMessage {
  type: 'record';
  on: boolean;
}

export interface PingMessage {
  type: 'ping';
}

export type ClientMessage = ActionMessage | ResetMessage | RecordMessage | PingMessage;

/** Action vector length per task: packing (dx,dy,dz), pouring (dx,dphi). */
export const ACTION_ARITY: Record<Task, number> = { packing: 3, pouring: 2 };

export function parseServerFrame(raw: string): ServerFrame | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== 'object' || msg === null) return null;
  const type = (msg as { type?: unknown }).type;
  if (type === 'obs' || type === 'error' || type === 'pong') {
    return msg as ServerFrame;
  }
  return null;
}
