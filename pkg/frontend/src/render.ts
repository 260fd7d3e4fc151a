/**
 * DOM rendering: camera / tactile PNGs, the mel heatmap canvas, and the
 * status line. Pure display of server packets; nothing here invents data.
 */

import { ColorScale, rasterizeMel } from './spectrogram.js';
import type { ObsPacket } from './protocol.js';
import type { ConnectionStatus } from './connection.js';

export interface Panels {
  visual: HTMLImageElement;
  tactile: HTMLImageElement;
  mel: HTMLCanvasElement;
  status: HTMLElement;
  action: HTMLElement;
  recording: HTMLElement;
  info: HTMLElement;
}

export class Renderer {
  private readonly scale = new ColorScale();

  constructor(private readonly panels: Panels) {}

  renderPacket(packet: ObsPacket): void {
    this.panels.visual.src = `data:image/png;base64,${packet.visual}`;
    this.panels.tactile.src = `data:image/png;base64,${packet.tactile}`;
    this.renderMel(packet.mel);
    this.panels.recording.textContent = packet.recording ? 'REC' : '';
    const bits = [`${packet.task} / ${packet.scenario}`, `tick ${packet.tick}`];
    if (packet.scale_g !== undefined) bits.push(`scale ${packet.scale_g.toFixed(1)} g`);
    if (packet.terminal) bits.push(`terminal: ${JSON.stringify(packet.outcome ?? {})}`);
    this.panels.info.textContent = bits.join('  |  ');
  }

  private renderMel(mel: number[][]): void {
    this.scale.observe(mel);
    const { rgba, width, height } = rasterizeMel(mel, this.scale);
    if (width === 0 || height === 0) return;
    const canvas = this.panels.mel;
    canvas.width = width;
    canvas.height = height;
    const ctx = canvas.getContext('2d');
    if (!ctx) return;
    ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
  }

  renderStatus(status: ConnectionStatus): void {
    this.panels.status.textContent = status;
    this.panels.status.dataset.status = status;
  }

  renderAction(values: number[]): void {
    this.panels.action.textContent = `[${values.join(', ')}]`;
  }
}
