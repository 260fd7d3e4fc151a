/** Browser entry point: wires the controller, renderer, and page controls. */

import { ConsoleController } from './controller.js';
import { Renderer } from './render.js';
import type { Task } from './protocol.js';

const PACKING_SCENARIOS = ['hard_slanted', 'soft_slanted', 'left_flat', 'back_flat'];
const POURING_SCENARIOS = ['60', '100'];

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const url = params.get('url') ?? `ws://${window.location.hostname || 'localhost'}:8765`;
  const task = (params.get('task') ?? 'packing') as Task;

  const renderer = new Renderer({
    visual: byId<HTMLImageElement>('visual'),
    tactile: byId<HTMLImageElement>('tactile'),
    mel: byId<HTMLCanvasElement>('mel'),
    status: byId('status'),
    action: byId('action'),
    recording: byId('recording'),
    info: byId('info'),
  });

  const episodeCounter = byId('episodes');
  const scenarioSelect = byId<HTMLSelectElement>('scenario');
  for (const s of task === 'packing' ? PACKING_SCENARIOS : POURING_SCENARIOS) {
    const opt = document.createElement('option');
    opt.value = s;
    opt.textContent = s;
    scenarioSelect.appendChild(opt);
  }

  const controller = new ConsoleController(
    url,
    task,
    {
      onPacket: (packet) => {
        renderer.renderPacket(packet);
        episodeCounter.textContent = String(controller.episodesRecorded);
        recordButton.textContent = packet.recording ? 'stop recording' : 'record';
      },
      onStatus: (status) => renderer.renderStatus(status),
      onActionSent: (values) => renderer.renderAction(values),
      onError: (message) => console.warn('server:', message),
    },
    (wsUrl) => new WebSocket(wsUrl),
  );

  window.addEventListener('keydown', (ev) => {
    if (ev.repeat) return;
    if (controller.keyDown(ev.code)) ev.preventDefault();
  });
  window.addEventListener('keyup', (ev) => controller.keyUp(ev.code));

  const recordButton = byId<HTMLButtonElement>('record');
  recordButton.addEventListener('click', () => {
    controller.setRecording(!(controller.latestPacket?.recording ?? false));
  });
  byId<HTMLButtonElement>('reset').addEventListener('click', () => {
    const seed = Math.floor(Math.random() * 1_000_000);
    controller.reset(scenarioSelect.value || undefined, seed);
  });
  byId<HTMLButtonElement>('ping').addEventListener('click', () => controller.ping());

  controller.start();
}

main();
