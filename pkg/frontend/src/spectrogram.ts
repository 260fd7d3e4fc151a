/**
 * Mel spectrogram heatmap rasterization.
 *
 * The color scale is fixed per session: anchored at the log floor of the
 * server's spectrogram (ln 1e-10) on the low end and at the maximum value
 * observed so far on the high end, so brightness is comparable across ticks.
 */

/** Natural log of the server's spectrogram magnitude floor (1e-10). */
export const LOG_FLOOR = Math.log(1e-10);

// black -> deep blue -> magenta -> orange -> near-white ramp
const STOPS: [number, number, number][] = [
  [0, 0, 8],
  [32, 12, 108],
  [130, 35, 120],
  [220, 90, 50],
  [250, 190, 70],
  [252, 252, 210],
];

function rampColor(t: number): [number, number, number] {
  const clamped = Math.max(0, Math.min(1, t));
  const seg = clamped * (STOPS.length - 1);
  const lo = Math.floor(seg);
  const hi = Math.min(lo + 1, STOPS.length - 1);
  const f = seg - lo;
  return [
    Math.round(STOPS[lo][0] + (STOPS[hi][0] - STOPS[lo][0]) * f),
    Math.round(STOPS[lo][1] + (STOPS[hi][1] - STOPS[lo][1]) * f),
    Math.round(STOPS[lo][2] + (STOPS[hi][2] - STOPS[lo][2]) * f),
  ];
}

/** Tracks the session-wide maximum so the scale only ever widens. */
export class ColorScale {
  private max = LOG_FLOOR + 1e-6;

  observe(mel: number[][]): void {
    for (const row of mel) {
      for (const v of row) {
        if (v > this.max) this.max = v;
      }
    }
  }

  normalize(v: number): number {
    return (v - LOG_FLOOR) / (this.max - LOG_FLOOR);
  }
}

/**
 * Rasterize a mel grid (bands x frames, band 0 = lowest frequency) into RGBA
 * bytes, one pixel per cell, low frequencies at the bottom row. Returns the
 * buffer plus its pixel dimensions; the caller hands it to an ImageData.
 */
export function rasterizeMel(mel: number[][], scale: ColorScale) {
  const height = mel.length;
  const width = height > 0 ? mel[0].length : 0;
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let band = 0; band < height; band++) {
    const row = height - 1 - band; // flip so low bands render at the bottom
    for (let frame = 0; frame < width; frame++) {
      const [r, g, b] = rampColor(scale.normalize(mel[band][frame]));
      const at = (row * width + frame) * 4;
      rgba[at] = r;
      rgba[at + 1] = g;
      rgba[at + 2] = b;
      rgba[at + 3] = 255;
    }
  }
  return { rgba, width, height };
}
