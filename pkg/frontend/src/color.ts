// Point coloring. The velocity mode follows the sensor convention the
// service reports: low hue means fast approach (negative Doppler).

export type ColorMode = "velocity-hue" | "instance" | "dynamic-mask";

export interface HueRange {
  v_min: number;
  v_max: number;
}

/** Clamp a Doppler value into the configured range and map it to a hue
 * in degrees: v_min (fast approach) -> 0 (red), v_max -> 270 (violet). */
export function velocityHueDeg(v: number, range: HueRange): number {
  const clamped = Math.min(Math.max(v, range.v_min), range.v_max);
  const t = (clamped - range.v_min) / (range.v_max - range.v_min);
  return 270.0 * t;
}

/** hsl-ish conversion; s=1, l=0.5 fast path. Returns [r, g, b] in 0..1. */
export function hueToRgb(hueDeg: number): [number, number, number] {
  const h = ((hueDeg % 360) + 360) % 360 / 60;
  const x = 1 - Math.abs((h % 2) - 1);
  let rgb: [number, number, number];
  if (h < 1) rgb = [1, x, 0];
  else if (h < 2) rgb = [x, 1, 0];
  else if (h < 3) rgb = [0, 1, x];
  else if (h < 4) rgb = [0, x, 1];
  else if (h < 5) rgb = [x, 0, 1];
  else rgb = [1, 0, x];
  return rgb;
}

/** Stable instance color keyed by id (golden-angle hue walk). id 0 is
 * background and renders dark grey. */
export function instanceColor(id: number): [number, number, number] {
  if (id === 0) return [0.25, 0.25, 0.25];
  const hue = (id * 137.50776405003785) % 360;
  const [r, g, b] = hueToRgb(hue);
  // damp a little so white text overlays stay readable
  return [0.15 + 0.85 * r, 0.15 + 0.85 * g, 0.15 + 0.85 * b];
}

export const STATIC_GREY: [number, number, number] = [0.45, 0.45, 0.45];
export const MOVING_HIGHLIGHT: [number, number, number] = [1.0, 0.45, 0.1];

export interface ColorInputs {
  velocities: number[];
  labels: number[];
  dynamic: number[];
  hue: HueRange;
}

/** Flat RGB array (3 per point) for the requested color mode. Selection
 * and color mode never mutate labels; this is pure presentation. */
export function colorsForMode(mode: ColorMode, data: ColorInputs): Float32Array {
  const n = data.velocities.length;
  const out = new Float32Array(n * 3);
  for (let i = 0; i < n; i++) {
    let rgb: [number, number, number];
    if (mode === "velocity-hue") {
      rgb = hueToRgb(velocityHueDeg(data.velocities[i], data.hue));
    } else if (mode === "instance") {
      rgb = instanceColor(data.labels[i]);
    } else {
      rgb = data.dynamic[i] ? MOVING_HIGHLIGHT : STATIC_GREY;
    }
    out[3 * i] = rgb[0];
    out[3 * i + 1] = rgb[1];
    out[3 * i + 2] = rgb[2];
  }
  return out;
}
