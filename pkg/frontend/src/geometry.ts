/**
 * Canvas <-> simulator pixel mapping.
 *
 * The console shows a W x H observation scaled up by an integer factor.
 * Gestures arrive in canvas coordinates and snap to simulator pixels; all
 * overlays re-render from symbolic simulator-space geometry so a mapping
 * bug shows up as a parity failure rather than a cosmetic offset.
 */

export interface RasterDims {
  width: number;
  height: number;
}

/** Inclusive pixel box [x0, y0, x1, y1] in simulator space. */
export type SimBox = [number, number, number, number];
export type SimPoint = [number, number];

/** Axis-aligned canvas rectangle in canvas pixels. */
export interface CanvasRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function scaleFor(dims: RasterDims, canvasWidth: number): number {
  const k = Math.floor(canvasWidth / dims.width);
  if (k < 1) throw new Error(`canvas ${canvasWidth} narrower than raster ${dims.width}`);
  return k;
}

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));

/** Canvas point -> containing simulator pixel. */
export function canvasToSim(
  cx: number,
  cy: number,
  dims: RasterDims,
  scale: number,
): SimPoint {
  return [
    clamp(Math.floor(cx / scale), 0, dims.width - 1),
    clamp(Math.floor(cy / scale), 0, dims.height - 1),
  ];
}

/** Center of a simulator pixel in canvas coordinates. */
export function simToCanvas(p: SimPoint, scale: number): [number, number] {
  return [p[0] * scale + scale / 2, p[1] * scale + scale / 2];
}

/** Canvas rectangle covering an inclusive simulator-pixel box. */
export function boxToCanvasRect(box: SimBox, scale: number): CanvasRect {
  const [x0, y0, x1, y1] = box;
  return {
    x: x0 * scale,
    y: y0 * scale,
    w: (x1 - x0 + 1) * scale,
    h: (y1 - y0 + 1) * scale,
  };
}

/** Normalized world coordinate -> containing pixel, matching the server. */
export function worldToPx(v: number, extent: number): number {
  return clamp(Math.floor(v * extent), 0, extent - 1);
}

export interface Gesture {
  downX: number;
  downY: number;
  upX: number;
  upY: number;
}

/** Drags shorter than this many canvas pixels count as clicks. */
export const CLICK_SLOP = 3;

export function isClick(g: Gesture): boolean {
  return (
    Math.abs(g.upX - g.downX) <= CLICK_SLOP && Math.abs(g.upY - g.downY) <= CLICK_SLOP
  );
}

/** Click -> anchor at the simulator pixel under the pointer. */
export function gestureToAnchor(g: Gesture, dims: RasterDims, scale: number): SimPoint {
  return canvasToSim(g.downX, g.downY, dims, scale);
}

/**
 * Drag -> inclusive simulator box between the two corners.
 *
 * Degenerate drags (both corners inside one simulator pixel row or
 * column) are widened by one pixel so the box always has positive area.
 */
export function gestureToBox(g: Gesture, dims: RasterDims, scale: number): SimBox {
  const [ax, ay] = canvasToSim(g.downX, g.downY, dims, scale);
  const [bx, by] = canvasToSim(g.upX, g.upY, dims, scale);
  let x0 = Math.min(ax, bx);
  let x1 = Math.max(ax, bx);
  let y0 = Math.min(ay, by);
  let y1 = Math.max(ay, by);
  if (x0 === x1) x1 < dims.width - 1 ? x1++ : x0--;
  if (y0 === y1) y1 < dims.height - 1 ? y1++ : y0--;
  return [x0, y0, x1, y1];
}

/**
 * Canvas gesture that reproduces a given simulator box: press at the
 * center of the top-left pixel, release at the center of the
 * bottom-right one. Used by the scripted driver and by tests.
 */
export function boxToGesture(box: SimBox, scale: number): Gesture {
  const [downX, downY] = simToCanvas([box[0], box[1]], scale);
  const [upX, upY] = simToCanvas([box[2], box[3]], scale);
  return { downX, downY, upX, upY };
}

export function pointToGesture(p: SimPoint, scale: number): Gesture {
  const [x, y] = simToCanvas(p, scale);
  return { downX: x, downY: y, upX: x, upY: y };
}

/** Largest coordinate difference between two canvas rectangles. */
export function rectDelta(a: CanvasRect, b: CanvasRect): number {
  return Math.max(
    Math.abs(a.x - b.x),
    Math.abs(a.y - b.y),
    Math.abs(a.x + a.w - (b.x + b.w)),
    Math.abs(a.y + a.h - (b.y + b.h)),
  );
}
