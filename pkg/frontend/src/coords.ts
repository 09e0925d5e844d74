// Canvas/image coordinate mapping. The canvas displays the image at a
// zoom factor `scale`; image coordinates are canvas coordinates divided
// by that factor. All rectangles are corner form [x0, y0, x1, y1] with
// x0 <= x1 and y0 <= y1 after normalization.

export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface Drag {
  startX: number;
  startY: number;
  lastX: number;
  lastY: number;
}

export function beginDrag(x: number, y: number): Drag {
  return { startX: x, startY: y, lastX: x, lastY: y };
}

export function updateDrag(drag: Drag, x: number, y: number): Drag {
  return { ...drag, lastX: x, lastY: y };
}

/** The dragged rectangle, normalized so corners can be dragged in any order. */
export function dragRect(drag: Drag): Rect {
  return {
    x0: Math.min(drag.startX, drag.lastX),
    y0: Math.min(drag.startY, drag.lastY),
    x1: Math.max(drag.startX, drag.lastX),
    y1: Math.max(drag.startY, drag.lastY),
  };
}

export function canvasToImage(rect: Rect, scale: number): Rect {
  if (scale <= 0) throw new Error(`scale must be positive, got ${scale}`);
  return {
    x0: rect.x0 / scale,
    y0: rect.y0 / scale,
    x1: rect.x1 / scale,
    y1: rect.y1 / scale,
  };
}

export function imageToCanvas(rect: Rect, scale: number): Rect {
  if (scale <= 0) throw new Error(`scale must be positive, got ${scale}`);
  return {
    x0: rect.x0 * scale,
    y0: rect.y0 * scale,
    x1: rect.x1 * scale,
    y1: rect.y1 * scale,
  };
}

/** Clamp an image-space rectangle to the image bounds. */
export function clampToImage(rect: Rect, width: number, height: number): Rect {
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  return {
    x0: clamp(rect.x0, width),
    y0: clamp(rect.y0, height),
    x1: clamp(rect.x1, width),
    y1: clamp(rect.y1, height),
  };
}

export function rectsWithin(a: Rect, b: Rect, tolerance: number): boolean {
  return (
    Math.abs(a.x0 - b.x0) <= tolerance &&
    Math.abs(a.y0 - b.y0) <= tolerance &&
    Math.abs(a.x1 - b.x1) <= tolerance &&
    Math.abs(a.y1 - b.y1) <= tolerance
  );
}

/** Degenerate rectangles (from a stray click) are not annotations. */
export function isDegenerate(rect: Rect, minSize = 2): boolean {
  return rect.x1 - rect.x0 < minSize || rect.y1 - rect.y0 < minSize;
}
