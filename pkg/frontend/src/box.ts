// Box geometry for the annotation canvas. All public values are image-space
// integer pixels; zoom only matters at the screen<->image boundary.

export interface CanvasBox {
  top: number
  left: number
  height: number
  width: number
}

export interface Point {
  x: number
  y: number
}

/** Screen (canvas) coordinates -> image coordinates at the given zoom. */
export function toImageSpace(p: Point, zoom: number): Point {
  if (zoom <= 0) throw new Error(`zoom must be positive, got ${zoom}`)
  return { x: p.x / zoom, y: p.y / zoom }
}

/** Image coordinates -> screen coordinates at the given zoom. */
export function toScreenSpace(p: Point, zoom: number): Point {
  if (zoom <= 0) throw new Error(`zoom must be positive, got ${zoom}`)
  return { x: p.x * zoom, y: p.y * zoom }
}

/**
 * Normalize a drag into a box: any drag direction gives positive extent,
 * coordinates are clamped to the image and snapped to integer pixels.
 * Returns null for a degenerate (zero-area) drag.
 */
export function dragToBox(
  start: Point,
  end: Point,
  zoom: number,
  imageWidth: number,
  imageHeight: number,
): CanvasBox | null {
  const a = toImageSpace(start, zoom)
  const b = toImageSpace(end, zoom)
  const clampX = (x: number) => Math.min(Math.max(x, 0), imageWidth)
  const clampY = (y: number) => Math.min(Math.max(y, 0), imageHeight)
  const left = Math.round(clampX(Math.min(a.x, b.x)))
  const right = Math.round(clampX(Math.max(a.x, b.x)))
  const top = Math.round(clampY(Math.min(a.y, b.y)))
  const bottom = Math.round(clampY(Math.max(a.y, b.y)))
  if (right <= left || bottom <= top) return null
  return { top, left, height: bottom - top, width: right - left }
}

/** Screen-space rectangle for rendering a box at the given zoom. */
export function boxToScreenRect(box: CanvasBox, zoom: number) {
  return {
    x: box.left * zoom,
    y: box.top * zoom,
    w: box.width * zoom,
    h: box.height * zoom,
  }
}

/**
 * Recover the image-space box from its rendered rectangle. Inverse of
 * boxToScreenRect for any positive zoom; used to verify round-trips.
 */
export function screenRectToBox(
  rect: { x: number; y: number; w: number; h: number },
  zoom: number,
): CanvasBox {
  return {
    left: Math.round(rect.x / zoom),
    top: Math.round(rect.y / zoom),
    width: Math.round(rect.w / zoom),
    height: Math.round(rect.h / zoom),
  }
}

export function boxesEqual(a: CanvasBox, b: CanvasBox): boolean {
  return (
    a.top === b.top && a.left === b.left &&
    a.height === b.height && a.width === b.width
  )
}
