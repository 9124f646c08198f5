// Lasso selection in screen space: the viewer projects points to
// normalized device coordinates, the lasso polygon comes from pointer
// events, and selection is a point-in-polygon test.

export interface Vec2 {
  x: number;
  y: number;
}

/** Ray-casting point-in-polygon; boundary points count as inside. */
export function pointInPolygon(p: Vec2, polygon: Vec2[]): boolean {
  if (polygon.length < 3) return false;
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const a = polygon[i];
    const b = polygon[j];
    const onEdge =
      Math.abs((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) < 1e-12 &&
      Math.min(a.x, b.x) - 1e-12 <= p.x &&
      p.x <= Math.max(a.x, b.x) + 1e-12 &&
      Math.min(a.y, b.y) - 1e-12 <= p.y &&
      p.y <= Math.max(a.y, b.y) + 1e-12;
    if (onEdge) return true;
    const crosses =
      a.y > p.y !== b.y > p.y &&
      p.x < ((b.x - a.x) * (p.y - a.y)) / (b.y - a.y) + a.x;
    if (crosses) inside = !inside;
  }
  return inside;
}

/** Indices of projected points falling inside the lasso polygon. */
export function selectByLasso(projected: Vec2[], polygon: Vec2[]): number[] {
  const out: number[] = [];
  for (let i = 0; i < projected.length; i++) {
    if (pointInPolygon(projected[i], polygon)) out.push(i);
  }
  return out;
}
