// Client-side annotation checks, mirroring what the server enforces so the
// operator gets feedback before submitting.  The server stays the source
// of truth; these only gate the submit button and produce warnings.

import type { Point } from "./types.js";

function orient(a: Point, b: Point, c: Point): number {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

function onSegment(p: Point, a: Point, b: Point): boolean {
  if (orient(a, b, p) !== 0) return false;
  return (
    Math.min(a[0], b[0]) <= p[0] &&
    p[0] <= Math.max(a[0], b[0]) &&
    Math.min(a[1], b[1]) <= p[1] &&
    p[1] <= Math.max(a[1], b[1])
  );
}

function segmentsTouch(p1: Point, p2: Point, p3: Point, p4: Point): boolean {
  const d1 = orient(p3, p4, p1);
  const d2 = orient(p3, p4, p2);
  const d3 = orient(p1, p2, p3);
  const d4 = orient(p1, p2, p4);
  if (d1 !== 0 && d2 !== 0 && d3 !== 0 && d4 !== 0 && d1 > 0 !== d2 > 0 && d3 > 0 !== d4 > 0) {
    return true;
  }
  return (
    onSegment(p1, p3, p4) || onSegment(p2, p3, p4) || onSegment(p3, p1, p2) || onSegment(p4, p1, p2)
  );
}

export function validateGeofence(points: Point[]): string | null {
  if (points.length < 3) return "geofence needs at least 3 points";
  const n = points.length;
  for (let i = 0; i < n; i++) {
    const [a, b] = [points[i], points[(i + 1) % n]];
    if (a[0] === b[0] && a[1] === b[1]) return "consecutive points must be distinct";
  }
  for (let i = 0; i < n; i++) {
    for (let j = i + 1; j < n; j++) {
      if (j === i || (j + 1) % n === i || (i + 1) % n === j) continue;
      if (segmentsTouch(points[i], points[(i + 1) % n], points[j], points[(j + 1) % n])) {
        return "polygon is self-intersecting";
      }
    }
  }
  let area = 0;
  for (let i = 0; i < n; i++) {
    const [a, b] = [points[i], points[(i + 1) % n]];
    area += a[0] * b[1] - b[0] * a[1];
  }
  if (Math.abs(area) / 2 === 0) return "polygon has zero area";
  return null;
}

export function validateTrack(points: Point[]): string | null {
  if (points.length < 2) return "track needs at least 2 points";
  for (let i = 0; i + 1 < points.length; i++) {
    const [a, b] = [points[i], points[i + 1]];
    if (a[0] === b[0] && a[1] === b[1]) return "consecutive waypoints must be distinct";
  }
  return null;
}
