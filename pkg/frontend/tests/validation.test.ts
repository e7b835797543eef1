import { describe, expect, it } from "vitest";

import { validateGeofence, validateTrack } from "../src/validation.js";
import type { Point } from "../src/types.js";

const RECT: Point[] = [
  [92, 137],
  [708, 137],
  [668, 554],
  [132, 554],
];
const BOWTIE: Point[] = [
  [0, 0],
  [100, 100],
  [100, 0],
  [0, 100],
];

describe("validateGeofence", () => {
  it("accepts a simple rectangle", () => {
    expect(validateGeofence(RECT)).toBeNull();
  });

  it("rejects fewer than three points", () => {
    expect(validateGeofence(RECT.slice(0, 2))).toMatch(/3 points/);
  });

  it("rejects a self-intersecting polygon", () => {
    expect(validateGeofence(BOWTIE)).toMatch(/self-intersecting/);
  });

  it("rejects duplicate consecutive points", () => {
    expect(
      validateGeofence([
        [0, 0],
        [0, 0],
        [10, 0],
        [10, 10],
      ]),
    ).toMatch(/distinct/);
  });

  it("rejects a degenerate zero-area polygon", () => {
    expect(
      validateGeofence([
        [0, 0],
        [10, 0],
        [20, 0],
      ]),
    ).not.toBeNull();
  });
});

describe("validateTrack", () => {
  it("accepts two distinct waypoints", () => {
    expect(
      validateTrack([
        [10, 10],
        [20, 10],
      ]),
    ).toBeNull();
  });

  it("rejects a single waypoint", () => {
    expect(validateTrack([[10, 10]])).toMatch(/2 points/);
  });

  it("rejects repeated waypoints", () => {
    expect(
      validateTrack([
        [10, 10],
        [10, 10],
      ]),
    ).toMatch(/distinct/);
  });
});
