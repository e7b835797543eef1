// Live accumulation of the cross-track stream, per run, so the console can
// show the current run's max/mean while it happens and compare the final
// value against the persisted record afterwards.

import type { StateSnapshot } from "./types.js";

export interface RunAccumulator {
  run: number;
  n: number;
  max: number;
  sum: number;
}

export class RunStats {
  private byRun = new Map<number, RunAccumulator>();

  observe(snap: StateSnapshot): void {
    const a = snap.activity;
    if (!a || a.cross_track_m === undefined || a.run === undefined) return;
    let acc = this.byRun.get(a.run);
    if (!acc) {
      acc = { run: a.run, n: 0, max: 0, sum: 0 };
      this.byRun.set(a.run, acc);
    }
    acc.n += 1;
    acc.sum += a.cross_track_m;
    acc.max = Math.max(acc.max, a.cross_track_m);
  }

  get(run: number): RunAccumulator | undefined {
    return this.byRun.get(run);
  }

  mean(run: number): number | undefined {
    const acc = this.byRun.get(run);
    return acc && acc.n > 0 ? acc.sum / acc.n : undefined;
  }

  runs(): number[] {
    return [...this.byRun.keys()].sort((x, y) => x - y);
  }

  reset(): void {
    this.byRun.clear();
  }
}

export function formatMetres(v: number | undefined, digits = 3): string {
  return v === undefined ? "-" : `${v.toFixed(digits)} m`;
}
