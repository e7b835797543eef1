// Wire types for the /api/v1 surface.

export type Point = [number, number];

export type Mode = "IDLE" | "COLLECT_SPINS" | "WANDER" | "AUTONOMY";

export interface ActivityInfo {
  box?: [number, number, number, number];
  estimate?: [number, number, number];
  command?: [number, number];
  controller_mode?: string;
  cross_track_px?: number;
  cross_track_m?: number;
  run?: number;
  spinning?: boolean;
  progress?: number;
  finished?: string;
  aborted?: boolean;
  error?: string;
}

export interface StateSnapshot {
  tick: number;
  t: number;
  mode: Mode;
  fence: Point[] | null;
  track: Point[] | null;
  calibration_rad_s: number | null;
  pose: { x: number; y: number; heading: number };
  runs: number[];
  activity?: ActivityInfo;
}

export interface RunMetrics {
  n_ticks: number;
  duration_s: number;
  cross_track_max_m: number;
  cross_track_mean_m: number;
  cross_track_rms_m: number;
  cross_track_series: [number, number][];
  heading_error_median_deg?: number;
}

export interface RunSummary {
  run_id: number;
  metrics: RunMetrics;
  completed: boolean;
}

export interface RunRecord {
  run_id: number;
  seed: number;
  gt_pose_mode: boolean;
  completed: boolean;
  metrics: RunMetrics;
  track_px: Point[];
  ticks: unknown[];
}
