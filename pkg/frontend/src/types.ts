// Wire types for the feedback service. Field names match the canonical JSON
// payloads the backend serves; the UI never mutates them.

export interface TransitionRecord {
  t: number;
  state: number[];
  action: number[];
  reward: number;
  done: boolean;
}

export interface DriverMeta {
  env: "driver";
  scenario: string;
  lane_width: number;
  n_lanes: number;
  road_top: number;
  n_vehicles: number;
}

export interface GridworldMeta {
  env: "gridworld";
  width: number;
  height: number;
  goal: [number, number];
  obs_cells: number;
}

export type RenderMeta = DriverMeta | GridworldMeta;

export interface QueryPayload {
  query_id: string;
  round: number;
  traj_id: string | null;
  env_seed: number;
  policy_version: number;
  segments: [number, number][];
  transitions: TransitionRecord[];
  meta: RenderMeta | Record<string, never>;
  labels: number[];
}

export interface PendingResponse {
  pending: string[];
}

export interface StatusResponse {
  run_id: string;
  round: number;
  pending: number;
  answered: number;
  total_queries: number;
  waiting_for_labels: boolean;
}

export type SafetyLabel = 0 | 1;
