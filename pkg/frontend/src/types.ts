/** Wire types mirroring the what-if service's HTTP contract. */

export interface NetworkFeature {
  type: 'Feature';
  geometry: { type: 'LineString'; coordinates: [number, number][] };
  properties: { segment_id: number; overlay: number | null };
}

export interface NetworkGeoJson {
  type: 'FeatureCollection';
  features: NetworkFeature[];
}

export interface QValueEntry {
  segment_id: number;
  q_value: number;
  rank: number;
}

export interface WhatIfResponse {
  risk_delta: number;
  density_delta: number;
  reward: number;
  per_segment_volume_changes: Record<string, number>;
  invalid: { id: number; reason: string }[];
}

export interface PlanStepRecord {
  action: number;
  date: string;
  reward: number;
  risk_delta: number;
  density_delta: number;
}

export interface PlanView {
  session: string;
  start_date: string;
  date: string;
  open: number[];
  steps: PlanStepRecord[];
  total_reward: number;
  risk_delta: number;
  density_delta: number;
  done: boolean;
}

export type OverlayMode = 'q' | 'risk' | 'volume';

/** Client-side mirror of the server session; never computes domain numbers. */
export interface PlanSession {
  sessionId: string;
  date: string;
  open: number[];
  lastResponse: PlanView | null;
}
