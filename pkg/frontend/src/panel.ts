/**
 * Delta panel: formats the raw response fields for display. No derived
 * quantities; each line is traceable to a named server field.
 */

import type { PlanView, WhatIfResponse } from './types.js';

export interface PanelNumbers {
  risk_delta: number;
  density_delta: number;
  reward: number;
}

export function panelFromWhatIf(res: WhatIfResponse): PanelNumbers {
  return {
    risk_delta: res.risk_delta,
    density_delta: res.density_delta,
    reward: res.reward,
  };
}

export function panelFromPlan(view: PlanView): PanelNumbers {
  return {
    risk_delta: view.risk_delta,
    density_delta: view.density_delta,
    reward: view.total_reward,
  };
}

export function formatSigned(value: number, digits = 4): string {
  const fixed = value.toFixed(digits);
  return value > 0 ? `+${fixed}` : fixed;
}

/** Server invalid-open reasons render verbatim, never rephrased. */
export function reasonText(reason: string): string {
  return reason;
}

/**
 * Opening a segment with a strongly negative Q-value asks for confirmation;
 * the planner can still proceed. "Strongly negative" means below the
 * bottom-decile Q-value (and below zero).
 */
export function needsConfirm(q: number | null, sortedQValues: number[]): boolean {
  if (q === null || sortedQValues.length === 0) {
    return false;
  }
  const decile = sortedQValues[Math.floor(sortedQValues.length * 0.1)] ?? 0;
  return q < 0 && q <= decile;
}
