/**
 * Client-side plan state: a mirror of the server session plus pure helpers
 * for the summary view. Every number shown comes from server response fields;
 * the only arithmetic here is the prefix sum for the sparkline, which is
 * checked against the server's total.
 */

import type { PlanSession, PlanStepRecord, PlanView } from './types.js';

export function emptySession(): PlanSession {
  return { sessionId: '', date: '', open: [], lastResponse: null };
}

export function applyPlanView(session: PlanSession, view: PlanView): PlanSession {
  return {
    sessionId: view.session,
    date: view.date,
    open: [...view.open],
    lastResponse: view,
  };
}

/** Cumulative reward per step, for the sparkline. */
export function cumulativeRewards(steps: PlanStepRecord[]): number[] {
  const out: number[] = [];
  let total = 0;
  for (const step of steps) {
    total += step.reward;
    out.push(total);
  }
  return out;
}

export function sparklinePoints(
  steps: PlanStepRecord[],
  width: number,
  height: number,
): string {
  const values = cumulativeRewards(steps);
  if (values.length === 0) {
    return '';
  }
  const lo = Math.min(0, ...values);
  const hi = Math.max(0, ...values);
  const span = hi - lo || 1;
  return values
    .map((v, i) => {
      const x = values.length === 1 ? width / 2 : (i / (values.length - 1)) * width;
      const y = height - ((v - lo) / span) * height;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
}

export interface PlanExport {
  session: string;
  start_date: string;
  open: number[];
  steps: PlanStepRecord[];
  total_reward: number;
}

export function exportPlan(view: PlanView): string {
  const doc: PlanExport = {
    session: view.session,
    start_date: view.start_date,
    open: view.open,
    steps: view.steps,
    total_reward: view.total_reward,
  };
  return JSON.stringify(doc, null, 2);
}

export function importPlan(text: string): PlanExport {
  const doc = JSON.parse(text) as PlanExport;
  if (!Array.isArray(doc.open) || !Array.isArray(doc.steps)) {
    throw new Error('not a plan export');
  }
  return doc;
}

/** Session id travels in the URL hash so reloads can restore the plan. */
export function sessionFromHash(hash: string): string | null {
  const match = /#session=([0-9a-f]+)/.exec(hash);
  return match ? (match[1] ?? null) : null;
}

export function hashForSession(sessionId: string): string {
  return `#session=${sessionId}`;
}
