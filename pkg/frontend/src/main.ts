/** Wires map, overlay controls, plan session, and the delta panel together. */

import { ApiError, Client } from './api.js';
import { ScaleDomain, domainFromValues, legendStops } from './colors.js';
import { MapLayer, applyOverlay, renderMap } from './map.js';
import { formatSigned, needsConfirm, panelFromPlan, reasonText } from './panel.js';
import {
  applyPlanView,
  emptySession,
  exportPlan,
  hashForSession,
  sessionFromHash,
  sparklinePoints,
} from './session.js';
import type { NetworkGeoJson, OverlayMode, PlanSession, QValueEntry } from './types.js';

const client = new Client('');

interface AppState {
  geo: NetworkGeoJson | null;
  layer: MapLayer | null;
  mode: OverlayMode;
  qvalues: QValueEntry[];
  session: PlanSession;
  date: string;
  // one request at a time per session; clicks during flight are dropped
  busy: boolean;
}

const state: AppState = {
  geo: null,
  layer: null,
  mode: 'q',
  qvalues: [],
  session: emptySession(),
  date: '',
  busy: false,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function toast(message: string): void {
  const box = el<HTMLDivElement>('toast');
  box.textContent = message;
  box.classList.add('visible');
  setTimeout(() => box.classList.remove('visible'), 4000);
}

function overlayValues(): Map<number, number | null> {
  const values = new Map<number, number | null>();
  if (!state.geo) {
    return values;
  }
  if (state.mode === 'q') {
    for (const f of state.geo.features) {
      values.set(f.properties.segment_id, null);
    }
    for (const entry of state.qvalues) {
      values.set(entry.segment_id, entry.q_value);
    }
  } else {
    for (const f of state.geo.features) {
      values.set(f.properties.segment_id, f.properties.overlay);
    }
  }
  return values;
}

function currentDomain(values: Map<number, number | null>): ScaleDomain {
  const present = [...values.values()].filter((v): v is number => v !== null);
  return domainFromValues(present, state.mode === 'q');
}

function redraw(): void {
  if (!state.geo || !state.layer) {
    return;
  }
  const values = overlayValues();
  const domain = currentDomain(values);
  applyOverlay(state.layer, values, domain, new Set(state.session.open));
  const legend = el<HTMLDivElement>('legend');
  legend.replaceChildren(
    ...legendStops(domain).map((stop) => {
      const chip = document.createElement('span');
      chip.className = 'legend-chip';
      chip.style.background = stop.color;
      chip.title = stop.value.toFixed(3);
      return chip;
    }),
  );
}

function renderPanel(): void {
  const view = state.session.lastResponse;
  const panel = el<HTMLDivElement>('deltas');
  if (!view) {
    panel.textContent = 'No plan yet: click a segment to open it.';
    el<HTMLDivElement>('plan-steps').replaceChildren();
    return;
  }
  const numbers = panelFromPlan(view);
  panel.innerHTML = [
    `<div>risk_delta: <b>${formatSigned(numbers.risk_delta)}</b></div>`,
    `<div>density_delta: <b>${formatSigned(numbers.density_delta)}</b></div>`,
    `<div>reward: <b>${formatSigned(numbers.reward)}</b></div>`,
  ].join('');
  const steps = el<HTMLDivElement>('plan-steps');
  steps.replaceChildren(
    ...view.steps.map((step) => {
      const row = document.createElement('div');
      row.className = 'plan-step';
      row.textContent = `${step.date} open ${step.action} reward ${formatSigned(step.reward)}`;
      const undo = document.createElement('button');
      undo.textContent = 'x';
      undo.title = 'remove from plan (server replays the rest)';
      undo.addEventListener('click', () => void toggle(step.action));
      row.appendChild(undo);
      return row;
    }),
  );
  const spark = el<HTMLElement>('sparkline');
  spark.setAttribute('points', sparklinePoints(view.steps, 160, 36));
}

async function toggle(segmentId: number): Promise<void> {
  if (state.busy) {
    return;
  }
  state.busy = true;
  try {
    const open = state.session.open.includes(segmentId);
    if (!open) {
      const q = state.qvalues.find((e) => e.segment_id === segmentId)?.q_value ?? null;
      const sorted = state.qvalues.map((e) => e.q_value).sort((a, b) => a - b);
      if (needsConfirm(q, sorted) &&
          !window.confirm(`Q-value ${q?.toFixed(3)} is strongly negative. Open anyway?`)) {
        return;
      }
      const view = state.session.sessionId
        ? await client.openSegment(state.session.sessionId, null, segmentId)
        : await client.openSegment(null, state.date, segmentId);
      state.session = applyPlanView(state.session, view);
      window.location.hash = hashForSession(view.session);
    } else {
      const view = await client.closeSegment(state.session.sessionId, segmentId);
      state.session = applyPlanView(state.session, view);
    }
    renderPanel();
    redraw();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // surface the environment's reason verbatim, plan unchanged
      toast(reasonText(err.detail));
    } else {
      toast(String(err));
    }
  } finally {
    state.busy = false;
  }
}

async function restoreSession(): Promise<void> {
  const existing = sessionFromHash(window.location.hash);
  if (!existing) {
    return;
  }
  try {
    const view = await client.plan(existing);
    state.session = applyPlanView(state.session, view);
    state.date = view.start_date;
    el<HTMLInputElement>('date').value = view.start_date;
  } catch {
    window.location.hash = '';
  }
}

function wireControls(): void {
  for (const mode of ['q', 'risk', 'volume'] as OverlayMode[]) {
    el<HTMLButtonElement>(`mode-${mode}`).addEventListener('click', () => {
      state.mode = mode;
      redraw();
    });
  }
  el<HTMLInputElement>('date').addEventListener('change', (event) => {
    state.date = (event.target as HTMLInputElement).value;
  });
  el<HTMLButtonElement>('export').addEventListener('click', () => {
    const view = state.session.lastResponse;
    if (!view) {
      toast('nothing to export');
      return;
    }
    const blob = new Blob([exportPlan(view)], { type: 'application/json' });
    const link = document.createElement('a');
    link.href = URL.createObjectURL(blob);
    link.download = `plan-${view.session}.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  });
}

async function start(): Promise<void> {
  wireControls();
  try {
    state.geo = await client.network();
  } catch (err) {
    toast(`failed to fetch network: ${String(err)}`);
    return;
  }
  try {
    state.qvalues = await client.qvalues();
  } catch {
    state.qvalues = [];
  }
  state.layer = renderMap(el<HTMLDivElement>('map'), state.geo, (sid) => void toggle(sid));
  await restoreSession();
  renderPanel();
  redraw();
}

void start();
