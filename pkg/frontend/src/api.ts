/** Typed fetch client for the what-if service; the only backend the UI talks to. */

import type { NetworkGeoJson, PlanView, QValueEntry, WhatIfResponse } from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { detail?: string };
    if (body.detail) {
      detail = body.detail;
    }
  } catch {
    // keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class Client {
  constructor(readonly baseUrl: string) {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) {
      await parseError(res);
    }
    return (await res.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      await parseError(res);
    }
    return (await res.json()) as T;
  }

  network(): Promise<NetworkGeoJson> {
    return this.get('/network');
  }

  qvalues(): Promise<QValueEntry[]> {
    return this.get('/qvalues');
  }

  state(date: string): Promise<{ volumes: Record<string, number>; risk_total: number }> {
    return this.get(`/state/${date}`);
  }

  whatif(date: string, open: number[]): Promise<WhatIfResponse> {
    return this.post('/whatif', { date, open });
  }

  openSegment(session: string | null, date: string | null, segment: number): Promise<PlanView> {
    return this.post('/plan/step', { session, date, open: segment });
  }

  closeSegment(session: string, segment: number): Promise<PlanView> {
    return this.post('/plan/step', { session, close: segment });
  }

  plan(session: string): Promise<PlanView> {
    return this.get(`/plan/${session}`);
  }
}
