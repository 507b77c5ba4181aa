/**
 * Diverging color scale for segment overlays: blue means improvement, red
 * means harm, neutral gray for missing values. Colors derive only from the
 * overlay payload the server sent.
 */

export const NEUTRAL = '#9aa0a6';

const BLUE: [number, number, number] = [13, 71, 161];
const WHITE: [number, number, number] = [245, 245, 245];
const RED: [number, number, number] = [183, 28, 28];

function mix(a: [number, number, number], b: [number, number, number], t: number): string {
  const channel = (i: 0 | 1 | 2) => Math.round(a[i] + (b[i] - a[i]) * t);
  return `rgb(${channel(0)}, ${channel(1)}, ${channel(2)})`;
}

export interface ScaleDomain {
  min: number;
  max: number;
  center: number;
  /** true when larger values mean improvement (Q); false for risk/volume */
  higherIsBetter: boolean;
}

export function domainFromValues(
  values: number[],
  higherIsBetter: boolean,
  center?: number,
): ScaleDomain {
  if (values.length === 0) {
    return { min: 0, max: 0, center: 0, higherIsBetter };
  }
  const min = Math.min(...values);
  const max = Math.max(...values);
  const mid = center ?? (higherIsBetter ? 0 : (min + max) / 2);
  return { min, max, center: mid, higherIsBetter };
}

/** Normalized position in [-1, 1]: +1 = best (deepest blue), -1 = worst. */
export function goodness(value: number, domain: ScaleDomain): number {
  const span = (side: number) => (side === 0 ? 1 : Math.abs(side));
  let t: number;
  if (value >= domain.center) {
    t = (value - domain.center) / span(domain.max - domain.center);
  } else {
    t = (value - domain.center) / span(domain.center - domain.min);
  }
  t = Math.max(-1, Math.min(1, t));
  return domain.higherIsBetter ? t : -t;
}

export function colorFor(value: number | null, domain: ScaleDomain): string {
  if (value === null || Number.isNaN(value)) {
    return NEUTRAL;
  }
  const g = goodness(value, domain);
  return g >= 0 ? mix(WHITE, BLUE, g) : mix(WHITE, RED, -g);
}

export function legendStops(domain: ScaleDomain, count = 5): { value: number; color: string }[] {
  const stops: { value: number; color: string }[] = [];
  for (let i = 0; i < count; i += 1) {
    const value = domain.min + ((domain.max - domain.min) * i) / (count - 1);
    stops.push({ value, color: colorFor(value, domain) });
  }
  return stops;
}

/** Deepest blue of the scale; the best segment must land exactly here. */
export function deepestBlue(): string {
  return mix(WHITE, BLUE, 1);
}
