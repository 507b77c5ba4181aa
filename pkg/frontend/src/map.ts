/**
 * SVG map layer: one line per segment, colored from the active overlay.
 * Interaction is click-to-toggle; all styling derives from server payloads.
 */

import { ScaleDomain, colorFor } from './colors.js';
import type { NetworkGeoJson } from './types.js';

export interface SegmentShape {
  segmentId: number;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface Projection {
  minLon: number;
  maxLon: number;
  minLat: number;
  maxLat: number;
  width: number;
  height: number;
  pad: number;
}

export function fitProjection(geo: NetworkGeoJson, width: number, height: number, pad = 16): Projection {
  const lons: number[] = [];
  const lats: number[] = [];
  for (const f of geo.features) {
    for (const [lon, lat] of f.geometry.coordinates) {
      lons.push(lon);
      lats.push(lat);
    }
  }
  return {
    minLon: Math.min(...lons),
    maxLon: Math.max(...lons),
    minLat: Math.min(...lats),
    maxLat: Math.max(...lats),
    width,
    height,
    pad,
  };
}

export function project(p: Projection, lon: number, lat: number): [number, number] {
  const spanLon = p.maxLon - p.minLon || 1;
  const spanLat = p.maxLat - p.minLat || 1;
  const x = p.pad + ((lon - p.minLon) / spanLon) * (p.width - 2 * p.pad);
  // SVG y grows downward; latitude grows northward
  const y = p.height - p.pad - ((lat - p.minLat) / spanLat) * (p.height - 2 * p.pad);
  return [x, y];
}

export function segmentShapes(geo: NetworkGeoJson, p: Projection): SegmentShape[] {
  return geo.features.map((f) => {
    const [a, b] = f.geometry.coordinates;
    const [x1, y1] = project(p, a?.[0] ?? 0, a?.[1] ?? 0);
    const [x2, y2] = project(p, b?.[0] ?? 0, b?.[1] ?? 0);
    return { segmentId: f.properties.segment_id, x1, y1, x2, y2 };
  });
}

export interface MapLayer {
  svg: SVGSVGElement;
  lines: Map<number, SVGLineElement>;
}

export function renderMap(
  container: HTMLElement,
  geo: NetworkGeoJson,
  onClick: (segmentId: number) => void,
): MapLayer {
  const width = container.clientWidth || 900;
  const height = container.clientHeight || 620;
  const projection = fitProjection(geo, width, height);
  const svg = document.createElementNS('http://www.w3.org/2000/svg', 'svg');
  svg.setAttribute('viewBox', `0 0 ${width} ${height}`);
  svg.classList.add('network-map');
  const lines = new Map<number, SVGLineElement>();
  for (const shape of segmentShapes(geo, projection)) {
    const line = document.createElementNS('http://www.w3.org/2000/svg', 'line');
    line.setAttribute('x1', String(shape.x1));
    line.setAttribute('y1', String(shape.y1));
    line.setAttribute('x2', String(shape.x2));
    line.setAttribute('y2', String(shape.y2));
    line.setAttribute('data-segment', String(shape.segmentId));
    line.addEventListener('click', () => onClick(shape.segmentId));
    svg.appendChild(line);
    lines.set(shape.segmentId, line);
  }
  container.replaceChildren(svg);
  return { svg, lines };
}

export function applyOverlay(
  layer: MapLayer,
  values: Map<number, number | null>,
  domain: ScaleDomain,
  openSet: Set<number>,
): void {
  for (const [segmentId, line] of layer.lines) {
    const value = values.get(segmentId) ?? null;
    line.style.stroke = colorFor(value, domain);
    line.style.strokeWidth = openSet.has(segmentId) ? '6' : '3';
    line.style.strokeDasharray = openSet.has(segmentId) ? '6 3' : '';
  }
}
