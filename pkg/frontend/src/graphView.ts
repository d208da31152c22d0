// Attention-graph rendering: nodes grouped into turn columns (temporal order
// stays legible), directed edges with stroke width proportional to the
// min-max normalized attention weight within each destination's incoming
// set. Hovering an edge shows the raw attention. Rendering is a pure
// function of the snapshot: the same snapshot always yields the same DOM.

import type { TraceSnapshot } from "./api.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const COLUMN_WIDTH = 120;
const ROW_HEIGHT = 54;
const NODE_RADIUS = 7;
const MARGIN = 40;

export interface RenderedEdge {
  src: number;
  dst: number;
  raw: number;
  normalized: number;
}

export function normalizedEdges(snapshot: TraceSnapshot): RenderedEdge[] {
  if (snapshot.layers.length === 0) return [];
  const incoming = new Map<number, { src: number; w: number }[]>();
  for (const e of snapshot.layers[0].alpha) {
    if (e.src === e.dst) continue; // self-loops are not influence
    const list = incoming.get(e.dst) ?? [];
    list.push({ src: e.src, w: e.w });
    incoming.set(e.dst, list);
  }
  const out: RenderedEdge[] = [];
  for (const [dst, list] of incoming) {
    const raws = list.map((e) => e.w);
    const lo = Math.min(...raws);
    const hi = Math.max(...raws);
    for (const e of list) {
      let normalized: number;
      if (list.length === 1) normalized = 1;
      else if (hi === lo) normalized = 0;
      else normalized = (e.w - lo) / (hi - lo);
      out.push({ src: e.src, dst, raw: e.w, normalized });
    }
  }
  out.sort((a, b) => a.dst - b.dst || a.src - b.src);
  return out;
}

interface NodePosition {
  x: number;
  y: number;
}

function layout(snapshot: TraceSnapshot): NodePosition[] {
  const perTurn = new Map<number, number>();
  return snapshot.nodes.map((node) => {
    const row = perTurn.get(node.turn) ?? 0;
    perTurn.set(node.turn, row + 1);
    return { x: MARGIN + node.turn * COLUMN_WIDTH, y: MARGIN + row * ROW_HEIGHT };
  });
}

export function renderGraph(snapshot: TraceSnapshot, container: HTMLElement): void {
  container.textContent = "";
  const doc = container.ownerDocument;
  const positions = layout(snapshot);
  const turns = snapshot.nodes.length
    ? Math.max(...snapshot.nodes.map((n) => n.turn)) + 1
    : 0;
  const rows = snapshot.nodes.length
    ? Math.max(...Array.from(positions.values()).map((p) => p.y))
    : 0;
  const svg = doc.createElementNS(SVG_NS, "svg");
  svg.setAttribute("class", "attention-graph");
  svg.setAttribute("width", String(MARGIN * 2 + Math.max(turns - 1, 0) * COLUMN_WIDTH + 80));
  svg.setAttribute("height", String(rows + MARGIN + 40));

  for (const edge of normalizedEdges(snapshot)) {
    const a = positions[edge.src];
    const b = positions[edge.dst];
    const line = doc.createElementNS(SVG_NS, "line");
    line.setAttribute("class", "graph-edge");
    line.setAttribute("x1", String(a.x));
    line.setAttribute("y1", String(a.y));
    line.setAttribute("x2", String(b.x));
    line.setAttribute("y2", String(b.y));
    line.setAttribute("stroke", "#5b7da0");
    line.setAttribute("stroke-opacity", "0.75");
    line.setAttribute("stroke-width", (0.5 + 3.0 * edge.normalized).toFixed(2));
    const title = doc.createElementNS(SVG_NS, "title");
    title.textContent = `raw attention ${edge.raw.toFixed(4)}`;
    line.appendChild(title);
    svg.appendChild(line);
  }

  snapshot.nodes.forEach((node, i) => {
    const pos = positions[i];
    const group = doc.createElementNS(SVG_NS, "g");
    group.setAttribute("class", "graph-node");
    const circle = doc.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", String(pos.x));
    circle.setAttribute("cy", String(pos.y));
    circle.setAttribute("r", String(NODE_RADIUS));
    circle.setAttribute("fill", "#2b5f8a");
    const label = doc.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(pos.x));
    label.setAttribute("y", String(pos.y + NODE_RADIUS + 12));
    label.setAttribute("text-anchor", "middle");
    label.setAttribute("font-size", "10");
    label.textContent = `u${node.turn}:${node.label}`;
    group.appendChild(circle);
    group.appendChild(label);
    svg.appendChild(group);
  });

  container.appendChild(svg);
}
