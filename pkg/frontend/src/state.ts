// View-model state: trails, side lookup, run board derivations.
// Nothing here is authoritative - it is all reconstructible from the API.

import type { RunDoc, ScenarioAgent, ScenarioDoc, StepRecord } from "./api";

export const TRAIL_LIMIT = 200;

export interface TrailPoint {
  step: number;
  x: number;
  y: number;
  z: number;
  heading: number;
  speed: number;
}

export function pointFrom(record: StepRecord): TrailPoint {
  const p = record.payload;
  return {
    step: record.step,
    x: p.x as number,
    y: p.y as number,
    z: p.z as number,
    heading: p.heading as number,
    speed: p.speed as number,
  };
}

export class TrailStore {
  readonly trails = new Map<string, TrailPoint[]>();

  addRecords(records: StepRecord[]): void {
    for (const record of records) {
      if (record.tag !== "position") continue;
      let trail = this.trails.get(record.agent_id);
      if (!trail) {
        trail = [];
        this.trails.set(record.agent_id, trail);
      }
      const last = trail[trail.length - 1];
      if (last && record.step <= last.step) continue; // stale duplicate
      trail.push(pointFrom(record));
      if (trail.length > TRAIL_LIMIT) trail.splice(0, trail.length - TRAIL_LIMIT);
    }
  }

  agents(): string[] {
    return [...this.trails.keys()].sort();
  }

  latest(agentId: string): TrailPoint | undefined {
    const trail = this.trails.get(agentId);
    return trail ? trail[trail.length - 1] : undefined;
  }

  lastStep(): number {
    let max = -1;
    for (const trail of this.trails.values()) {
      const last = trail[trail.length - 1];
      if (last && last.step > max) max = last.step;
    }
    return max;
  }

  /** Steps covered per agent are contiguous while the agent lives. */
  gapFree(): boolean {
    for (const trail of this.trails.values()) {
      for (let i = 1; i < trail.length; i++) {
        if (trail[i].step !== trail[i - 1].step + 1) return false;
      }
    }
    return true;
  }

  clear(): void {
    this.trails.clear();
  }
}

function walkAgents(agents: ScenarioAgent[], visit: (a: ScenarioAgent) => void): void {
  for (const agent of agents) {
    visit(agent);
    walkAgents(agent.components ?? [], visit);
  }
}

/** agent id -> side, including spawned missiles ("<weapon>.m<k>"). */
export function sideMap(scenario: ScenarioDoc): Map<string, string> {
  const sides = new Map<string, string>();
  walkAgents(scenario.agents, (a) => sides.set(a.agent_id, a.side));
  return sides;
}

export function sideOf(agentId: string, sides: Map<string, string>): string {
  const direct = sides.get(agentId);
  if (direct) return direct;
  const m = agentId.match(/^(.*)\.m\d+$/);
  if (m) return sides.get(m[1]) ?? "NEUTRAL";
  return "NEUTRAL";
}

export function runProgress(run: RunDoc, lastStep: number): number {
  const max = run.request.scenario.sim.max_steps;
  if (max <= 0) return 0;
  const done = run.state === "COMPLETED" ? max : Math.max(0, lastStep);
  return Math.min(1, done / max);
}

export interface RollupSegment {
  state: string;
  count: number;
  fraction: number;
}

export function rollupSegments(rollup: Record<string, number>, total: number): RollupSegment[] {
  const order = ["COMPLETED", "RUNNING", "PAUSED", "ASSIGNED", "PENDING", "STOPPED", "FAILED"];
  const segments: RollupSegment[] = [];
  for (const state of order) {
    const count = rollup[state] ?? 0;
    if (count > 0) segments.push({ state, count, fraction: total > 0 ? count / total : 0 });
  }
  for (const state of Object.keys(rollup)) {
    if (!order.includes(state) && rollup[state] > 0) {
      segments.push({ state, count: rollup[state], fraction: total > 0 ? rollup[state] / total : 0 });
    }
  }
  return segments;
}

export const SIDE_COLORS: Record<string, string> = {
  BLUE: "#4da3ff",
  RED: "#ff5d5d",
  NEUTRAL: "#b9bec7",
};
