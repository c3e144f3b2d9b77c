// Shared stubs: a scripted EventSource and a fake manager backend that
// honors the records query contract, so client tests run against the same
// shapes the real API serves.

import type { FetchLike, RunDoc, ScenarioDoc, StepRecord } from "../src/api";
import type { EventSourceLike } from "../src/stream";

export function scenarioDoc(maxSteps = 500, agents = ["blue1", "red1"]): ScenarioDoc {
  return {
    name: "stub",
    description: "",
    sim: { step_dt: 0.1, max_steps: maxSteps, seed: 1 },
    agents: agents.map((id) => ({
      agent_id: id,
      side: id.startsWith("blue") ? "BLUE" : "RED",
      model: { name: "waypoint_platform", version: "1.0" },
      params: {},
      components: [],
    })),
  };
}

export function runDoc(state = "RUNNING", maxSteps = 500, agents = ["blue1", "red1"]): RunDoc {
  return {
    run_id: "r1",
    state,
    node_id: "n1",
    attempts: 1,
    batch_id: "b1",
    detail: "",
    timestamps: {},
    request: {
      request_id: "r1",
      seed: 7,
      scenario: scenarioDoc(maxSteps, agents),
      origin: { batch_id: "b1", index: 0 },
    },
  };
}

export function positionRecord(step: number, agentId: string): StepRecord {
  return {
    run_id: "r1",
    step,
    sim_time: step * 0.1,
    tag: "position",
    agent_id: agentId,
    payload: { x: step * 10 + agentId.length, y: step * 5, z: 1000, heading: 0.1, speed: 100 },
  };
}

export function syntheticLog(steps: number, agents: string[]): StepRecord[] {
  const out: StepRecord[] = [];
  for (let s = 0; s <= steps; s++) {
    for (const a of [...agents].sort()) out.push(positionRecord(s, a));
  }
  return out;
}

/** In-memory manager: /runs/{id}, /runs/{id}/records with query support,
 * /runs/{id}/control that records calls and (optionally) answers. */
export class FakeBackend {
  run: RunDoc;
  records: StepRecord[] = [];
  controlCalls: unknown[] = [];
  fetchCalls: string[] = [];
  controlDelayMs = 0;

  constructor(run: RunDoc = runDoc()) {
    this.run = run;
  }

  fetchLike: FetchLike = async (url, init) => {
    this.fetchCalls.push(url);
    const u = new URL(url, "http://local");
    const respond = (doc: unknown, status = 200) =>
      new Response(JSON.stringify(doc), { status, headers: { "Content-Type": "application/json" } });
    const m = u.pathname.match(/^\/runs\/([^/]+)(\/.*)?$/);
    if (!m) return respond({ error: "no route" }, 404);
    if (m[1] !== this.run.run_id) return respond({ error: "unknown run" }, 404);
    const tail = m[2] ?? "";
    if (tail === "" || tail === "/") return respond(this.run);
    if (tail === "/records") {
      const from = u.searchParams.has("from_step") ? Number(u.searchParams.get("from_step")) : -Infinity;
      const to = u.searchParams.has("to_step") ? Number(u.searchParams.get("to_step")) : Infinity;
      const tag = u.searchParams.get("tag");
      return respond(
        this.records.filter((r) => r.step >= from && r.step <= to && (tag === null || r.tag === tag)),
      );
    }
    if (tail === "/control") {
      const body = JSON.parse(String(init?.body ?? "{}"));
      this.controlCalls.push(body);
      if (this.controlDelayMs > 0) await new Promise((r) => setTimeout(r, this.controlDelayMs));
      return respond(this.run);
    }
    return respond({ error: "no route" }, 404);
  };
}

export class ScriptedSource implements EventSourceLike {
  closed = false;
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  private listeners = new Map<string, ((ev: MessageEvent) => void)[]>();

  constructor(public url: string) {}

  addEventListener(type: string, listener: (ev: MessageEvent) => void): void {
    const list = this.listeners.get(type) ?? [];
    list.push(listener);
    this.listeners.set(type, list);
  }

  emit(type: string, data: unknown): void {
    for (const fn of this.listeners.get(type) ?? []) {
      fn({ data: JSON.stringify(data) } as MessageEvent);
    }
  }

  open(): void {
    this.onopen?.({});
  }

  fail(): void {
    this.onerror?.({});
  }

  close(): void {
    this.closed = true;
  }
}

export function scriptedFactory(): { sources: ScriptedSource[]; factory: (url: string) => EventSourceLike } {
  const sources: ScriptedSource[] = [];
  return {
    sources,
    factory: (url: string) => {
      const s = new ScriptedSource(url);
      sources.push(s);
      return s;
    },
  };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((r) => setTimeout(r, ms));
}
