// Typed client for the manager HTTP API. All validation happens
// server-side; 422 bodies surface verbatim through ApiError.

export interface SimBlock {
  step_dt: number;
  max_steps: number;
  seed: number;
}

export interface ScenarioAgent {
  agent_id: string;
  side: string;
  model: { name: string; version: string };
  params: Record<string, unknown>;
  components: ScenarioAgent[];
}

export interface ScenarioDoc {
  name: string;
  description: string;
  sim: SimBlock;
  agents: ScenarioAgent[];
}

export interface RunDoc {
  run_id: string;
  state: string;
  node_id: string | null;
  attempts: number;
  batch_id: string | null;
  detail: string;
  timestamps: Record<string, number>;
  request: {
    request_id: string;
    seed: number;
    scenario: ScenarioDoc;
    origin: { batch_id: string; index: number };
  };
}

export interface StepRecord {
  run_id: string;
  step: number;
  sim_time: number;
  tag: string;
  agent_id: string;
  payload: Record<string, number | string | boolean>;
}

export interface BatchDoc {
  batch_id: string;
  template_id: string;
  batch_seed: number;
  bindings: Record<string, unknown>[];
  run_ids: string[];
  rollup: Record<string, number>;
}

export interface TemplatePlaceholder {
  name: string;
  path: string;
  kind: string;
  bounds?: [number, number];
}

export interface TemplateDoc {
  base: ScenarioDoc;
  placeholders: TemplatePlaceholder[];
}

export interface CatalogItem<T> {
  id: string;
  revision: number;
  body: T;
}

export interface NodeDoc {
  node_id: string;
  capacity: number;
  status: string;
  running: string[];
}

export type ControlCommand =
  | { type: "play" | "pause" | "resume" | "stop" }
  | { type: "set_speed"; factor: number }
  | { type: "set_param"; agent_id: string; param_path: string; value: unknown };

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: unknown,
  ) {
    super(`HTTP ${status}`);
  }

  violations(): { code: string; path: string; detail: string }[] {
    const doc = this.body as { violations?: { code: string; path: string; detail: string }[] };
    return doc && Array.isArray(doc.violations) ? doc.violations : [];
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Api {
  constructor(
    private base = "",
    private fetchFn: FetchLike = (url, init) => globalThis.fetch(url, init),
  ) {}

  private async req<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "Content-Type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchFn(this.base + path, init);
    let doc: unknown = null;
    try {
      doc = await resp.json();
    } catch {
      doc = null;
    }
    if (!resp.ok) throw new ApiError(resp.status, doc);
    return doc as T;
  }

  listRuns(filter: { batch?: string; state?: string } = {}): Promise<RunDoc[]> {
    const q = new URLSearchParams();
    if (filter.batch) q.set("batch", filter.batch);
    if (filter.state) q.set("state", filter.state);
    const qs = q.toString();
    return this.req("GET", `/runs${qs ? "?" + qs : ""}`);
  }

  getRun(runId: string): Promise<RunDoc> {
    return this.req("GET", `/runs/${runId}`);
  }

  records(
    runId: string,
    opts: { fromStep?: number; toStep?: number; tag?: string } = {},
  ): Promise<StepRecord[]> {
    const q = new URLSearchParams();
    if (opts.fromStep !== undefined) q.set("from_step", String(opts.fromStep));
    if (opts.toStep !== undefined) q.set("to_step", String(opts.toStep));
    if (opts.tag) q.set("tag", opts.tag);
    const qs = q.toString();
    return this.req("GET", `/runs/${runId}/records${qs ? "?" + qs : ""}`);
  }

  control(runId: string, command: ControlCommand): Promise<RunDoc> {
    return this.req("POST", `/runs/${runId}/control`, command);
  }

  listBatches(): Promise<BatchDoc[]> {
    return this.req("GET", "/batches");
  }

  getBatch(batchId: string): Promise<BatchDoc> {
    return this.req("GET", `/batches/${batchId}`);
  }

  submitBatch(body: {
    template_id: string;
    batch_seed: number;
    bindings?: Record<string, unknown>[];
    doe?: Record<string, unknown>;
  }): Promise<BatchDoc> {
    return this.req("POST", "/batches", body);
  }

  listScenarios(): Promise<CatalogItem<ScenarioDoc>[]> {
    return this.req("GET", "/scenarios");
  }

  addScenario(doc: ScenarioDoc): Promise<{ id: string; revision: number }> {
    return this.req("POST", "/scenarios", doc);
  }

  deleteScenario(id: string): Promise<{ deleted: string }> {
    return this.req("DELETE", `/scenarios/${id}`);
  }

  listTemplates(): Promise<CatalogItem<TemplateDoc>[]> {
    return this.req("GET", "/templates");
  }

  getTemplate(id: string): Promise<CatalogItem<TemplateDoc>> {
    return this.req("GET", `/templates/${id}`);
  }

  addTemplate(doc: TemplateDoc): Promise<{ id: string; revision: number }> {
    return this.req("POST", "/templates", doc);
  }

  listNodes(): Promise<NodeDoc[]> {
    return this.req("GET", "/nodes");
  }
}
