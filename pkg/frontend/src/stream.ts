// Live run subscription over Server-Sent Events with gap-free resume.
//
// The server replays the persisted tail when from_step is passed, so a
// reconnect that resumes from last-seen + 1 never loses a step. Stale or
// duplicate steps are dropped locally; records are delivered in step order.

import type { RunDoc, StepRecord } from "./api";

export type StreamStatus = "connecting" | "live" | "reconnecting" | "closed";

export interface EventSourceLike {
  addEventListener(type: string, listener: (ev: MessageEvent) => void): void;
  close(): void;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface RunStreamHandlers {
  onRun?: (run: RunDoc) => void;
  onRecords?: (records: StepRecord[]) => void;
  onStatus?: (status: StreamStatus) => void;
}

const TERMINAL = new Set(["COMPLETED", "STOPPED", "FAILED"]);

export class RunStream {
  lastStep = -1;
  status: StreamStatus = "connecting";
  reconnects = 0;

  private source: EventSourceLike | null = null;
  private closed = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private runId: string,
    private handlers: RunStreamHandlers,
    private factory: EventSourceFactory = (url) => new EventSource(url) as unknown as EventSourceLike,
    private base = "",
    private retryDelayMs = 500,
  ) {}

  start(fromStep?: number): void {
    if (fromStep !== undefined) this.lastStep = fromStep - 1;
    this.open(this.url(fromStep));
  }

  private url(fromStep?: number): string {
    const suffix = fromStep !== undefined ? `?from_step=${fromStep}` : "";
    return `${this.base}/runs/${this.runId}/stream${suffix}`;
  }

  private setStatus(status: StreamStatus): void {
    if (this.status === status) return;
    this.status = status;
    this.handlers.onStatus?.(status);
  }

  private open(url: string): void {
    const source = this.factory(url);
    this.source = source;
    source.onopen = () => {
      if (!this.closed) this.setStatus("live");
    };
    source.addEventListener("run", (ev) => {
      const run = JSON.parse(ev.data) as RunDoc;
      this.setStatus("live");
      this.handlers.onRun?.(run);
      if (TERMINAL.has(run.state)) this.close();
    });
    source.addEventListener("records", (ev) => {
      const records = JSON.parse(ev.data) as StepRecord[];
      const fresh = records
        .filter((r) => r.step > this.lastStep)
        .sort((a, b) => a.step - b.step || a.agent_id.localeCompare(b.agent_id));
      if (fresh.length === 0) return;
      this.setStatus("live");
      this.lastStep = fresh[fresh.length - 1].step;
      this.handlers.onRecords?.(fresh);
    });
    source.onerror = () => {
      if (this.closed) return;
      source.close();
      this.setStatus("reconnecting");
      this.reconnects += 1;
      this.retryTimer = setTimeout(() => {
        if (!this.closed) this.open(this.url(this.lastStep + 1));
      }, this.retryDelayMs);
    };
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    this.source?.close();
    this.setStatus("closed");
  }
}
