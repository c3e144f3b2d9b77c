// Live run view: stream consumption, trail upkeep, and the control strip.
//
// Two hard rules from the server contract: glyphs render only from
// received position records (no extrapolation), and control buttons are
// never optimistic - they reflect the last server-confirmed run state.
// On reload, everything rebuilds from the API: run doc, stored trail
// tail, then the stream resumed from the last persisted step.

import { Api, type RunDoc, type StepRecord } from "./api";
import { MapRenderer } from "./map";
import { RunStream, type EventSourceFactory, type StreamStatus } from "./stream";
import { sideMap, sideOf, TrailStore, TRAIL_LIMIT } from "./state";

export interface LiveViewOptions {
  esFactory?: EventSourceFactory;
  now?: () => number;
}

export class LiveView {
  readonly trails = new TrailStore();
  run: RunDoc | null = null;
  streamStatus: StreamStatus = "connecting";
  selected: string | null = null;
  lastConfirmedState = "";
  stateConfirmedAt = 0;

  private stream: RunStream | null = null;
  private sides = new Map<string, string>();
  private renderer: MapRenderer | null = null;
  private now: () => number;

  constructor(
    private api: Api,
    private runId: string,
    private root: HTMLElement | null,
    private options: LiveViewOptions = {},
  ) {
    this.now = options.now ?? (() => Date.now());
  }

  async boot(): Promise<void> {
    const run = await this.api.getRun(this.runId);
    this.applyRun(run);
    // rebuild the trail tail from persisted records, then go live just past it
    let resumeFrom = 0;
    try {
      const stored = await this.api.records(this.runId, { tag: "position" });
      if (stored.length > 0) {
        const lastStep = stored[stored.length - 1].step;
        const tail = stored.filter((r) => r.step > lastStep - TRAIL_LIMIT);
        this.trails.addRecords(tail);
        resumeFrom = lastStep + 1;
      }
    } catch {
      resumeFrom = 0; // no records yet
    }
    if (this.root) this.mount();
    this.stream = new RunStream(
      this.runId,
      {
        onRun: (doc) => this.applyRun(doc),
        onRecords: (records) => this.applyRecords(records),
        onStatus: (status) => {
          this.streamStatus = status;
          this.render();
        },
      },
      this.options.esFactory,
    );
    this.stream.start(resumeFrom);
    this.render();
  }

  applyRun(run: RunDoc): void {
    this.run = run;
    this.sides = sideMap(run.request.scenario);
    if (run.state !== this.lastConfirmedState) {
      this.lastConfirmedState = run.state;
      this.stateConfirmedAt = this.now();
    }
    this.render();
  }

  applyRecords(records: StepRecord[]): void {
    this.trails.addRecords(records);
    this.render();
  }

  frozen(): boolean {
    return this.run !== null && this.run.state !== "RUNNING";
  }

  async sendControl(command: Parameters<Api["control"]>[1]): Promise<void> {
    // fire the order; the badge changes only when the server confirms
    await this.api.control(this.runId, command);
  }

  close(): void {
    this.stream?.close();
  }

  // --- DOM ------------------------------------------------------------------

  private mount(): void {
    const root = this.root!;
    root.innerHTML = `
      <div class="live-head">
        <span data-testid="run-id" class="mono"></span>
        <span data-testid="state-badge" class="badge"></span>
        <span data-testid="stream-status" class="stream-status"></span>
      </div>
      <div class="live-body">
        <canvas data-testid="map" width="840" height="560"></canvas>
        <div class="side-panel">
          <div data-testid="agent-panel" class="agent-panel">no agent selected</div>
          <div class="control-strip">
            <button data-testid="btn-play">play</button>
            <button data-testid="btn-pause">pause</button>
            <button data-testid="btn-resume">resume</button>
            <button data-testid="btn-stop">stop</button>
            <label>speed <input data-testid="speed" type="range" min="0" max="10" step="0.5" value="0">
              <span data-testid="speed-label">0x</span></label>
            <form data-testid="param-form">
              <input name="path" placeholder="agents.blue1.params.speed_mps">
              <input name="value" placeholder="value (JSON)">
              <button type="submit">set param</button>
            </form>
            <div data-testid="control-error" class="error"></div>
          </div>
        </div>
      </div>`;
    const canvas = root.querySelector<HTMLCanvasElement>("[data-testid=map]")!;
    this.renderer = new MapRenderer(canvas);
    canvas.addEventListener("click", (ev) => {
      const rect = canvas.getBoundingClientRect();
      this.selected = this.renderer!.hitTest(this.trails, ev.clientX - rect.left, ev.clientY - rect.top);
      this.render();
    });
    const wire = (testid: string, command: Parameters<Api["control"]>[1]) => {
      root.querySelector(`[data-testid=${testid}]`)!.addEventListener("click", () => {
        void this.sendControl(command).catch((err) => this.showError(err));
      });
    };
    wire("btn-play", { type: "play" });
    wire("btn-pause", { type: "pause" });
    wire("btn-resume", { type: "resume" });
    wire("btn-stop", { type: "stop" });
    const slider = root.querySelector<HTMLInputElement>("[data-testid=speed]")!;
    slider.addEventListener("change", () => {
      root.querySelector("[data-testid=speed-label]")!.textContent = `${slider.value}x`;
      void this.sendControl({ type: "set_speed", factor: Number(slider.value) }).catch((err) =>
        this.showError(err),
      );
    });
    const form = root.querySelector<HTMLFormElement>("[data-testid=param-form]")!;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const data = new FormData(form);
      const path = String(data.get("path") ?? "");
      const parts = path.split(".");
      let value: unknown = String(data.get("value") ?? "");
      try {
        value = JSON.parse(String(data.get("value")));
      } catch {
        // keep as text
      }
      void this.sendControl({
        type: "set_param",
        agent_id: parts.length > 1 ? parts[1] : "",
        param_path: path,
        value,
      }).catch((err) => this.showError(err));
    });
  }

  private showError(err: unknown): void {
    const el = this.root?.querySelector("[data-testid=control-error]");
    if (el) el.textContent = err instanceof Error ? err.message : String(err);
  }

  render(): void {
    if (!this.root) return;
    const badge = this.root.querySelector("[data-testid=state-badge]");
    if (badge && this.run) {
      badge.textContent = this.run.state;
      badge.className = `badge badge-${this.run.state.toLowerCase()}`;
    }
    const id = this.root.querySelector("[data-testid=run-id]");
    if (id) id.textContent = this.runId;
    const status = this.root.querySelector("[data-testid=stream-status]");
    if (status) {
      status.textContent = this.streamStatus === "live" ? "" : this.streamStatus;
      status.className = `stream-status stream-${this.streamStatus}`;
    }
    const panel = this.root.querySelector("[data-testid=agent-panel]");
    if (panel) {
      if (this.selected) {
        const p = this.trails.latest(this.selected);
        panel.textContent = p
          ? `${this.selected}  (${sideOf(this.selected, this.sides)})\n` +
            `x ${p.x.toFixed(1)}  y ${p.y.toFixed(1)}  z ${p.z.toFixed(1)}\n` +
            `heading ${p.heading.toFixed(3)} rad  speed ${p.speed.toFixed(1)} m/s  step ${p.step}`
          : `${this.selected}: no position yet`;
      } else {
        panel.textContent = "no agent selected";
      }
    }
    this.renderer?.draw(
      this.trails,
      this.sides,
      sideOf,
      this.selected,
      this.streamStatus === "reconnecting" ? "reconnecting..." : this.frozen() && this.run ? this.run.state : null,
    );
  }
}
