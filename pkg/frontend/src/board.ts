// Run board: batches with rollup bars plus a filterable run table.

import type { Api, BatchDoc, RunDoc } from "./api";
import { rollupSegments } from "./state";

const STATES = ["", "PENDING", "ASSIGNED", "RUNNING", "PAUSED", "COMPLETED", "STOPPED", "FAILED"];

export class RunBoard {
  stateFilter = "";
  batchFilter = "";
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private api: Api,
    private root: HTMLElement,
    private openRun: (runId: string) => void,
  ) {}

  start(pollMs = 2000): void {
    this.root.innerHTML = `
      <div class="board-filters">
        <label>state <select data-testid="state-filter">${STATES.map(
          (s) => `<option value="${s}">${s || "all"}</option>`,
        ).join("")}</select></label>
        <label>batch <input data-testid="batch-filter" placeholder="batch id"></label>
      </div>
      <div data-testid="batches" class="batches"></div>
      <table class="runs"><thead><tr>
        <th>run</th><th>state</th><th>node</th><th>attempts</th><th>progress</th>
      </tr></thead><tbody data-testid="runs"></tbody></table>`;
    this.root.querySelector<HTMLSelectElement>("[data-testid=state-filter]")!.addEventListener("change", (ev) => {
      this.stateFilter = (ev.target as HTMLSelectElement).value;
      void this.refresh();
    });
    this.root.querySelector<HTMLInputElement>("[data-testid=batch-filter]")!.addEventListener("input", (ev) => {
      this.batchFilter = (ev.target as HTMLInputElement).value.trim();
      void this.refresh();
    });
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), pollMs);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
  }

  async refresh(): Promise<void> {
    const [batches, runs] = await Promise.all([
      this.api.listBatches(),
      this.api.listRuns({
        batch: this.batchFilter || undefined,
        state: this.stateFilter || undefined,
      }),
    ]);
    this.renderBatches(batches);
    this.renderRuns(runs);
  }

  private renderBatches(batches: BatchDoc[]): void {
    const host = this.root.querySelector("[data-testid=batches]")!;
    host.innerHTML = "";
    for (const batch of batches) {
      const total = batch.run_ids.length;
      const segments = rollupSegments(batch.rollup, total);
      const bar = segments
        .map(
          (s) =>
            `<span class="seg seg-${s.state.toLowerCase()}" style="width:${(s.fraction * 100).toFixed(1)}%" ` +
            `title="${s.state}: ${s.count}"></span>`,
        )
        .join("");
      const div = document.createElement("div");
      div.className = "batch-row";
      div.innerHTML = `<span class="mono">${batch.batch_id}</span>
        <span>${total} runs</span><span class="rollup-bar">${bar}</span>`;
      div.addEventListener("click", () => {
        const input = this.root.querySelector<HTMLInputElement>("[data-testid=batch-filter]")!;
        input.value = batch.batch_id;
        this.batchFilter = batch.batch_id;
        void this.refresh();
      });
      host.appendChild(div);
    }
  }

  private renderRuns(runs: RunDoc[]): void {
    const body = this.root.querySelector("[data-testid=runs]")!;
    body.innerHTML = "";
    for (const run of runs) {
      const tr = document.createElement("tr");
      // terminal runs are definitely done; in-flight progress comes from the
      // live view (poll-based board has no per-step knowledge)
      const progress =
        run.state === "COMPLETED" ? `value="1"` : run.state === "PENDING" ? `value="0"` : "";
      tr.innerHTML = `<td class="mono">${run.run_id}</td><td><span class="badge badge-${run.state.toLowerCase()}">${run.state}</span></td>
        <td>${run.node_id ?? "-"}</td><td>${run.attempts}</td>
        <td><progress max="1" ${progress}></progress></td>`;
      tr.addEventListener("click", () => this.openRun(run.run_id));
      body.appendChild(tr);
    }
  }
}
