// Replay tab: pick a completed run, scrub its timeline, play it back.

import { Api, type RunDoc, type StepRecord } from "./api";
import { MapRenderer } from "./map";
import { ReplayController } from "./replay";
import { sideMap, sideOf, TrailStore } from "./state";

export class ReplayView {
  controller: ReplayController | null = null;
  private run: RunDoc | null = null;
  private renderer: MapRenderer | null = null;
  private sides = new Map<string, string>();

  constructor(
    private api: Api,
    private root: HTMLElement,
  ) {}

  async open(runId: string): Promise<void> {
    this.run = await this.api.getRun(runId);
    this.sides = sideMap(this.run.request.scenario);
    const maxSteps = this.run.request.scenario.sim.max_steps;
    this.controller = new ReplayController(this.api, runId, maxSteps, this.run.request.scenario.sim.step_dt);
    this.root.innerHTML = `
      <div class="live-head">
        <span class="mono" data-testid="replay-run">${runId}</span>
        <span class="badge badge-${this.run.state.toLowerCase()}">${this.run.state}</span>
      </div>
      <canvas data-testid="replay-map" width="840" height="520"></canvas>
      <div class="replay-controls">
        <button data-testid="replay-play">play</button>
        <button data-testid="replay-stop">stop</button>
        <label>speed <select data-testid="replay-speed">
          <option>1</option><option selected>4</option><option>10</option><option>25</option>
        </select>x</label>
        <input data-testid="scrubber" type="range" min="0" max="${maxSteps}" value="0" class="scrubber">
        <span data-testid="step-label" class="mono">step 0 / ${maxSteps}</span>
      </div>`;
    this.renderer = new MapRenderer(this.root.querySelector<HTMLCanvasElement>("[data-testid=replay-map]")!);

    const scrubber = this.root.querySelector<HTMLInputElement>("[data-testid=scrubber]")!;
    scrubber.addEventListener("input", () => {
      this.controller!.stop();
      void this.showStep(Number(scrubber.value));
    });
    this.root.querySelector("[data-testid=replay-play]")!.addEventListener("click", () => {
      const speed = Number(this.root.querySelector<HTMLSelectElement>("[data-testid=replay-speed]")!.value);
      this.controller!.play(speed, (records, step) => {
        scrubber.value = String(step);
        this.renderFrame(records, step);
      });
    });
    this.root.querySelector("[data-testid=replay-stop]")!.addEventListener("click", () => {
      this.controller!.stop();
    });
    await this.showStep(0);
  }

  async showStep(step: number): Promise<void> {
    const records = await this.controller!.frame(step);
    this.renderFrame(records, this.controller!.step);
  }

  renderFrame(records: StepRecord[], step: number): void {
    const label = this.root.querySelector("[data-testid=step-label]");
    if (label && this.run) label.textContent = `step ${step} / ${this.run.request.scenario.sim.max_steps}`;
    const frame = new TrailStore();
    frame.addRecords(records);
    this.renderer?.draw(frame, this.sides, sideOf, null, null);
  }
}
