// Record-based replay: a scrubber over steps, rendered purely from
// GET /runs/{id}/records. Blocks of steps are fetched on demand with the
// next block prefetched; a frame for step k is exactly the position
// records stored at step k - no interpolation, no engine involvement.

import type { Api, StepRecord } from "./api";

export const BLOCK_STEPS = 200;

export class ReplayController {
  private blocks = new Map<number, StepRecord[]>();
  private loading = new Map<number, Promise<StepRecord[]>>();
  private timer: ReturnType<typeof setInterval> | null = null;
  step = 0;

  constructor(
    private api: Api,
    private runId: string,
    public readonly maxSteps: number,
    public readonly stepDt: number,
  ) {}

  clamp(step: number): number {
    return Math.max(0, Math.min(this.maxSteps, Math.floor(step)));
  }

  private async block(index: number): Promise<StepRecord[]> {
    const cached = this.blocks.get(index);
    if (cached) return cached;
    let pending = this.loading.get(index);
    if (!pending) {
      pending = this.api
        .records(this.runId, {
          fromStep: index * BLOCK_STEPS,
          toStep: (index + 1) * BLOCK_STEPS - 1,
          tag: "position",
        })
        .then((records) => {
          this.blocks.set(index, records);
          this.loading.delete(index);
          return records;
        });
      this.loading.set(index, pending);
    }
    return pending;
  }

  /** Position records at exactly the clamped step. */
  async frame(step: number): Promise<StepRecord[]> {
    const at = this.clamp(step);
    this.step = at;
    const index = Math.floor(at / BLOCK_STEPS);
    const records = await this.block(index);
    if ((index + 1) * BLOCK_STEPS <= this.maxSteps) void this.block(index + 1); // prefetch
    return records.filter((r) => r.step === at);
  }

  play(speed: number, onFrame: (records: StepRecord[], step: number) => void): void {
    this.stop();
    const intervalMs = Math.max(20, (this.stepDt * 1000) / Math.max(speed, 0.01));
    const stride = Math.max(1, Math.round(20 / intervalMs)); // keep UI rate sane
    this.timer = setInterval(async () => {
      if (this.step >= this.maxSteps) {
        this.stop();
        return;
      }
      const next = this.clamp(this.step + stride);
      onFrame(await this.frame(next), next);
    }, Math.max(intervalMs, 20));
  }

  get playing(): boolean {
    return this.timer !== null;
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }
}
