// Stream behavior: ordering, dedup, terminal close, gap-free reconnect.

import { describe, expect, it } from "vitest";

import type { StepRecord } from "../src/api";
import { RunStream } from "../src/stream";
import { positionRecord, runDoc, scriptedFactory, sleep } from "./helpers";

function collect() {
  const steps: number[] = [];
  const statuses: string[] = [];
  const runs: string[] = [];
  return {
    steps,
    statuses,
    runs,
    handlers: {
      onRecords: (records: StepRecord[]) => steps.push(...records.map((r) => r.step)),
      onStatus: (s: string) => statuses.push(s),
      onRun: (r: { state: string }) => runs.push(r.state),
    },
  };
}

describe("RunStream", () => {
  it("delivers records in step order and drops stale duplicates", () => {
    const { sources, factory } = scriptedFactory();
    const sink = collect();
    const stream = new RunStream("r1", sink.handlers, factory);
    stream.start();
    sources[0].emit("records", [positionRecord(0, "a"), positionRecord(1, "a")]);
    sources[0].emit("records", [positionRecord(1, "a"), positionRecord(2, "a")]); // overlap
    sources[0].emit("records", [positionRecord(2, "a")]); // pure duplicate
    expect(sink.steps).toEqual([0, 1, 2]);
    expect(stream.lastStep).toBe(2);
  });

  it("closes on terminal run state", () => {
    const { sources, factory } = scriptedFactory();
    const sink = collect();
    const stream = new RunStream("r1", sink.handlers, factory);
    stream.start();
    sources[0].emit("run", runDoc("COMPLETED"));
    expect(sink.runs).toEqual(["COMPLETED"]);
    expect(stream.status).toBe("closed");
    expect(sources[0].closed).toBe(true);
  });

  it("reconnects from last seen step with a visible reconnecting state", async () => {
    const { sources, factory } = scriptedFactory();
    const sink = collect();
    const stream = new RunStream("r1", sink.handlers, factory, "", 10);
    stream.start();
    sources[0].open();
    sources[0].emit("records", [positionRecord(0, "a"), positionRecord(1, "a"), positionRecord(2, "a")]);
    sources[0].fail(); // stream dies mid-run
    expect(stream.status).toBe("reconnecting");
    await sleep(30);
    expect(sources.length).toBe(2);
    expect(sources[1].url).toContain("from_step=3"); // resume exactly past last seen
    sources[1].open();
    sources[1].emit("records", [positionRecord(3, "a"), positionRecord(4, "a")]);
    expect(sink.steps).toEqual([0, 1, 2, 3, 4]); // no gap, no repeat
    expect(stream.status).toBe("live");
    expect(sink.statuses).toContain("reconnecting");
    stream.close();
  });

  it("never goes silently stale: error after close stays closed", async () => {
    const { sources, factory } = scriptedFactory();
    const sink = collect();
    const stream = new RunStream("r1", sink.handlers, factory, "", 5);
    stream.start();
    stream.close();
    sources[0].fail();
    await sleep(20);
    expect(sources.length).toBe(1);
    expect(stream.status).toBe("closed");
  });
});
