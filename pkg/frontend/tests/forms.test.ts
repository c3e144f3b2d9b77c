// Forms: correct submission bodies, inline 422 rendering.

import { describe, expect, it } from "vitest";

import { Api, type FetchLike } from "../src/api";
import { Forms } from "../src/forms";

function respond(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), { status, headers: { "Content-Type": "application/json" } });
}

function mount(fetchLike: FetchLike) {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const submitted: string[] = [];
  const forms = new Forms(new Api("", fetchLike), root, (id) => submitted.push(id));
  forms.start();
  return { root, submitted };
}

function flush(): Promise<void> {
  return new Promise((r) => setTimeout(r, 10));
}

describe("batch form", () => {
  it("posts a full factorial design in the server's shape", async () => {
    const bodies: unknown[] = [];
    const { root } = mount(async (url, init) => {
      bodies.push(JSON.parse(String(init?.body)));
      return respond({ batch_id: "b9", run_ids: Array(24).fill("r"), bindings: [], rollup: {} });
    });
    root.querySelector<HTMLInputElement>("[data-testid=batch-template]")!.value = "t1";
    root.querySelector<HTMLInputElement>("[data-testid=batch-seed]")!.value = "5";
    root.querySelector<HTMLSelectElement>("[data-testid=batch-mode]")!.value = "full_factorial";
    root.querySelector<HTMLTextAreaElement>("[data-testid=batch-spec]")!.value =
      '{"a": [1,2,3], "b": [1,2,3,4], "c": [1,2]}';
    (root.querySelector("[data-testid=batch-submit]") as HTMLButtonElement).click();
    await flush();
    expect(bodies).toEqual([
      {
        template_id: "t1",
        batch_seed: 5,
        doe: { kind: "full_factorial", factors: { a: [1, 2, 3], b: [1, 2, 3, 4], c: [1, 2] } },
      },
    ]);
    expect(root.querySelector("[data-testid=batch-result]")!.textContent).toContain("24 runs");
  });

  it("renders server 422 violations inline", async () => {
    const { root } = mount(async () =>
      respond(
        {
          error: "validation failed",
          violations: [{ code: "bad_binding", path: "bindings[1]", detail: "missing_binding: speed" }],
        },
        422,
      ),
    );
    root.querySelector<HTMLInputElement>("[data-testid=batch-template]")!.value = "t1";
    root.querySelector<HTMLTextAreaElement>("[data-testid=batch-spec]")!.value = '[{"speed": 1}, {}]';
    (root.querySelector("[data-testid=batch-submit]") as HTMLButtonElement).click();
    await flush();
    const errors = root.querySelector("[data-testid=batch-errors]")!;
    expect(errors.textContent).toContain("bindings[1]");
    expect(errors.textContent).toContain("bad_binding");
  });
});

describe("scenario form", () => {
  it("shows every violation at the offending path", async () => {
    const { root } = mount(async () =>
      respond(
        {
          error: "validation failed",
          violations: [
            { code: "unknown_model", path: "agents.x", detail: "ghost@1.0 not in registry" },
            { code: "bad_sim", path: "sim.step_dt", detail: "step_dt must be > 0" },
          ],
        },
        422,
      ),
    );
    root.querySelector<HTMLTextAreaElement>("[data-testid=scenario-json]")!.value = "{}";
    (root.querySelector("[data-testid=scenario-submit]") as HTMLButtonElement).click();
    await flush();
    const text = root.querySelector("[data-testid=scenario-errors]")!.textContent!;
    expect(text).toContain("agents.x");
    expect(text).toContain("sim.step_dt");
  });
});
