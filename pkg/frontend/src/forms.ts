// Scenario, template, and batch forms. The client checks nothing but JSON
// shape; server 422 bodies render inline at the offending fields.

import { Api, ApiError } from "./api";

function violationsHtml(err: unknown): string {
  if (err instanceof ApiError) {
    const violations = err.violations();
    if (violations.length > 0) {
      return violations
        .map((v) => `<div class="violation"><b>${v.path}</b>: ${v.code} - ${v.detail}</div>`)
        .join("");
    }
    return `<div class="violation">${JSON.stringify(err.body)}</div>`;
  }
  return `<div class="violation">${err instanceof Error ? err.message : String(err)}</div>`;
}

export class Forms {
  constructor(
    private api: Api,
    private root: HTMLElement,
    private onBatchSubmitted: (batchId: string) => void,
  ) {}

  start(): void {
    this.root.innerHTML = `
      <div class="form-col">
        <h3>scenario</h3>
        <textarea data-testid="scenario-json" rows="14" spellcheck="false"
          placeholder='{"name": ..., "sim": {...}, "agents": [...]}'></textarea>
        <button data-testid="scenario-submit">add scenario</button>
        <div data-testid="scenario-errors" class="errors"></div>
      </div>
      <div class="form-col">
        <h3>template</h3>
        <textarea data-testid="template-json" rows="14" spellcheck="false"
          placeholder='{"base": {...}, "placeholders": [...]}'></textarea>
        <button data-testid="template-submit">add template</button>
        <div data-testid="template-errors" class="errors"></div>
      </div>
      <div class="form-col">
        <h3>batch</h3>
        <label>template id <input data-testid="batch-template"></label>
        <label>batch seed <input data-testid="batch-seed" type="number" value="0"></label>
        <label>mode
          <select data-testid="batch-mode">
            <option value="bindings">bindings list</option>
            <option value="full_factorial">full factorial</option>
            <option value="latin_hypercube">latin hypercube</option>
          </select>
        </label>
        <textarea data-testid="batch-spec" rows="8" spellcheck="false"
          placeholder='bindings: [{"speed": 200}] | factors: {"speed": [1,2]} | lhs: {"n": 10, "ranges": {"speed": [0, 100]}, "seed": 1}'></textarea>
        <button data-testid="batch-submit">submit batch</button>
        <div data-testid="batch-errors" class="errors"></div>
        <div data-testid="batch-result" class="result"></div>
      </div>`;

    const hook = (btn: string, errs: string, fn: () => Promise<string>) => {
      this.root.querySelector(`[data-testid=${btn}]`)!.addEventListener("click", () => {
        const errHost = this.root.querySelector(`[data-testid=${errs}]`)!;
        errHost.innerHTML = "";
        fn()
          .then((note) => {
            errHost.innerHTML = `<div class="ok">${note}</div>`;
          })
          .catch((err) => {
            errHost.innerHTML = violationsHtml(err);
          });
      });
    };

    hook("scenario-submit", "scenario-errors", async () => {
      const doc = JSON.parse(this.textarea("scenario-json").value);
      const out = await this.api.addScenario(doc);
      return `scenario ${out.id} (revision ${out.revision})`;
    });
    hook("template-submit", "template-errors", async () => {
      const doc = JSON.parse(this.textarea("template-json").value);
      const out = await this.api.addTemplate(doc);
      return `template ${out.id} (revision ${out.revision})`;
    });
    hook("batch-submit", "batch-errors", async () => {
      const batch = await this.submitBatch();
      this.root.querySelector("[data-testid=batch-result]")!.textContent =
        `batch ${batch.batch_id}: ${batch.run_ids.length} runs`;
      this.onBatchSubmitted(batch.batch_id);
      return `submitted ${batch.batch_id}`;
    });
  }

  private textarea(testid: string): HTMLTextAreaElement {
    return this.root.querySelector<HTMLTextAreaElement>(`[data-testid=${testid}]`)!;
  }

  async submitBatch() {
    const template_id = this.root.querySelector<HTMLInputElement>("[data-testid=batch-template]")!.value.trim();
    const batch_seed = Number(this.root.querySelector<HTMLInputElement>("[data-testid=batch-seed]")!.value);
    const mode = this.root.querySelector<HTMLSelectElement>("[data-testid=batch-mode]")!.value;
    const spec = JSON.parse(this.textarea("batch-spec").value || "null");
    const body: Parameters<Api["submitBatch"]>[0] = { template_id, batch_seed };
    if (mode === "bindings") body.bindings = spec;
    else if (mode === "full_factorial") body.doe = { kind: "full_factorial", factors: spec };
    else body.doe = { kind: "latin_hypercube", ...spec };
    return this.api.submitBatch(body);
  }
}
