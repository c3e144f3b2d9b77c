// App shell: hash-routed tabs over the manager API. Served by the manager
// itself under /ui, so API paths are absolute ("/runs", ...).

import { Api } from "./api";
import { RunBoard } from "./board";
import { Forms } from "./forms";
import { LiveView } from "./live";
import { ReplayView } from "./replayview";

const api = new Api("");

const tabs = document.getElementById("tabs")!;
const content = document.getElementById("content")!;

let board: RunBoard | null = null;
let live: LiveView | null = null;

function teardown(): void {
  board?.stop();
  board = null;
  live?.close();
  live = null;
  content.innerHTML = "";
}

function route(): void {
  teardown();
  const hash = location.hash || "#/board";
  for (const a of tabs.querySelectorAll("a")) {
    a.classList.toggle("active", hash.startsWith(a.getAttribute("href") ?? "#none"));
  }
  if (hash.startsWith("#/run/")) {
    const runId = hash.slice("#/run/".length);
    live = new LiveView(api, runId, content);
    void live.boot().catch((err) => {
      content.innerHTML = `<div class="errors"><div class="violation">${err}</div></div>`;
    });
  } else if (hash.startsWith("#/replay/")) {
    const runId = hash.slice("#/replay/".length);
    const view = new ReplayView(api, content);
    void view.open(runId).catch((err) => {
      content.innerHTML = `<div class="errors"><div class="violation">${err}</div></div>`;
    });
  } else if (hash.startsWith("#/forms")) {
    new Forms(api, content, (batchId) => {
      location.hash = "#/board";
      void batchId;
    }).start();
  } else {
    board = new RunBoard(api, content, (runId) => {
      void api.getRun(runId).then((run) => {
        location.hash =
          run.state === "COMPLETED" || run.state === "STOPPED" ? `#/replay/${runId}` : `#/run/${runId}`;
      });
    });
    board.start();
  }
}

window.addEventListener("hashchange", route);
route();
