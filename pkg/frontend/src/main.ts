// DOM wiring for the harmonization studio: load a score, pin notes or fix
// parts, generate through the service, inspect the heatmap, audition, and
// regenerate with a fresh seed.

import { ServiceClient } from "./api";
import { noteAt, render } from "./pianoRoll";
import { Player } from "./playback";
import {
  EditorState,
  applyFailure,
  applyResponse,
  buildRequest,
  createState,
  displayedScore,
  fixPart,
  loadScore,
  nextSeed,
  pinCount,
  setMethod,
  setPaths,
  setSeed,
  togglePin,
  unfixPart,
} from "./state";
import { Method } from "./types";

const client = new ServiceClient("");
let state: EditorState = createState();
let player: Player | null = null;

const canvas = document.getElementById("roll") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const metrics = document.getElementById("metrics")!;
const pinBadge = document.getElementById("pin-badge")!;
const partsBox = document.getElementById("parts")!;
const fileInput = document.getElementById("file") as HTMLInputElement;
const modelSelect = document.getElementById("model") as HTMLSelectElement;
const methodSelect = document.getElementById("method") as HTMLSelectElement;
const pathsInput = document.getElementById("paths") as HTMLInputElement;
const seedInput = document.getElementById("seed") as HTMLInputElement;
const generateButton = document.getElementById("generate") as HTMLButtonElement;
const regenerateButton = document.getElementById("regenerate") as HTMLButtonElement;
const tempoInput = document.getElementById("tempo") as HTMLInputElement;
const tempoValue = document.getElementById("tempo-value")!;

function update(next: EditorState): void {
  state = next;
  banner.textContent = state.error ?? "";
  banner.classList.toggle("show", state.error !== null);
  pinBadge.textContent = String(pinCount(state));
  seedInput.value = String(state.seed);
  generateButton.disabled = state.busy || state.score === null;
  regenerateButton.disabled = generateButton.disabled;
  if (state.response) {
    const m = state.response.metrics;
    const filtering = m.mean_log_filtering === null
      ? "-" : m.mean_log_filtering.toFixed(4);
    metrics.textContent =
      `seed ${state.response.seed} | ${m.method} S=${m.paths} | ` +
      `best log prob ${m.best_log_prob.toFixed(2)} ` +
      `(${m.mean_logp_note.toFixed(3)} nats/note) | ` +
      `mean log filtering ${filtering}`;
  } else {
    metrics.textContent = "";
  }
  renderParts();
  redraw();
}

function renderParts(): void {
  partsBox.replaceChildren();
  if (!state.score) return;
  for (const part of state.score.parts) {
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = state.fixedParts.has(part.id);
    box.addEventListener("change", () => {
      update(box.checked ? fixPart(state, part.id) : unfixPart(state, part.id));
    });
    label.append(box, ` fix ${part.name} (part ${part.id})`);
    partsBox.append(label);
  }
}

function redraw(): void {
  const cursor = player && player.state !== "stopped" ? player.cursorTicks() : null;
  render(ctx, state, canvas.width, canvas.height, cursor);
}

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  const next = loadScore(state, await file.text());
  if (!next.error) {
    player = new Player(makeAudioContext(), Number(tempoInput.value));
  }
  update(next);
});

methodSelect.addEventListener("change", () => {
  update(setMethod(state, methodSelect.value as Method));
});

pathsInput.addEventListener("change", () => {
  update(setPaths(state, Number(pathsInput.value)));
});

seedInput.addEventListener("change", () => {
  update(setSeed(state, Number(seedInput.value)));
});

canvas.addEventListener("click", (event) => {
  if (!state.score) return;
  const layout = render(ctx, state, canvas.width, canvas.height);
  if (!layout) return;
  const rect = canvas.getBoundingClientRect();
  const x = (event.clientX - rect.left) * (canvas.width / rect.width);
  const y = (event.clientY - rect.top) * (canvas.height / rect.height);
  const shown = displayedScore(state);
  if (!shown) return;
  let id = noteAt(layout, shown, x, y);
  if (id === null) {
    id = noteAt(layout, state.score, x, y);
  }
  if (id === null) return;
  const original = state.score.notes[id];
  if (original.pitch === null && !state.pins.has(id)) {
    const answer = prompt("pin this free note to pitch (0-127):",
                          String(shown.notes[id].pitch ?? 60));
    if (answer === null) return;
    update(togglePin(state, id, Number(answer)));
  } else {
    update(togglePin(state, id));
  }
});

async function generate(): Promise<void> {
  if (!state.score || state.busy) return;
  update({ ...state, busy: true, error: null });
  const outcome = await client.harmonize(buildRequest(state));
  if (outcome.ok) {
    update(applyResponse(state, outcome.data));
    if (player) {
      const shown = displayedScore(state);
      if (shown) player.load(shown);
    }
  } else {
    update(applyFailure(state, outcome.status, outcome.error));
  }
}

generateButton.addEventListener("click", () => void generate());
regenerateButton.addEventListener("click", () => {
  update(nextSeed(state));
  void generate();
});

// --- playback ---------------------------------------------------------------

function makeAudioContext(): AudioContext {
  const Ctor = window.AudioContext
    ?? (window as unknown as { webkitAudioContext: typeof AudioContext }).webkitAudioContext;
  return new Ctor();
}

document.getElementById("play")!.addEventListener("click", () => {
  if (!player) return;
  if (player.state === "stopped") {
    const shown = displayedScore(state);
    if (shown) player.load(shown);
  }
  player.play();
  tickCursor();
});

document.getElementById("pause")!.addEventListener("click", () => player?.pause());

document.getElementById("stop")!.addEventListener("click", () => {
  player?.stop();
  redraw();
});

tempoInput.addEventListener("input", () => {
  tempoValue.textContent = tempoInput.value;
  player?.setTempo(Number(tempoInput.value));
});

function tickCursor(): void {
  if (!player || player.state === "stopped") {
    redraw();
    return;
  }
  redraw();
  requestAnimationFrame(tickCursor);
}

// --- boot -------------------------------------------------------------------

async function boot(): Promise<void> {
  try {
    const models = await client.models();
    modelSelect.replaceChildren();
    for (const model of models) {
      const option = document.createElement("option");
      option.value = model.name;
      option.textContent = `${model.name} (${model.kind})`;
      modelSelect.append(option);
    }
    modelSelect.addEventListener("change", () => {
      update({ ...state, model: modelSelect.value });
    });
    if (models.length > 0) {
      update({ ...state, model: models[0].name });
      return;
    }
  } catch {
    // service unreachable; the UI still renders loaded scores
  }
  update(state);
}

void boot();
