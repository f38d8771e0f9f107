/**
 * Explorer wiring: gallery on the left, what-if detail on the right,
 * history and comparison below. Configuration is a single service_url,
 * settable via ?service=... or the input box.
 */

import { ApiClient, SampleMeta, ServiceError } from "./api";
import { runComparison } from "./compare";
import { SessionHistory } from "./state";
import { checkQuestion, templates } from "./vocab";
import { renderComparison, renderDetail, renderError, renderGallery, renderHistory } from "./ui";
import { WhatIfController } from "./whatif";

const defaultUrl =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8765";

const state = {
  api: new ApiClient(defaultUrl),
  history: new SessionHistory(),
  controller: null as WhatIfController | null,
  currentSample: null as SampleMeta | null,
  thumbs: new Map<string, string>(),
};
state.controller = new WhatIfController(state.api, state.history);

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function refreshGallery(): Promise<void> {
  const split = byId<HTMLSelectElement>("split-select").value;
  const qtype = byId<HTMLSelectElement>("qtype-select").value;
  const gallery = byId<HTMLDivElement>("gallery");
  try {
    const samples = await state.api.samples(split, qtype || undefined, 24);
    await Promise.all(
      samples.map(async (s) => {
        if (!state.thumbs.has(s.id)) state.thumbs.set(s.id, await state.api.image(s.id));
      }),
    );
    renderGallery(gallery, samples, state.thumbs, (s) => {
      state.currentSample = s;
      byId<HTMLInputElement>("question-input").value = s.question;
      byId<HTMLSpanElement>("selected-sample").textContent = `${s.id} (gt: ${s.answer})`;
      void submitWhatIf();
    });
  } catch (err) {
    renderError(gallery, err instanceof ServiceError ? err.status : null, String((err as Error).message));
  }
}

async function submitWhatIf(): Promise<void> {
  const detail = byId<HTMLDivElement>("detail");
  const question = byId<HTMLInputElement>("question-input").value.trim();
  const vocabNote = byId<HTMLSpanElement>("vocab-note");
  const check = checkQuestion(question);
  if (!check.ok) {
    vocabNote.textContent = check.unknownWords.length
      ? `words outside the dataset vocabulary: ${check.unknownWords.join(", ")}`
      : "enter a question";
    return;
  }
  vocabNote.textContent = "";
  if (!state.currentSample) {
    renderError(detail, null, "pick an image from the gallery first");
    return;
  }
  try {
    const result = await state.controller!.run({ image_id: state.currentSample.id, question });
    if (result === null) return; // superseded by a newer submission
    renderDetail(detail, result);
    renderHistory(byId<HTMLUListElement>("history"), state.history.all());
  } catch (err) {
    renderError(detail, err instanceof ServiceError ? err.status : null, String((err as Error).message));
  }
}

async function submitComparison(): Promise<void> {
  const box = byId<HTMLDivElement>("comparison");
  if (!state.currentSample) {
    renderError(box, null, "pick an image from the gallery first");
    return;
  }
  const raw = byId<HTMLTextAreaElement>("compare-questions").value;
  const questions = raw
    .split("\n")
    .map((q) => q.trim())
    .filter((q) => q.length > 0);
  if (questions.length < 2) {
    renderError(box, null, "enter at least two questions, one per line");
    return;
  }
  try {
    const { columns, pairwise } = await runComparison(state.api, state.currentSample.id, questions);
    renderComparison(box, columns, pairwise);
  } catch (err) {
    renderError(box, err instanceof ServiceError ? err.status : null, String((err as Error).message));
  }
}

function wire(): void {
  const helper = byId<HTMLSelectElement>("template-select");
  for (const t of templates()) {
    const opt = document.createElement("option");
    opt.value = t;
    opt.textContent = t;
    helper.append(opt);
  }
  helper.addEventListener("change", () => {
    if (helper.value) byId<HTMLInputElement>("question-input").value = helper.value;
  });
  byId<HTMLButtonElement>("ask-button").addEventListener("click", () => void submitWhatIf());
  byId<HTMLButtonElement>("compare-button").addEventListener("click", () => void submitComparison());
  byId<HTMLSelectElement>("split-select").addEventListener("change", () => void refreshGallery());
  byId<HTMLSelectElement>("qtype-select").addEventListener("change", () => void refreshGallery());
  byId<HTMLButtonElement>("export-button").addEventListener("click", () => {
    const blob = new Blob([state.history.exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "whatif-history.json";
    a.click();
  });
  byId<HTMLInputElement>("import-input").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    state.history = SessionHistory.importJson(await file.text());
    renderHistory(byId<HTMLUListElement>("history"), state.history.all());
  });
  void refreshGallery();
}

if (document.readyState === "loading") {
  document.addEventListener("DOMContentLoaded", wire);
} else {
  wire();
}
