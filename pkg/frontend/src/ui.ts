/**
 * DOM view layer. Pure rendering: every number and image shown here was
 * produced by the service (or, for pairwise comparison, derived from
 * delivered images); this module adds no model computation.
 */

import { AnswerResponse, SampleMeta } from "./api";
import { PairwiseEntry, CompareColumn } from "./compare";
import { WhatIfRecord } from "./state";
import { WhatIfResult } from "./whatif";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  for (const c of children) node.append(c);
  return node;
}

export function pngImg(b64: string, cls = "panel-img"): HTMLImageElement {
  const img = el("img", { class: cls, alt: "" });
  img.src = `data:image/png;base64,${b64}`;
  return img;
}

export function renderGallery(
  container: HTMLElement,
  samples: SampleMeta[],
  thumbs: Map<string, string>,
  onSelect: (sample: SampleMeta) => void,
): void {
  container.replaceChildren();
  if (samples.length === 0) {
    container.append(el("p", { class: "empty-state" }, ["No samples match this filter."]));
    return;
  }
  for (const s of samples) {
    const tile = el("figure", { class: "tile", "data-sample-id": s.id });
    const b64 = thumbs.get(s.id);
    if (b64) tile.append(pngImg(b64, "tile-img"));
    tile.append(el("figcaption", {}, [`${s.question} [${s.qtype}] -> ${s.answer}`]));
    tile.addEventListener("click", () => onSelect(s));
    container.append(tile);
  }
}

export function probBars(answer: AnswerResponse): HTMLElement {
  const box = el("div", { class: "prob-bars" });
  for (const [name, p] of answer.top_k) {
    const row = el("div", { class: "prob-row" });
    row.append(el("span", { class: "prob-label" }, [name]));
    const bar = el("div", { class: "prob-bar" });
    bar.style.width = `${Math.round(p * 100)}%`;
    row.append(bar);
    row.append(el("span", { class: "prob-value" }, [p.toFixed(3)]));
    box.append(row);
  }
  return box;
}

export function renderDetail(container: HTMLElement, result: WhatIfResult): void {
  container.replaceChildren();
  const { counterfactual: cf } = result;
  const panels = el("div", { class: "panels" });
  for (const [title, b64] of [
    ["original", cf.orig_png_base64],
    ["counterfactual", cf.cf_png_base64],
    ["edit heatmap (5x)", cf.heatmap_png_base64],
  ] as const) {
    panels.append(el("figure", { class: "panel" }, [pngImg(b64), el("figcaption", {}, [title])]));
  }
  container.append(panels);

  const badge = cf.flipped
    ? el("span", { class: "badge badge-flipped", "data-flipped": "true" }, ["answer changed"])
    : el("span", { class: "badge badge-unchanged", "data-flipped": "false" }, ["unchanged"]);
  container.append(
    el("div", { class: "verdict" }, [
      el("span", { class: "answer-orig" }, [`f(I,Q) = ${cf.orig_answer}`]),
      el("span", { class: "answer-cf" }, [`f(I',Q) = ${cf.cf_answer}`]),
      badge,
      el("span", { class: "edit-rms", "data-edit-rms": String(cf.edit_rms) }, [
        `edit RMS ${cf.edit_rms.toFixed(5)}`,
      ]),
    ]),
  );

  container.append(
    el("div", { class: "bars" }, [
      el("div", {}, [el("h4", {}, ["original answer probabilities"]), probBars(result.origAnswer)]),
      el("div", {}, [el("h4", {}, ["counterfactual answer probabilities"]), probBars(result.cfAnswer)]),
    ]),
  );
}

export function renderError(container: HTMLElement, status: number | null, message: string): void {
  container.replaceChildren(
    el("p", { class: "inline-error", role: "alert" }, [
      status === null ? `service unreachable: ${message}` : `service error ${status}: ${message}`,
    ]),
  );
}

export function renderHistory(container: HTMLElement, records: readonly WhatIfRecord[]): void {
  container.replaceChildren();
  for (const r of records) {
    container.append(
      el("li", { class: "history-row", "data-seq": String(r.seq) }, [
        `#${r.seq} ${r.request.question} : ${r.orig_answer} -> ${r.cf_answer}` +
          ` (${r.flipped ? "flipped" : "unchanged"}, rms ${r.edit_rms.toFixed(5)})`,
      ]),
    );
  }
}

export function renderComparison(
  container: HTMLElement,
  columns: CompareColumn[],
  pairwise: PairwiseEntry[],
): void {
  container.replaceChildren();
  const row = el("div", { class: "compare-row" });
  for (const c of columns) {
    row.append(
      el("figure", { class: "compare-col" }, [
        pngImg(c.response.cf_png_base64),
        pngImg(c.response.heatmap_png_base64),
        el("figcaption", {}, [
          `${c.question} -> ${c.response.cf_answer} (rms ${c.response.edit_rms.toFixed(5)})`,
        ]),
      ]),
    );
  }
  container.append(row);
  const list = el("ul", { class: "pairwise" });
  for (const p of pairwise) {
    list.append(
      el("li", { "data-pair": `${p.i}-${p.j}` }, [
        `Q${p.i + 1} vs Q${p.j + 1}: edit-map RMS difference ${p.rms.toFixed(5)}`,
      ]),
    );
  }
  container.append(list);
}
