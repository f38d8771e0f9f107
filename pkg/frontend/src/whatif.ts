/**
 * What-if controller: runs the three-call explanation flow
 * (/answer on the original, /counterfactual, /answer on the generated
 * image for its probability bars) with last-write-wins semantics: a new
 * submission aborts the in-flight one and only the newest result renders.
 */

import { AnswerResponse, ApiClient, CounterfactualResponse } from "./api";
import { SessionHistory, WhatIfRecord, WhatIfRequest } from "./state";

export interface WhatIfResult {
  request: WhatIfRequest;
  origAnswer: AnswerResponse;
  counterfactual: CounterfactualResponse;
  cfAnswer: AnswerResponse;
  record: WhatIfRecord;
}

export class WhatIfController {
  private inflight: AbortController | null = null;
  private runCounter = 0;

  constructor(
    private api: ApiClient,
    private history: SessionHistory,
  ) {}

  /** Resolves with the result, or null when superseded by a newer run. */
  async run(request: WhatIfRequest): Promise<WhatIfResult | null> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const myRun = ++this.runCounter;

    try {
      const origAnswer = await this.api.answer(
        { image_id: request.image_id, image_png_base64: request.image_png_base64, question: request.question },
        controller.signal,
      );
      const counterfactual = await this.api.counterfactual(request, controller.signal);
      const cfAnswer = await this.api.answer(
        { image_png_base64: counterfactual.cf_png_base64, question: request.question },
        controller.signal,
      );
      if (myRun !== this.runCounter) return null; // a newer run took over
      const record = this.history.append({
        request,
        orig_answer: counterfactual.orig_answer,
        cf_answer: counterfactual.cf_answer,
        flipped: counterfactual.flipped,
        edit_rms: counterfactual.edit_rms,
        thumbnails: {
          orig_png_base64: counterfactual.orig_png_base64,
          cf_png_base64: counterfactual.cf_png_base64,
          heatmap_png_base64: counterfactual.heatmap_png_base64,
        },
      });
      return { request, origAnswer, counterfactual, cfAnswer, record };
    } catch (err) {
      if ((err as Error).name === "AbortError") return null;
      throw err; // surfaced inline by the view; never retried silently
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}
