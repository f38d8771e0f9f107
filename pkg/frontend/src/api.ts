/**
 * Typed client for the cfvqa explanation service. All model quantities the
 * UI displays come from these responses; the client never recomputes them.
 */

export interface SampleMeta {
  id: string;
  question: string;
  answer: string;
  qtype: string;
}

export interface AnswerResponse {
  answer: string;
  top_k: [string, number][];
}

export interface CounterfactualResponse {
  cf_png_base64: string;
  heatmap_png_base64: string;
  orig_png_base64: string;
  orig_answer: string;
  cf_answer: string;
  flipped: boolean;
  edit_rms: number;
}

export interface HealthResponse {
  status: string;
  vqa_hash: string;
  gen_hash: string;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({ error: "unparsable response" }));
  if (!resp.ok) {
    throw new ServiceError(resp.status, (body as { error?: string }).error ?? `HTTP ${resp.status}`);
  }
  return body as T;
}

export class ApiClient {
  constructor(
    private serviceUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private get(path: string, signal?: AbortSignal): Promise<Response> {
    return this.fetchFn(`${this.serviceUrl}${path}`, { signal });
  }

  private post(path: string, body: unknown, signal?: AbortSignal): Promise<Response> {
    return this.fetchFn(`${this.serviceUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
  }

  async health(): Promise<HealthResponse> {
    return parse(await this.get("/health"));
  }

  async samples(split: string, qtype?: string, limit?: number): Promise<SampleMeta[]> {
    const params = new URLSearchParams({ split });
    if (qtype) params.set("qtype", qtype);
    if (limit !== undefined) params.set("limit", String(limit));
    const doc = await parse<{ samples: SampleMeta[] }>(await this.get(`/samples?${params}`));
    return doc.samples;
  }

  async image(id: string): Promise<string> {
    const doc = await parse<{ png_base64: string }>(await this.get(`/image?id=${encodeURIComponent(id)}`));
    return doc.png_base64;
  }

  async answer(req: { image_id?: string; image_png_base64?: string; question: string }, signal?: AbortSignal): Promise<AnswerResponse> {
    return parse(await this.post("/answer", req, signal));
  }

  async counterfactual(
    req: { image_id?: string; image_png_base64?: string; question: string; answer?: string },
    signal?: AbortSignal,
  ): Promise<CounterfactualResponse> {
    return parse(await this.post("/counterfactual", req, signal));
  }
}
