/**
 * Session history: append-only what-if records, replayable because every
 * record stores the exact request that produced it. Export/import must
 * round-trip exactly.
 */

export interface WhatIfRequest {
  image_id?: string;
  image_png_base64?: string;
  question: string;
  answer?: string;
}

export interface WhatIfRecord {
  seq: number;
  request: WhatIfRequest;
  orig_answer: string;
  cf_answer: string;
  flipped: boolean;
  edit_rms: number;
  thumbnails: {
    orig_png_base64: string;
    cf_png_base64: string;
    heatmap_png_base64: string;
  };
}

export class SessionHistory {
  private records: WhatIfRecord[] = [];

  append(record: Omit<WhatIfRecord, "seq">): WhatIfRecord {
    const entry = { ...record, seq: this.records.length };
    this.records.push(entry);
    return entry;
  }

  all(): readonly WhatIfRecord[] {
    return this.records;
  }

  get length(): number {
    return this.records.length;
  }

  exportJson(): string {
    return JSON.stringify({ version: 1, records: this.records });
  }

  static importJson(payload: string): SessionHistory {
    const doc = JSON.parse(payload) as { version: number; records: WhatIfRecord[] };
    if (doc.version !== 1 || !Array.isArray(doc.records)) {
      throw new Error("unrecognized history payload");
    }
    const h = new SessionHistory();
    for (const r of doc.records) {
      if (r.seq !== h.records.length) throw new Error("history records out of order");
      h.records.push(r);
    }
    return h;
  }
}
