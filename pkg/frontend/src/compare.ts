/**
 * Side-by-side question comparison. Each column's counterfactual and
 * heatmap come straight from the service. The pairwise divergence shown
 * under the columns is a view-layer pixel computation on the delivered
 * images: RMS((I1'-I) - (I2'-I)) == RMS(I1' - I2'), so the original
 * cancels and no model internals are touched.
 */

import { ApiClient, CounterfactualResponse } from "./api";

export interface CompareColumn {
  question: string;
  response: CounterfactualResponse;
}

export interface PairwiseEntry {
  i: number;
  j: number;
  rms: number;
}

export async function decodePngToPixels(pngBase64: string): Promise<Float64Array> {
  const img = new Image();
  const loaded = new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("PNG decode failed"));
  });
  img.src = `data:image/png;base64,${pngBase64}`;
  await loaded;
  const canvas = document.createElement("canvas");
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("no 2d context");
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, img.width, img.height).data;
  const out = new Float64Array((data.length / 4) * 3);
  let k = 0;
  for (let p = 0; p < data.length; p += 4) {
    out[k++] = data[p] / 255;
    out[k++] = data[p + 1] / 255;
    out[k++] = data[p + 2] / 255;
  }
  return out;
}

export function pixelRms(a: Float64Array, b: Float64Array): number {
  if (a.length !== b.length) throw new Error("image sizes differ");
  let acc = 0;
  for (let i = 0; i < a.length; i++) {
    const d = a[i] - b[i];
    acc += d * d;
  }
  return Math.sqrt(acc / a.length);
}

export async function runComparison(
  api: ApiClient,
  imageId: string,
  questions: string[],
): Promise<{ columns: CompareColumn[]; pairwise: PairwiseEntry[] }> {
  const columns: CompareColumn[] = [];
  for (const q of questions) {
    columns.push({ question: q, response: await api.counterfactual({ image_id: imageId, question: q }) });
  }
  const pixels = await Promise.all(columns.map((c) => decodePngToPixels(c.response.cf_png_base64)));
  const pairwise: PairwiseEntry[] = [];
  for (let i = 0; i < columns.length; i++) {
    for (let j = i + 1; j < columns.length; j++) {
      pairwise.push({ i, j, rms: pixelRms(pixels[i], pixels[j]) });
    }
  }
  return { columns, pairwise };
}
