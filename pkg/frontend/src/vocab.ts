/**
 * Closed question vocabulary: client-side validation and template helpers.
 * Mirrors the dataset's templates so invalid words get flagged before any
 * request is sent.
 */

export const SHAPES = ["circle", "square", "triangle"] as const;
export const COLORS = ["blue", "gray", "green", "red", "white", "yellow"] as const;

const PLURALS: Record<string, string> = {
  circle: "circles",
  square: "squares",
  triangle: "triangles",
};

export const QUESTION_WORDS = new Set<string>([
  "what", "color", "is", "the", "shape", "object", "how", "many", "are", "there", "a",
  ...SHAPES,
  ...Object.values(PLURALS),
  ...COLORS,
]);

export function templates(): string[] {
  const out: string[] = [];
  for (const s of SHAPES) out.push(`what color is the ${s}`);
  for (const c of COLORS) out.push(`what shape is the ${c} object`);
  for (const s of SHAPES) out.push(`how many ${PLURALS[s]} are there`);
  for (const c of COLORS) for (const s of SHAPES) out.push(`is there a ${c} ${s}`);
  return out;
}

export interface VocabCheck {
  ok: boolean;
  unknownWords: string[];
}

export function checkQuestion(text: string): VocabCheck {
  const words = text
    .toLowerCase()
    .replace(/[^\w\s]/g, "")
    .split(/\s+/)
    .filter((w) => w.length > 0);
  const unknown = words.filter((w) => !QUESTION_WORDS.has(w));
  return { ok: words.length > 0 && unknown.length === 0, unknownWords: unknown };
}
