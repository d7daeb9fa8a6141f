/**
 * TXEMB interchange format writer.
 *
 * Line-oriented text file:
 *   TXEMB 1 <dim>
 *   <exact prompt string>
 *   <dim space-separated decimal floats>
 *   ...one prompt/vector line pair per entry
 *
 * Prompt strings are preserved byte-exactly as keys; vectors are written
 * L2-normalized so downstream loaders keep them bit-identical.
 */

export interface EmbeddingEntry {
  prompt: string;
  vector: Float64Array | number[];
}

export function l2Normalize(vector: Float64Array | number[]): Float64Array {
  const out = Float64Array.from(vector);
  let sumSq = 0;
  for (const v of out) sumSq += v * v;
  const norm = Math.sqrt(sumSq);
  if (!(norm > 0)) {
    throw new Error("cannot normalize a zero vector");
  }
  // idempotent: leave already-unit vectors bit-identical so repeated
  // write/read cycles are stable
  if (Math.abs(norm - 1.0) <= 1e-9) {
    return out;
  }
  for (let i = 0; i < out.length; i++) out[i] /= norm;
  return out;
}

export function formatTxemb(entries: EmbeddingEntry[]): string {
  if (entries.length === 0) {
    throw new Error("refusing to write an empty embedding file");
  }
  const dim = entries[0].vector.length;
  if (dim === 0) {
    throw new Error("embedding dimension must be positive");
  }
  const seen = new Set<string>();
  const lines: string[] = [`TXEMB 1 ${dim}`];
  for (const { prompt, vector } of entries) {
    if (vector.length !== dim) {
      throw new Error(
        `inconsistent dimensions: ${vector.length} vs ${dim} for ${JSON.stringify(prompt)}`,
      );
    }
    if (prompt.includes("\n")) {
      throw new Error(`prompt may not contain newlines: ${JSON.stringify(prompt)}`);
    }
    if (seen.has(prompt)) {
      throw new Error(`duplicate prompt rejected: ${JSON.stringify(prompt)}`);
    }
    seen.add(prompt);
    const normalized = l2Normalize(vector);
    lines.push(prompt);
    lines.push(Array.from(normalized, (v) => formatFloat(v)).join(" "));
  }
  return lines.join("\n") + "\n";
}

/** Shortest decimal string that round-trips to the same float64. */
export function formatFloat(v: number): string {
  return String(v);
}

/** Minimal reader used by the exporter's own tests. */
export function parseTxemb(text: string): Map<string, Float64Array> {
  const lines = text.split("\n");
  if (lines[lines.length - 1] === "") lines.pop();
  const header = lines[0]?.split(" ") ?? [];
  if (header.length !== 3 || header[0] !== "TXEMB" || header[1] !== "1") {
    throw new Error(`bad TXEMB header: ${JSON.stringify(lines[0])}`);
  }
  const dim = Number(header[2]);
  const out = new Map<string, Float64Array>();
  for (let i = 1; i < lines.length; i += 2) {
    const prompt = lines[i];
    const values = lines[i + 1]?.split(" ").map(Number) ?? [];
    if (values.length !== dim || values.some((v) => !Number.isFinite(v))) {
      throw new Error(`bad vector for prompt ${JSON.stringify(prompt)}`);
    }
    out.set(prompt, Float64Array.from(values));
  }
  return out;
}
