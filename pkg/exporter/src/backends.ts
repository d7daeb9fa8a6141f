/**
 * Embedding backends.
 *
 * The default backend runs the frozen CLIP text tower (ViT-B/32 text
 * encoder, 512-d pooled projection) through transformers.js; weights are
 * fetched from the Hugging Face hub or a local cache, and the model stays
 * frozen, so identical prompts always produce identical vectors.
 *
 * The "test-vectors" backend is an explicit offline stand-in for
 * environments without model weights: deterministic 512-d unit vectors from
 * a seeded hash expansion. It exercises the full interchange pipeline but
 * carries no semantics; never use it for real experiments.
 */

export const DEFAULT_MODEL = "Xenova/clip-vit-base-patch32";
export const TEST_BACKEND = "test-vectors";
export const CLIP_DIM = 512;

export interface Backend {
  name: string;
  dim: number;
  embed(prompts: string[]): Promise<Float64Array[]>;
}

export async function makeBackend(model: string): Promise<Backend> {
  if (model === TEST_BACKEND) {
    return new TestVectorBackend();
  }
  return ClipBackend.load(model);
}

export class ClipBackend implements Backend {
  readonly dim = CLIP_DIM;

  private constructor(
    readonly name: string,
    private readonly tokenizer: any,
    private readonly textModel: any,
  ) {}

  static async load(model: string): Promise<ClipBackend> {
    let transformers;
    try {
      transformers = await import("@huggingface/transformers");
    } catch (err) {
      throw new Error(
        "the @huggingface/transformers package is not installed; " +
          "run `npm install` in the exporter directory " +
          `(original error: ${(err as Error).message})`,
      );
    }
    const { AutoTokenizer, CLIPTextModelWithProjection } = transformers;
    try {
      const tokenizer = await AutoTokenizer.from_pretrained(model);
      const textModel = await CLIPTextModelWithProjection.from_pretrained(model, {
        dtype: "fp32",
      });
      return new ClipBackend(model, tokenizer, textModel);
    } catch (err) {
      throw new Error(
        `could not load model ${JSON.stringify(model)}: ${(err as Error).message}\n` +
          "The pretrained weights must be available locally (HF_HUB_CACHE) or " +
          "downloadable from the Hugging Face hub. In offline environments use " +
          `--model ${TEST_BACKEND} for a deterministic pipeline stand-in.`,
      );
    }
  }

  async embed(prompts: string[]): Promise<Float64Array[]> {
    const inputs = this.tokenizer(prompts, { padding: true, truncation: true });
    const { text_embeds } = await this.textModel(inputs);
    const [rows, cols] = text_embeds.dims as [number, number];
    const data = text_embeds.data as Float32Array;
    const out: Float64Array[] = [];
    for (let r = 0; r < rows; r++) {
      out.push(Float64Array.from(data.subarray(r * cols, (r + 1) * cols)));
    }
    return out;
  }
}

/** FNV-1a 64-bit over UTF-8 bytes. */
export function fnv1a64(text: string): bigint {
  const bytes = new TextEncoder().encode(text);
  const mask = (1n << 64n) - 1n;
  let h = 14695981039346656037n;
  for (const b of bytes) {
    h ^= BigInt(b);
    h = (h * 1099511628211n) & mask;
  }
  return h;
}

export class TestVectorBackend implements Backend {
  readonly name = TEST_BACKEND;
  readonly dim = CLIP_DIM;

  async embed(prompts: string[]): Promise<Float64Array[]> {
    return prompts.map((p) => this.single(p));
  }

  private single(prompt: string): Float64Array {
    const mask = (1n << 64n) - 1n;
    let state = fnv1a64(prompt) ^ 0x7478656d62n; // "txemb" salt
    const out = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      state = (state + 0x9e3779b97f4a7c15n) & mask;
      let z = state;
      z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & mask;
      z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & mask;
      z ^= z >> 31n;
      out[i] = 2.0 * Number(z >> 11n) / 2 ** 53 - 1.0;
    }
    return out;
  }
}
