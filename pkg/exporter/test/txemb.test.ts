import { describe, expect, it } from "vitest";
import { formatTxemb, l2Normalize, parseTxemb } from "../src/txemb.js";

describe("l2Normalize", () => {
  it("produces unit vectors", () => {
    const v = l2Normalize([3, 4]);
    expect(v[0]).toBeCloseTo(0.6, 12);
    expect(v[1]).toBeCloseTo(0.8, 12);
  });

  it("rejects zero vectors", () => {
    expect(() => l2Normalize([0, 0, 0])).toThrow(/zero vector/);
  });
});

describe("formatTxemb", () => {
  it("writes the header and one line pair per entry", () => {
    const text = formatTxemb([
      { prompt: "a", vector: [1, 0, 0] },
      { prompt: "b", vector: [0, 2, 0] },
    ]);
    const lines = text.split("\n");
    expect(lines[0]).toBe("TXEMB 1 3");
    expect(lines[1]).toBe("a");
    expect(lines[2]).toBe("1 0 0");
    expect(lines[3]).toBe("b");
    expect(lines[4]).toBe("0 1 0");
    expect(lines[5]).toBe("");
  });

  it("normalizes vectors on write", () => {
    const text = formatTxemb([{ prompt: "p", vector: [3, 4] }]);
    const parsed = parseTxemb(text);
    const v = parsed.get("p")!;
    expect(Math.hypot(...v)).toBeCloseTo(1.0, 9);
  });

  it("rejects duplicate prompts", () => {
    expect(() =>
      formatTxemb([
        { prompt: "same", vector: [1, 0] },
        { prompt: "same", vector: [0, 1] },
      ]),
    ).toThrow(/duplicate/);
  });

  it("rejects inconsistent dimensions", () => {
    expect(() =>
      formatTxemb([
        { prompt: "a", vector: [1, 0] },
        { prompt: "b", vector: [1, 0, 0] },
      ]),
    ).toThrow(/dimensions/);
  });

  it("rejects empty entry lists and newline prompts", () => {
    expect(() => formatTxemb([])).toThrow(/empty/);
    expect(() => formatTxemb([{ prompt: "a\nb", vector: [1] }])).toThrow(/newline/);
  });

  it("round-trips float values exactly", () => {
    const vector = l2Normalize([0.123456789012345, -0.9876543210987654, 0.5]);
    const text = formatTxemb([{ prompt: "p", vector }]);
    const back = parseTxemb(text).get("p")!;
    expect(Array.from(back)).toEqual(Array.from(vector));
  });
});
