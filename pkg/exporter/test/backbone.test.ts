import { describe, expect, it } from "vitest";

import { BackboneError, buildBackbone, getSpec, runBatch, stageShapes } from "../src/backbone.js";
import { mulberry32 } from "../src/prng.js";

function randomBatch(n: number, size: number, seed: number): Float32Array {
  const rng = mulberry32(seed);
  return Float32Array.from({ length: n * size * size * 3 }, () => rng());
}

describe("stride arithmetic", () => {
  it("power-of-two input sizes divide exactly", () => {
    expect(stageShapes(getSpec("frozen-tiny"), 64)).toEqual([
      { h: 8, w: 8, d: 16 },
      { h: 4, w: 4, d: 32 },
      { h: 2, w: 2, d: 64 },
    ]);
  });

  it("non-divisible sizes follow the iterated-ceil rule", () => {
    // 70 -> 35 -> 18 -> 9 -> 5 -> 3
    expect(stageShapes(getSpec("frozen-tiny"), 70).map((s) => s.h)).toEqual([9, 5, 3]);
  });

  it("wide backbone changes channels, not strides", () => {
    const shapes = stageShapes(getSpec("frozen-wide"), 64);
    expect(shapes.map((s) => s.h)).toEqual([8, 4, 2]);
    expect(shapes.map((s) => s.d)).toEqual([32, 64, 128]);
  });

  it("unknown names are rejected", () => {
    expect(() => getSpec("resnet-50")).toThrow(BackboneError);
  });
});

describe("frozen model", () => {
  it("stage outputs match the published shapes", () => {
    const backbone = buildBackbone("frozen-tiny", 64, 0);
    const stages = runBatch(backbone, randomBatch(2, 64, 1), 2);
    expect(stages.length).toBe(3);
    for (const [k, shape] of backbone.shapes.entries()) {
      expect(stages[k].length).toBe(2 * shape.h * shape.w * shape.d);
    }
  });

  it("features are finite and not collapsed to zero", () => {
    const backbone = buildBackbone("frozen-tiny", 64, 0);
    const [stage0] = runBatch(backbone, randomBatch(2, 64, 2), 2);
    let nonzero = 0;
    for (const v of stage0) {
      expect(Number.isFinite(v)).toBe(true);
      if (v !== 0) nonzero++;
    }
    expect(nonzero).toBeGreaterThan(stage0.length / 10);
  });

  it("same seed gives bit-identical features", () => {
    const batch = randomBatch(2, 64, 3);
    const a = runBatch(buildBackbone("frozen-tiny", 64, 7), batch, 2);
    const b = runBatch(buildBackbone("frozen-tiny", 64, 7), batch, 2);
    for (let k = 0; k < a.length; k++) {
      expect(Buffer.from(a[k].buffer).equals(Buffer.from(b[k].buffer))).toBe(true);
    }
  });

  it("different seeds give different features", () => {
    const batch = randomBatch(1, 64, 4);
    const [a] = runBatch(buildBackbone("frozen-tiny", 64, 0), batch, 1);
    const [b] = runBatch(buildBackbone("frozen-tiny", 64, 1), batch, 1);
    expect(Buffer.from(a.buffer).equals(Buffer.from(b.buffer))).toBe(false);
  });

  it("rejects input below the deepest stride", () => {
    expect(() => buildBackbone("frozen-tiny", 16, 0)).toThrow(/below the deepest stride/);
  });
});
