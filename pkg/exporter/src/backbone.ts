/** Frozen multi-scale CNN feature extractors.
 *
 * Weights are drawn once from a seeded generator and never trained: the
 * extractor's job is a fixed, spatially-aware embedding whose pyramid
 * shapes follow documented stride arithmetic, and seeded random features
 * give that without any network download. Random frozen projections
 * preserve enough geometry for the downstream density model; anything
 * learned would only sharpen them.
 *
 * Every stage halves the spatial size (stride-2 conv, same padding), so
 * stage k at overall stride s has spatial extent ceil applied k times:
 * 64 -> 32 -> 16 -> 8 (tap, stride 8) -> 4 (tap, 16) -> 2 (tap, 32).
 */

import * as tf from "@tensorflow/tfjs";

import { mulberry32, normals } from "./prng.js";

export interface BackboneSpec {
  name: string;
  /** Channels of the two stem convs (stride 2 and 4). */
  stem: number;
  /** Overall stride of each tapped stage, in order. */
  stageStrides: number[];
  /** Feature channels of each tapped stage. */
  stageChannels: number[];
}

export const BACKBONES: Record<string, BackboneSpec> = {
  "frozen-tiny": {
    name: "frozen-tiny",
    stem: 8,
    stageStrides: [8, 16, 32],
    stageChannels: [16, 32, 64],
  },
  "frozen-wide": {
    name: "frozen-wide",
    stem: 16,
    stageStrides: [8, 16, 32],
    stageChannels: [32, 64, 128],
  },
};

export interface StageShape {
  h: number;
  w: number;
  d: number;
}

export class BackboneError extends Error {}

export function getSpec(name: string): BackboneSpec {
  const spec = BACKBONES[name];
  if (!spec) {
    throw new BackboneError(
      `unknown backbone ${JSON.stringify(name)}; available: ${Object.keys(BACKBONES).join(", ")}`,
    );
  }
  return spec;
}

/** Spatial/channel dims of every tapped stage for a given input size. */
export function stageShapes(spec: BackboneSpec, imageSize: number): StageShape[] {
  const out: StageShape[] = [];
  let size = imageSize;
  let halvings = 0;
  for (const [k, stride] of spec.stageStrides.entries()) {
    const target = Math.log2(stride);
    if (!Number.isInteger(target)) {
      throw new BackboneError(`stride ${stride} is not a power of two`);
    }
    while (halvings < target) {
      size = Math.ceil(size / 2);
      halvings++;
    }
    out.push({ h: size, w: size, d: spec.stageChannels[k] });
  }
  return out;
}

export interface Backbone {
  spec: BackboneSpec;
  imageSize: number;
  seed: number;
  model: tf.LayersModel;
  shapes: StageShape[];
}

export function buildBackbone(name: string, imageSize: number, seed = 0): Backbone {
  const spec = getSpec(name);
  if (imageSize < spec.stageStrides[spec.stageStrides.length - 1]) {
    throw new BackboneError(
      `image size ${imageSize} is below the deepest stride ${spec.stageStrides.at(-1)}`,
    );
  }
  const input = tf.input({ shape: [imageSize, imageSize, 3] });
  const channelPlan = [spec.stem, spec.stem * 2, ...spec.stageChannels];
  const taps: tf.SymbolicTensor[] = [];
  let x: tf.SymbolicTensor = input;
  for (const [i, filters] of channelPlan.entries()) {
    x = tf.layers
      .conv2d({
        filters,
        kernelSize: 3,
        strides: 2,
        padding: "same",
        activation: "relu",
        name: `conv${i}`,
      })
      .apply(x) as tf.SymbolicTensor;
    if (i >= 2) taps.push(x);
  }
  const model = tf.model({ inputs: input, outputs: taps });
  model.trainable = false;

  // One weight stream per (backbone, seed): He-scaled so activations keep a
  // usable dynamic range through five relu stages.
  const rng = mulberry32((seed ^ hashName(spec.name)) >>> 0);
  const count = (shape: number[]): number => shape.reduce((a, b) => a * b, 1);
  for (const layer of model.layers) {
    const weights = layer.getWeights();
    if (weights.length < 2) continue;
    const kernelShape = weights[0]!.shape;
    const biasShape = weights[1]!.shape;
    const fanIn = count(kernelShape.slice(0, -1)); // kh*kw*cin
    const std = Math.sqrt(2 / fanIn);
    const kernel = normals(rng, count(kernelShape));
    for (let i = 0; i < kernel.length; i++) kernel[i] *= std;
    const bias = new Float32Array(count(biasShape)); // zero
    layer.setWeights([tf.tensor(kernel, kernelShape), tf.tensor(bias, biasShape)]);
  }
  return { spec, imageSize, seed, model, shapes: stageShapes(spec, imageSize) };
}

function hashName(name: string): number {
  let h = 2166136261;
  for (const ch of name) {
    h ^= ch.charCodeAt(0);
    h = Math.imul(h, 16777619);
  }
  return h >>> 0;
}

/** Run one NHWC float batch; returns one (B,Hk,Wk,dk) array per stage. */
export function runBatch(
  backbone: Backbone,
  batch: Float32Array,
  batchSize: number,
): Float32Array[] {
  const s = backbone.imageSize;
  const outputs = tf.tidy(() => {
    const input = tf.tensor4d(batch, [batchSize, s, s, 3]);
    const result = backbone.model.predict(input);
    return Array.isArray(result) ? result : [result];
  });
  const arrays = outputs.map((t) => t.dataSync() as Float32Array);
  outputs.forEach((t) => t.dispose());
  return arrays;
}
