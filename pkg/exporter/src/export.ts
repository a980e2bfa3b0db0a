/** Dataset -> HGF1 export pipeline.
 *
 * Decodes every image, pushes batches through the frozen backbone, and
 * writes one HGF1 container per split: train.hgf1 (no anomaly flags) and
 * test.hgf1 (flags from the directory ground truth, masks when mask files
 * exist). Unreadable images are skipped with a logged count; a class whose
 * images all fail to decode is an error, matching the nonempty-class
 * invariant of the scanner.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Backbone, buildBackbone, runBatch, StageShape } from "./backbone.js";
import { DatasetError, ImageEntry, scanTest, scanTrain, SplitScan } from "./dataset.js";
import { hgf1Buffer, LevelBlock, MaskBlock } from "./hgf1.js";
import { decodePpm, resizeNearest, toGray } from "./ppm.js";

export interface ExportConfig {
  /** Dataset root holding train/, test/, and optionally ground_truth/. */
  root: string;
  /** Output directory for train.hgf1 and test.hgf1. */
  out: string;
  backbone?: string;
  /** Indices of backbone stages to export, in file order. */
  levels?: number[];
  imageSize?: number;
  batchSize?: number;
  seed?: number;
  log?: (msg: string) => void;
}

export interface SplitResult {
  path: string;
  nImages: number;
  skipped: number;
}

export interface ExportResult {
  train: SplitResult;
  test: SplitResult;
  classes: string[];
  levelShapes: StageShape[];
}

interface Resolved extends Required<Omit<ExportConfig, "log">> {
  log: (msg: string) => void;
}

function resolve(cfg: ExportConfig): Resolved {
  const backbone = cfg.backbone ?? "frozen-tiny";
  return {
    root: cfg.root,
    out: cfg.out,
    backbone,
    levels: cfg.levels ?? [],
    imageSize: cfg.imageSize ?? 64,
    batchSize: cfg.batchSize ?? 8,
    seed: cfg.seed ?? 0,
    log: cfg.log ?? ((msg) => console.error(msg)),
  };
}

interface DecodedSplit {
  entries: ImageEntry[];
  pixels: Float32Array; // (N, S, S, 3)
  skipped: number;
}

/** Decode and resize every entry; drop the unreadable ones. */
function decodeSplit(scan: SplitScan, size: number, log: (m: string) => void): DecodedSplit {
  const kept: ImageEntry[] = [];
  const buffers: Uint8Array[] = [];
  let skipped = 0;
  for (const entry of scan.entries) {
    try {
      const img = resizeNearest(decodePpm(fs.readFileSync(entry.path)), size);
      buffers.push(img.channels === 3 ? img.data : replicateGray(img.data));
      kept.push(entry);
    } catch (err) {
      skipped++;
      log(`skipping unreadable image ${entry.path}: ${(err as Error).message}`);
    }
  }
  if (skipped > 0) log(`skipped ${skipped} unreadable image(s)`);
  for (const [idx, cls] of scan.classes.entries()) {
    const before = scan.entries.some((e) => e.classIndex === idx);
    const after = kept.some((e) => e.classIndex === idx);
    if (before && !after) {
      throw new DatasetError(`every image of class ${cls} failed to decode`);
    }
  }
  const pixels = new Float32Array(kept.length * size * size * 3);
  for (const [i, data] of buffers.entries()) {
    const base = i * size * size * 3;
    for (let j = 0; j < data.length; j++) pixels[base + j] = data[j] / 255;
  }
  return { entries: kept, pixels, skipped };
}

function replicateGray(gray: Uint8Array): Uint8Array {
  const out = new Uint8Array(gray.length * 3);
  for (let i = 0; i < gray.length; i++) {
    out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = gray[i];
  }
  return out;
}

/** Feature-extract one decoded split into HGF1 level blocks. */
function extractLevels(
  backbone: Backbone,
  levels: number[],
  split: DecodedSplit,
  batchSize: number,
): LevelBlock[] {
  const n = split.entries.length;
  const s = backbone.imageSize;
  const blocks: LevelBlock[] = levels.map((k) => {
    const { h, w, d } = backbone.shapes[k];
    return { h, w, d, features: new Float32Array(n * h * w * d) };
  });
  for (let start = 0; start < n; start += batchSize) {
    const count = Math.min(batchSize, n - start);
    const batch = split.pixels.subarray(start * s * s * 3, (start + count) * s * s * 3);
    const stages = runBatch(backbone, batch, count);
    for (const [bi, k] of levels.entries()) {
      const { h, w, d } = backbone.shapes[k];
      const per = h * w * d;
      blocks[bi].features.set(stages[k].subarray(0, count * per), start * per);
    }
  }
  return blocks;
}

function maskBlock(split: DecodedSplit, size: number, log: (m: string) => void): MaskBlock {
  const n = split.entries.length;
  const data = new Uint8Array(n * size * size);
  for (const [i, entry] of split.entries.entries()) {
    if (!entry.maskPath) continue;
    try {
      const mask = resizeNearest(toGray(decodePpm(fs.readFileSync(entry.maskPath))), size);
      const base = i * size * size;
      for (let j = 0; j < mask.data.length; j++) {
        data[base + j] = mask.data[j] > 127 ? 1 : 0;
      }
    } catch (err) {
      log(`ignoring unreadable mask ${entry.maskPath}: ${(err as Error).message}`);
    }
  }
  return { h: size, w: size, data };
}

export async function exportDataset(cfg: ExportConfig): Promise<ExportResult> {
  const rc = resolve(cfg);
  const backbone = buildBackbone(rc.backbone, rc.imageSize, rc.seed);
  const levels = rc.levels.length > 0 ? rc.levels : backbone.shapes.map((_, i) => i);
  for (const k of levels) {
    if (!Number.isInteger(k) || k < 0 || k >= backbone.shapes.length) {
      throw new DatasetError(
        `level index ${k} out of range; ${rc.backbone} has ${backbone.shapes.length} stages`,
      );
    }
  }

  const trainScan = scanTrain(rc.root);
  const testScan = scanTest(rc.root, trainScan.classes);
  fs.mkdirSync(rc.out, { recursive: true });

  const results: SplitResult[] = [];
  for (const [name, scan] of [
    ["train", trainScan],
    ["test", testScan],
  ] as const) {
    const split = decodeSplit(scan, rc.imageSize, rc.log);
    const blocks = extractLevels(backbone, levels, split, rc.batchSize);
    const payload = {
      nClasses: trainScan.classes.length,
      labels: Uint32Array.from(split.entries.map((e) => e.classIndex)),
      levels: blocks,
      anomalyFlags:
        name === "test"
          ? Uint8Array.from(split.entries.map((e) => (e.anomalous ? 1 : 0)))
          : undefined,
      masks:
        name === "test" && scan.hasMasks
          ? maskBlock(split, rc.imageSize, rc.log)
          : undefined,
    };
    const outPath = path.join(rc.out, `${name}.hgf1`);
    fs.writeFileSync(outPath, hgf1Buffer(payload));
    results.push({ path: outPath, nImages: split.entries.length, skipped: split.skipped });
  }

  return {
    train: results[0],
    test: results[1],
    classes: trainScan.classes,
    levelShapes: levels.map((k) => backbone.shapes[k]),
  };
}
