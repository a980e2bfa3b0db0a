#!/usr/bin/env node
/** Command line for the exporter; flags mirror ExportConfig one-to-one.
 *
 * Exit codes follow the engine's convention: 0 success, 2 usage or I/O
 * problems (bad paths, unknown backbone, malformed flags).
 */

import { parseArgs } from "node:util";

import { BACKBONES, BackboneError } from "./backbone.js";
import { DatasetError } from "./dataset.js";
import { exportDataset } from "./export.js";
import { PpmError } from "./ppm.js";

const USAGE = `usage: hgf-export --root <dataset> --out <dir> [options]

Extract frozen-CNN multi-level features from a class-per-directory PPM
dataset and write HGF1 train/test containers.

options:
  --root <dir>        dataset root holding train/, test/, ground_truth/
  --out <dir>         output directory for train.hgf1 and test.hgf1
  --backbone <name>   ${Object.keys(BACKBONES).join(" | ")}  (default frozen-tiny)
  --levels <list>     comma-separated stage indices, e.g. 0,1,2 (default all)
  --image-size <n>    square resize applied to every image (default 64)
  --batch-size <n>    inference batch size (default 8)
  --seed <n>          weight seed for the frozen backbone (default 0)
`;

function bail(message: string): never {
  console.error(`error: ${message}`);
  console.error(USAGE);
  process.exit(2);
}

async function main(): Promise<void> {
  let values;
  try {
    ({ values } = parseArgs({
      options: {
        root: { type: "string" },
        out: { type: "string" },
        backbone: { type: "string", default: "frozen-tiny" },
        levels: { type: "string" },
        "image-size": { type: "string", default: "64" },
        "batch-size": { type: "string", default: "8" },
        seed: { type: "string", default: "0" },
        help: { type: "boolean", default: false },
      },
    }));
  } catch (err) {
    bail((err as Error).message);
  }
  if (values.help) {
    console.log(USAGE);
    return;
  }
  if (!values.root || !values.out) bail("--root and --out are required");

  const toInt = (name: string, raw: string): number => {
    const v = parseInt(raw, 10);
    if (!Number.isInteger(v) || `${v}` !== raw.trim()) bail(`--${name} needs an integer, got ${raw}`);
    return v;
  };
  const levels = values.levels
    ? values.levels.split(",").map((part) => toInt("levels", part))
    : undefined;

  try {
    const result = await exportDataset({
      root: values.root,
      out: values.out,
      backbone: values.backbone,
      levels,
      imageSize: toInt("image-size", values["image-size"]),
      batchSize: toInt("batch-size", values["batch-size"]),
      seed: toInt("seed", values.seed),
    });
    const dims = result.levelShapes.map((s) => `${s.h}x${s.w}x${s.d}`).join(", ");
    console.error(
      `wrote ${result.train.path} (${result.train.nImages} images) and ` +
        `${result.test.path} (${result.test.nImages} images); levels ${dims}; ` +
        `classes ${result.classes.join(", ")}`,
    );
    const skipped = result.train.skipped + result.test.skipped;
    if (skipped > 0) console.error(`${skipped} unreadable image(s) skipped`);
  } catch (err) {
    if (err instanceof DatasetError || err instanceof BackboneError || err instanceof PpmError) {
      bail(err.message);
    }
    if ((err as NodeJS.ErrnoException).code === "ENOENT") {
      bail((err as Error).message);
    }
    throw err;
  }
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
