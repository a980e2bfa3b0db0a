/** Class-per-directory dataset scanning.
 *
 * Expected layout (every image a binary PPM):
 *
 *     root/train/<class>/*.ppm               normal training images
 *     root/test/<class>/good/*.ppm           normal test images
 *     root/test/<class>/<defect>/*.ppm       anomalous test images
 *     root/ground_truth/<class>/<defect>/<stem>.ppm   optional masks
 *
 * Class indices are the sorted order of the train class directories; the
 * assignment is part of the contract, so downstream labels stay stable
 * across machines. All file lists are sorted for the same reason.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export class DatasetError extends Error {}

export interface ImageEntry {
  path: string;
  classIndex: number;
  /** Only meaningful for the test split. */
  anomalous: boolean;
  /** Ground-truth mask path, when one exists for this image. */
  maskPath?: string;
}

export interface SplitScan {
  entries: ImageEntry[];
  classes: string[];
  /** True when at least one mask file was found (test split only). */
  hasMasks: boolean;
}

function listDirs(dir: string): string[] {
  return fs
    .readdirSync(dir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
}

function listImages(dir: string): string[] {
  return fs
    .readdirSync(dir, { withFileTypes: true })
    .filter((e) => e.isFile() && /\.(ppm|pgm)$/i.test(e.name))
    .map((e) => path.join(dir, e.name))
    .sort();
}

export function scanClasses(root: string): string[] {
  const trainDir = path.join(root, "train");
  if (!fs.existsSync(trainDir)) {
    throw new DatasetError(`no train/ directory under ${root}`);
  }
  const classes = listDirs(trainDir);
  if (classes.length === 0) {
    throw new DatasetError(`train/ holds no class directories under ${root}`);
  }
  return classes;
}

export function scanTrain(root: string): SplitScan {
  const classes = scanClasses(root);
  const entries: ImageEntry[] = [];
  for (const [idx, cls] of classes.entries()) {
    const files = listImages(path.join(root, "train", cls));
    if (files.length === 0) {
      throw new DatasetError(`class directory train/${cls} holds no images`);
    }
    for (const file of files) {
      entries.push({ path: file, classIndex: idx, anomalous: false });
    }
  }
  return { entries, classes, hasMasks: false };
}

export function scanTest(root: string, classes: string[]): SplitScan {
  const testDir = path.join(root, "test");
  if (!fs.existsSync(testDir)) {
    throw new DatasetError(`no test/ directory under ${root}`);
  }
  const byName = new Map(classes.map((c, i) => [c, i]));
  const entries: ImageEntry[] = [];
  let hasMasks = false;
  for (const cls of listDirs(testDir)) {
    const idx = byName.get(cls);
    if (idx === undefined) {
      throw new DatasetError(`test class ${cls} has no train counterpart`);
    }
    const clsDir = path.join(testDir, cls);
    const kinds = listDirs(clsDir);
    if (kinds.length === 0) {
      throw new DatasetError(`test/${cls} holds no condition directories`);
    }
    for (const kind of kinds) {
      const files = listImages(path.join(clsDir, kind));
      if (files.length === 0) {
        throw new DatasetError(`test/${cls}/${kind} holds no images`);
      }
      const anomalous = kind !== "good";
      for (const file of files) {
        const entry: ImageEntry = { path: file, classIndex: idx, anomalous };
        if (anomalous) {
          const stem = path.basename(file).replace(/\.(ppm|pgm)$/i, "");
          for (const ext of [".ppm", ".pgm"]) {
            const mask = path.join(root, "ground_truth", cls, kind, stem + ext);
            if (fs.existsSync(mask)) {
              entry.maskPath = mask;
              hasMasks = true;
              break;
            }
          }
        }
        entries.push(entry);
      }
    }
  }
  if (entries.length === 0) {
    throw new DatasetError(`test/ holds no images under ${root}`);
  }
  return { entries, classes, hasMasks };
}
