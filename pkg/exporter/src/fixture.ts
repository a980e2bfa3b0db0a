/** Deterministic 10-image PPM fixture dataset.
 *
 * Two texture classes in the class-per-directory layout the scanner
 * expects: three training images, one good test image, and one defective
 * test image per class, plus ground-truth masks for the defects. Pixels
 * are procedural (seeded), so the fixture can be regenerated anywhere and
 * byte-compares equal.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { encodePpm, RawImage } from "./ppm.js";
import { mulberry32, randInt, Rng } from "./prng.js";

export const FIXTURE_CLASSES = ["rings", "stripes"] as const;

const SIZE = 64;

function clamp(v: number): number {
  return Math.max(0, Math.min(255, Math.round(v)));
}

function ringsImage(rng: Rng): RawImage {
  const data = new Uint8Array(SIZE * SIZE * 3);
  const cx = SIZE / 2 + (rng() - 0.5) * 6;
  const cy = SIZE / 2 + (rng() - 0.5) * 6;
  const period = 6 + rng() * 3;
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const r = Math.hypot(x - cx, y - cy);
      const wave = 0.5 + 0.5 * Math.sin((2 * Math.PI * r) / period);
      const noise = (rng() - 0.5) * 24;
      const o = (y * SIZE + x) * 3;
      data[o] = clamp(40 + 170 * wave + noise);
      data[o + 1] = clamp(60 + 140 * wave + noise);
      data[o + 2] = clamp(90 + 90 * wave + noise);
    }
  }
  return { width: SIZE, height: SIZE, channels: 3, data };
}

function stripesImage(rng: Rng): RawImage {
  const data = new Uint8Array(SIZE * SIZE * 3);
  const angle = Math.PI / 4 + (rng() - 0.5) * 0.4;
  const period = 8 + rng() * 4;
  const dx = Math.cos(angle);
  const dy = Math.sin(angle);
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const t = x * dx + y * dy;
      const wave = 0.5 + 0.5 * Math.sin((2 * Math.PI * t) / period);
      const noise = (rng() - 0.5) * 24;
      const o = (y * SIZE + x) * 3;
      data[o] = clamp(120 + 100 * wave + noise);
      data[o + 1] = clamp(90 + 80 * wave + noise);
      data[o + 2] = clamp(50 + 60 * wave + noise);
    }
  }
  return { width: SIZE, height: SIZE, channels: 3, data };
}

/** Burn a bright rectangular defect into the image; returns its mask. */
function addDefect(img: RawImage, rng: Rng): RawImage {
  const w = 10 + randInt(rng, 8);
  const h = 6 + randInt(rng, 6);
  const x0 = 4 + randInt(rng, SIZE - w - 8);
  const y0 = 4 + randInt(rng, SIZE - h - 8);
  const mask = new Uint8Array(SIZE * SIZE);
  for (let y = y0; y < y0 + h; y++) {
    for (let x = x0; x < x0 + w; x++) {
      const o = (y * SIZE + x) * 3;
      img.data[o] = clamp(230 + (rng() - 0.5) * 20);
      img.data[o + 1] = clamp(230 + (rng() - 0.5) * 20);
      img.data[o + 2] = clamp(230 + (rng() - 0.5) * 20);
      mask[y * SIZE + x] = 255;
    }
  }
  return { width: SIZE, height: SIZE, channels: 1, data: mask };
}

function writeImage(file: string, img: RawImage): void {
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, encodePpm(img));
}

export function makeFixture(root: string, seed = 0): void {
  const makers = { rings: ringsImage, stripes: stripesImage } as const;
  for (const [ci, cls] of FIXTURE_CLASSES.entries()) {
    const make = makers[cls];
    for (let i = 0; i < 3; i++) {
      const rng = mulberry32(seed * 1000 + ci * 100 + i);
      writeImage(path.join(root, "train", cls, `${cls}_${i}.ppm`), make(rng));
    }
    const goodRng = mulberry32(seed * 1000 + ci * 100 + 50);
    writeImage(path.join(root, "test", cls, "good", `${cls}_good_0.ppm`), make(goodRng));

    const badRng = mulberry32(seed * 1000 + ci * 100 + 60);
    const bad = make(badRng);
    const mask = addDefect(bad, badRng);
    writeImage(path.join(root, "test", cls, "scratch", `${cls}_bad_0.ppm`), bad);
    writeImage(path.join(root, "ground_truth", cls, "scratch", `${cls}_bad_0.pgm`), mask);
  }
}
