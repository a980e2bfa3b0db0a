/** HGF1 container writer: the wire format the detection engine ingests.
 *
 * Layout (little-endian u32 unless noted):
 *
 *     magic "HGF1" | version=1 | K | Y | N
 *     K x ( H | W | d | N*H*W*d float32, (N,H,W,d) row-major )
 *     N   u32 labels
 *     u8  anomaly-flag presence | [N u8 flags]
 *     u8  mask presence         | [H | W | N*H*W u8 masks]
 */

import * as fs from "node:fs";

export interface LevelBlock {
  h: number;
  w: number;
  d: number;
  /** (N, H, W, d) row-major. */
  features: Float32Array;
}

export interface MaskBlock {
  h: number;
  w: number;
  /** (N, H, W) row-major, 0 or 1. */
  data: Uint8Array;
}

export interface Hgf1Payload {
  nClasses: number;
  labels: Uint32Array;
  levels: LevelBlock[];
  anomalyFlags?: Uint8Array;
  masks?: MaskBlock;
}

export class Hgf1WriteError extends Error {}

export function hgf1Buffer(payload: Hgf1Payload): Buffer {
  const n = payload.labels.length;
  if (payload.levels.length === 0) throw new Hgf1WriteError("no feature levels");
  for (const [k, level] of payload.levels.entries()) {
    const expect = n * level.h * level.w * level.d;
    if (level.features.length !== expect) {
      throw new Hgf1WriteError(
        `level ${k}: ${level.features.length} values, expected ${expect}`,
      );
    }
  }
  for (const label of payload.labels) {
    if (label >= payload.nClasses) {
      throw new Hgf1WriteError(`label ${label} out of range for ${payload.nClasses} classes`);
    }
  }
  if (payload.anomalyFlags && payload.anomalyFlags.length !== n) {
    throw new Hgf1WriteError("anomaly flag count disagrees with labels");
  }
  if (payload.masks && payload.masks.data.length !== n * payload.masks.h * payload.masks.w) {
    throw new Hgf1WriteError("mask block size disagrees with labels");
  }

  const parts: Buffer[] = [];
  const u32 = (...values: number[]) => {
    const b = Buffer.alloc(4 * values.length);
    values.forEach((v, i) => b.writeUInt32LE(v >>> 0, 4 * i));
    parts.push(b);
  };
  parts.push(Buffer.from("HGF1", "ascii"));
  u32(1, payload.levels.length, payload.nClasses, n);
  for (const level of payload.levels) {
    u32(level.h, level.w, level.d);
    // Float32Array is platform-endian; every platform node runs on is LE,
    // but go through a DataView so the format holds even if that changes.
    const raw = Buffer.alloc(level.features.length * 4);
    const view = new DataView(raw.buffer, raw.byteOffset);
    level.features.forEach((v, i) => view.setFloat32(4 * i, v, true));
    parts.push(raw);
  }
  const labelBuf = Buffer.alloc(4 * n);
  payload.labels.forEach((v, i) => labelBuf.writeUInt32LE(v, 4 * i));
  parts.push(labelBuf);
  if (payload.anomalyFlags) {
    parts.push(Buffer.from([1]), Buffer.from(payload.anomalyFlags));
  } else {
    parts.push(Buffer.from([0]));
  }
  if (payload.masks) {
    parts.push(Buffer.from([1]));
    u32(payload.masks.h, payload.masks.w);
    parts.push(Buffer.from(payload.masks.data));
  } else {
    parts.push(Buffer.from([0]));
  }
  return Buffer.concat(parts);
}

export function writeHgf1(path: string, payload: Hgf1Payload): void {
  fs.writeFileSync(path, hgf1Buffer(payload));
}
