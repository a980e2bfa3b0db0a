/** Binary PPM/PGM (P6/P5) codec and nearest-neighbor resize.
 *
 * Netpbm is the one image format simple enough to hand-roll reliably:
 * ASCII header (magic, width, height, maxval, '#' comments allowed),
 * a single whitespace byte, then raw samples. Only maxval 255 is
 * supported; that covers everything this exporter writes and reads.
 */

export class PpmError extends Error {}

export interface RawImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** Row-major, interleaved channels, length = width*height*channels. */
  data: Uint8Array;
}

const WS = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

function isDigit(b: number): boolean {
  return b >= 0x30 && b <= 0x39;
}

/** Read the next header token, skipping whitespace and # comments. */
function nextToken(buf: Uint8Array, pos: number): [string, number] {
  while (pos < buf.length) {
    const b = buf[pos];
    if (WS.has(b)) {
      pos++;
    } else if (b === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < buf.length && !WS.has(buf[pos]) && buf[pos] !== 0x23) pos++;
  if (pos === start) throw new PpmError("truncated header");
  return [Buffer.from(buf.subarray(start, pos)).toString("ascii"), pos];
}

export function decodePpm(buf: Uint8Array): RawImage {
  let pos = 0;
  let magic: string;
  [magic, pos] = nextToken(buf, pos);
  if (magic !== "P6" && magic !== "P5") {
    throw new PpmError(`unsupported magic ${JSON.stringify(magic)}`);
  }
  const channels: 1 | 3 = magic === "P6" ? 3 : 1;
  const fields: number[] = [];
  for (let i = 0; i < 3; i++) {
    let tok: string;
    [tok, pos] = nextToken(buf, pos);
    if (!tok.split("").every((c) => isDigit(c.charCodeAt(0)))) {
      throw new PpmError(`non-numeric header field ${JSON.stringify(tok)}`);
    }
    fields.push(parseInt(tok, 10));
  }
  const [width, height, maxval] = fields;
  if (width <= 0 || height <= 0) throw new PpmError("non-positive dimensions");
  if (maxval !== 255) throw new PpmError(`unsupported maxval ${maxval}`);
  // Exactly one whitespace byte separates header and raster.
  if (pos >= buf.length || !WS.has(buf[pos])) {
    throw new PpmError("missing raster separator");
  }
  pos++;
  const need = width * height * channels;
  if (buf.length - pos < need) {
    throw new PpmError(
      `truncated raster: need ${need} bytes, have ${buf.length - pos}`,
    );
  }
  return { width, height, channels, data: buf.subarray(pos, pos + need) };
}

export function encodePpm(img: RawImage): Buffer {
  const magic = img.channels === 3 ? "P6" : "P5";
  const header = Buffer.from(`${magic}\n${img.width} ${img.height}\n255\n`, "ascii");
  const need = img.width * img.height * img.channels;
  if (img.data.length !== need) {
    throw new PpmError(`raster length ${img.data.length}, expected ${need}`);
  }
  return Buffer.concat([header, Buffer.from(img.data)]);
}

/** Nearest-neighbor resample to size x size (aspect ratio not preserved). */
export function resizeNearest(img: RawImage, size: number): RawImage {
  if (img.width === size && img.height === size) return img;
  const out = new Uint8Array(size * size * img.channels);
  for (let y = 0; y < size; y++) {
    const sy = Math.min(img.height - 1, Math.floor((y * img.height) / size));
    for (let x = 0; x < size; x++) {
      const sx = Math.min(img.width - 1, Math.floor((x * img.width) / size));
      const src = (sy * img.width + sx) * img.channels;
      const dst = (y * size + x) * img.channels;
      for (let c = 0; c < img.channels; c++) out[dst + c] = img.data[src + c];
    }
  }
  return { width: size, height: size, channels: img.channels, data: out };
}

/** Collapse to grayscale (rec601 luma) for mask handling. */
export function toGray(img: RawImage): RawImage {
  if (img.channels === 1) return img;
  const out = new Uint8Array(img.width * img.height);
  for (let i = 0; i < out.length; i++) {
    const o = i * 3;
    out[i] = Math.round(
      0.299 * img.data[o] + 0.587 * img.data[o + 1] + 0.114 * img.data[o + 2],
    );
  }
  return { width: img.width, height: img.height, channels: 1, data: out };
}
