import { describe, expect, it } from "vitest";

import { hgf1Buffer, Hgf1Payload, Hgf1WriteError } from "../src/hgf1.js";

/** Minimal independent reader used to verify the writer byte-for-byte. */
class Cursor {
  pos = 0;
  view: DataView;
  constructor(public buf: Buffer) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }
  u32(): number {
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }
  u8(): number {
    return this.buf[this.pos++];
  }
  f32(): number {
    const v = this.view.getFloat32(this.pos, true);
    this.pos += 4;
    return v;
  }
}

function samplePayload(): Hgf1Payload {
  const mk = (h: number, w: number, d: number, n: number) => ({
    h,
    w,
    d,
    features: Float32Array.from({ length: n * h * w * d }, (_, i) => i / 7 - 3),
  });
  return {
    nClasses: 2,
    labels: Uint32Array.from([0, 0, 1]),
    levels: [mk(2, 2, 4, 3), mk(1, 1, 6, 3)],
    anomalyFlags: Uint8Array.from([0, 1, 0]),
    masks: { h: 2, w: 2, data: Uint8Array.from([0, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1]) },
  };
}

describe("wire layout", () => {
  it("emits header, levels, labels, flags, masks in order", () => {
    const payload = samplePayload();
    const c = new Cursor(hgf1Buffer(payload));
    expect(c.buf.subarray(0, 4).toString("ascii")).toBe("HGF1");
    c.pos = 4;
    expect(c.u32()).toBe(1); // version
    expect(c.u32()).toBe(2); // K
    expect(c.u32()).toBe(2); // Y
    expect(c.u32()).toBe(3); // N
    for (const level of payload.levels) {
      expect(c.u32()).toBe(level.h);
      expect(c.u32()).toBe(level.w);
      expect(c.u32()).toBe(level.d);
      for (let i = 0; i < level.features.length; i++) {
        expect(c.f32()).toBeCloseTo(level.features[i], 6);
      }
    }
    expect([c.u32(), c.u32(), c.u32()]).toEqual([0, 0, 1]);
    expect(c.u8()).toBe(1); // flags present
    expect([c.u8(), c.u8(), c.u8()]).toEqual([0, 1, 0]);
    expect(c.u8()).toBe(1); // masks present
    expect(c.u32()).toBe(2);
    expect(c.u32()).toBe(2);
    for (const bit of payload.masks!.data) expect(c.u8()).toBe(bit);
    expect(c.pos).toBe(c.buf.length); // nothing trailing
  });

  it("absent flags and masks shrink to single presence bytes", () => {
    const payload = samplePayload();
    delete payload.anomalyFlags;
    delete payload.masks;
    const buf = hgf1Buffer(payload);
    expect(buf[buf.length - 2]).toBe(0);
    expect(buf[buf.length - 1]).toBe(0);
    const floats = payload.levels.reduce((a, l) => a + l.features.length, 0);
    expect(buf.length).toBe(4 + 4 * 4 + 2 * 12 + 4 * floats + 4 * 3 + 2);
  });

  it("is deterministic", () => {
    const a = hgf1Buffer(samplePayload());
    const b = hgf1Buffer(samplePayload());
    expect(a.equals(b)).toBe(true);
  });
});

describe("writer validation", () => {
  it("rejects level size mismatch", () => {
    const payload = samplePayload();
    payload.levels[0].features = new Float32Array(5);
    expect(() => hgf1Buffer(payload)).toThrow(Hgf1WriteError);
  });

  it("rejects out-of-range labels", () => {
    const payload = samplePayload();
    payload.labels = Uint32Array.from([0, 2, 1]);
    expect(() => hgf1Buffer(payload)).toThrow(/out of range/);
  });

  it("rejects flag count mismatch", () => {
    const payload = samplePayload();
    payload.anomalyFlags = Uint8Array.from([1]);
    expect(() => hgf1Buffer(payload)).toThrow(Hgf1WriteError);
  });

  it("rejects empty level list", () => {
    const payload = samplePayload();
    payload.levels = [];
    expect(() => hgf1Buffer(payload)).toThrow(/no feature levels/);
  });
});
