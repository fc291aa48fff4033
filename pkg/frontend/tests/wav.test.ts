import { describe, expect, it } from "vitest";

import { captureToWav, downmix, encodeWav, resampleLinear } from "../src/wav.js";

describe("downmix", () => {
  it("averages channels", () => {
    const out = downmix([
      new Float32Array([1, 0.5]),
      new Float32Array([0, -0.5]),
    ]);
    expect(Array.from(out)).toEqual([0.5, 0]);
  });

  it("rejects empty and mismatched input", () => {
    expect(() => downmix([])).toThrow();
    expect(() =>
      downmix([new Float32Array(2), new Float32Array(3)]),
    ).toThrow();
  });
});

describe("resampleLinear", () => {
  it("is the identity at matching rates", () => {
    const x = new Float32Array([0.1, 0.2, 0.3]);
    expect(resampleLinear(x, 16000, 16000)).toBe(x);
  });

  it("produces the expected output length from 48 kHz", () => {
    const out = resampleLinear(new Float32Array(48000), 48000, 16000);
    expect(out.length).toBe(16000);
  });

  it("preserves a constant signal", () => {
    const out = resampleLinear(new Float32Array(441).fill(0.25), 44100, 16000);
    for (const v of out) expect(v).toBeCloseTo(0.25, 6);
  });
});

describe("encodeWav", () => {
  it("writes a canonical mono 16-bit PCM header", () => {
    const buffer = encodeWav(new Float32Array([0, 0.5, -0.5]));
    const view = new DataView(buffer);
    const ascii = (offset: number, len: number) =>
      String.fromCharCode(
        ...new Uint8Array(buffer.slice(offset, offset + len)),
      );
    expect(ascii(0, 4)).toBe("RIFF");
    expect(ascii(8, 4)).toBe("WAVE");
    expect(view.getUint16(20, true)).toBe(1); // PCM
    expect(view.getUint16(22, true)).toBe(1); // mono
    expect(view.getUint32(24, true)).toBe(16000);
    expect(view.getUint16(34, true)).toBe(16); // bits per sample
    expect(view.getUint32(40, true)).toBe(6); // 3 samples * 2 bytes
    expect(buffer.byteLength).toBe(44 + 6);
  });

  it("quantises samples symmetrically with clipping", () => {
    const buffer = encodeWav(new Float32Array([0.5, -0.5, 2.0, -2.0]));
    const view = new DataView(buffer);
    expect(view.getInt16(44, true)).toBe(16384);
    expect(view.getInt16(46, true)).toBe(-16384);
    expect(view.getInt16(48, true)).toBe(32767);
    expect(view.getInt16(50, true)).toBe(-32768);
  });
});

describe("captureToWav", () => {
  it("downmixes stereo 48 kHz capture into mono 16 kHz WAV", () => {
    const left = new Float32Array(4800).fill(0.2);
    const right = new Float32Array(4800).fill(0.4);
    const buffer = captureToWav([left, right], 48000);
    const view = new DataView(buffer);
    expect(view.getUint32(24, true)).toBe(16000);
    expect(view.getUint32(40, true)).toBe(1600 * 2);
    // mean of the two channels, quantised
    expect(view.getInt16(44, true)).toBe(Math.round(0.3 * 32768));
  });
});
