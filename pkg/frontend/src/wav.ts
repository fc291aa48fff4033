/**
 * Client-side WAV encoding. Browser capture runs at 44.1/48 kHz; the
 * service expects mono 16 kHz 16-bit PCM, so channels are averaged and
 * the signal linearly resampled before encoding.
 */

export const TARGET_RATE = 16000;

export function downmix(channels: Float32Array[]): Float32Array {
  if (channels.length === 0) {
    throw new Error("no audio channels");
  }
  const n = channels[0].length;
  const out = new Float32Array(n);
  for (const ch of channels) {
    if (ch.length !== n) throw new Error("channel length mismatch");
    for (let i = 0; i < n; i++) out[i] += ch[i];
  }
  for (let i = 0; i < n; i++) out[i] /= channels.length;
  return out;
}

export function resampleLinear(
  samples: Float32Array,
  fromRate: number,
  toRate: number = TARGET_RATE,
): Float32Array {
  if (fromRate <= 0 || toRate <= 0) throw new Error("invalid sample rate");
  if (fromRate === toRate) return samples;
  const outLen = Math.round((samples.length * toRate) / fromRate);
  const out = new Float32Array(outLen);
  const step = fromRate / toRate;
  for (let i = 0; i < outLen; i++) {
    const pos = i * step;
    const lo = Math.floor(pos);
    const hi = Math.min(lo + 1, samples.length - 1);
    const frac = pos - lo;
    out[i] = samples[lo] * (1 - frac) + samples[hi] * frac;
  }
  return out;
}

/** Encode mono float samples in [-1, 1] as a 16-bit PCM WAV container. */
export function encodeWav(
  samples: Float32Array,
  sampleRate: number = TARGET_RATE,
): ArrayBuffer {
  const dataBytes = samples.length * 2;
  const buffer = new ArrayBuffer(44 + dataBytes);
  const view = new DataView(buffer);
  const writeAscii = (offset: number, text: string) => {
    for (let i = 0; i < text.length; i++) {
      view.setUint8(offset + i, text.charCodeAt(i));
    }
  };
  writeAscii(0, "RIFF");
  view.setUint32(4, 36 + dataBytes, true);
  writeAscii(8, "WAVE");
  writeAscii(12, "fmt ");
  view.setUint32(16, 16, true); // PCM fmt chunk size
  view.setUint16(20, 1, true); // PCM
  view.setUint16(22, 1, true); // mono
  view.setUint32(24, sampleRate, true);
  view.setUint32(28, sampleRate * 2, true);
  view.setUint16(32, 2, true);
  view.setUint16(34, 16, true);
  writeAscii(36, "data");
  view.setUint32(40, dataBytes, true);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]));
    const q = Math.max(-32768, Math.min(32767, Math.round(clamped * 32768)));
    view.setInt16(44 + i * 2, q, true);
  }
  return buffer;
}

/** Full capture path: downmix, resample to 16 kHz, encode. */
export function captureToWav(
  channels: Float32Array[],
  captureRate: number,
): ArrayBuffer {
  return encodeWav(resampleLinear(downmix(channels), captureRate));
}
