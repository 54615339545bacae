/**
 * Mask model for the region panel and freehand brush.
 *
 * Values live on the same 2^-24 grid the server uses, so exports through
 * the 8-bit mask file format round-trip losslessly and byte-identically.
 */

import type { RegionSets } from "./presets.js";

const GRID = 2 ** 24;

function quantize(v: number): number {
  return Math.round(Math.min(1, Math.max(0, v)) * GRID) / GRID;
}

export class MaskGrid {
  readonly height: number;
  readonly width: number;
  readonly values: Float64Array;

  constructor(height: number, width: number, fill = 0) {
    this.height = height;
    this.width = width;
    this.values = new Float64Array(height * width).fill(quantize(fill));
  }

  get(y: number, x: number): number {
    return this.values[y * this.width + x];
  }

  set(y: number, x: number, v: number): void {
    this.values[y * this.width + x] = quantize(v);
  }

  clone(): MaskGrid {
    const copy = new MaskGrid(this.height, this.width);
    copy.values.set(this.values);
    return copy;
  }
}

/** Binary mask from a label map: 1 on anonymized-region pixels. */
export function maskFromRegions(labels: number[][], sets: RegionSets): MaskGrid {
  const anon = new Set(sets.anonymize);
  const h = labels.length;
  const w = h > 0 ? labels[0].length : 0;
  const mask = new MaskGrid(h, w);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      if (anon.has(labels[y][x])) mask.set(y, x, 1);
    }
  }
  return mask;
}

/** Freehand brush: paints a disk of the given value (1 adds, 0 erases). */
export function brush(mask: MaskGrid, cy: number, cx: number, radius: number,
                      value: number): void {
  const r2 = radius * radius;
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(mask.height - 1, Math.ceil(cy + radius));
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(mask.width - 1, Math.ceil(cx + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      if ((y - cy) ** 2 + (x - cx) ** 2 <= r2) mask.set(y, x, value);
    }
  }
}

/** Canonical P5 PGM bytes, matching the server's mask writer exactly. */
export function toPgmBytes(mask: MaskGrid): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${mask.width} ${mask.height}\n255\n`);
  const body = new Uint8Array(mask.values.length);
  for (let i = 0; i < mask.values.length; i++) {
    body[i] = Math.round(mask.values[i] * 255);
  }
  const out = new Uint8Array(header.length + body.length);
  out.set(header);
  out.set(body, header.length);
  return out;
}

export function fromPgmBytes(bytes: Uint8Array): MaskGrid {
  const decoder = new TextDecoder("ascii");
  // header is three whitespace-separated tokens after the magic
  let pos = 0;
  const tokens: string[] = [];
  while (tokens.length < 4 && pos < bytes.length) {
    while (pos < bytes.length && /\s/.test(decoder.decode(bytes.subarray(pos, pos + 1)))) pos++;
    let start = pos;
    while (pos < bytes.length && !/\s/.test(decoder.decode(bytes.subarray(pos, pos + 1)))) pos++;
    tokens.push(decoder.decode(bytes.subarray(start, pos)));
  }
  pos++; // single whitespace after maxval
  if (tokens[0] !== "P5") throw new Error("not a raw PGM file");
  const width = parseInt(tokens[1], 10);
  const height = parseInt(tokens[2], 10);
  const maxval = parseInt(tokens[3], 10);
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  if (bytes.length - pos !== width * height) {
    throw new Error(`payload is ${bytes.length - pos} bytes, expected ${width * height}`);
  }
  const mask = new MaskGrid(height, width);
  for (let i = 0; i < width * height; i++) {
    mask.values[i] = bytes[pos + i] / 255;
  }
  // re-quantize onto the shared grid
  for (let i = 0; i < mask.values.length; i++) {
    mask.values[i] = Math.round(mask.values[i] * GRID) / GRID;
  }
  return mask;
}

/** Base64 of a PNG-free raw export is not enough for the API's inline
 * masks (the service expects an 8-bit single-channel PNG); the DOM layer
 * converts via a canvas. Tests exercise the PGM path, which the CLI's
 * mask loader accepts directly. */
export function toBase64(bytes: Uint8Array): string {
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  // btoa in browsers; Buffer fallback under node for tests
  if (typeof btoa === "function") return btoa(binary);
  return Buffer.from(bytes).toString("base64");
}
