/** Netpbm (PPM/PGM) readers.
 *
 * The exporter consumes binary P6 (RGB) and P5 (grayscale) files, 8- or
 * 16-bit. 16-bit P5 doubles as the depth format with big-endian millimeter
 * values, the common convention for 16-bit netpbm payloads.
 */

import { readFileSync, writeFileSync } from "fs";

export interface Image {
  width: number;
  height: number;
  channels: number;
  /** Row-major, channel-interleaved, values scaled to [0, 1]. */
  data: Float64Array;
  maxval: number;
}

function parseHeader(buf: Buffer): { magic: string; dims: number[]; offset: number } {
  let pos = 0;
  const tokens: string[] = [];
  while (tokens.length < 4 && pos < buf.length) {
    // skip whitespace and comments
    while (pos < buf.length) {
      const ch = buf[pos];
      if (ch === 0x23) {
        // '#' comment runs to end of line
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
        pos++;
      } else {
        break;
      }
    }
    let start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (pos > start) tokens.push(buf.subarray(start, pos).toString("ascii"));
  }
  pos++; // exactly one whitespace byte separates the header from the payload
  const [magic, w, h, maxval] = tokens;
  return { magic, dims: [parseInt(w, 10), parseInt(h, 10), parseInt(maxval, 10)], offset: pos };
}

export function readNetpbm(path: string): Image {
  const buf = readFileSync(path);
  const { magic, dims, offset } = parseHeader(buf);
  const [width, height, maxval] = dims;
  if (magic !== "P5" && magic !== "P6") {
    throw new Error(`${path}: unsupported netpbm magic ${magic} (need binary P5 or P6)`);
  }
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 65536)) {
    throw new Error(`${path}: invalid netpbm header`);
  }
  const channels = magic === "P6" ? 3 : 1;
  const n = width * height * channels;
  const wide = maxval > 255;
  const expected = n * (wide ? 2 : 1);
  if (buf.length - offset < expected) {
    throw new Error(`${path}: truncated payload (${buf.length - offset} of ${expected} bytes)`);
  }
  const data = new Float64Array(n);
  if (wide) {
    for (let i = 0; i < n; i++) data[i] = buf.readUInt16BE(offset + 2 * i) / maxval;
  } else {
    for (let i = 0; i < n; i++) data[i] = buf[offset + i] / maxval;
  }
  return { width, height, channels, data, maxval };
}

/** Raw 16-bit values of a P5 file, for depth images in millimeters. */
export function readPgm16Raw(path: string): { width: number; height: number; values: Uint16Array } {
  const buf = readFileSync(path);
  const { magic, dims, offset } = parseHeader(buf);
  const [width, height, maxval] = dims;
  if (magic !== "P5") throw new Error(`${path}: depth images must be binary P5`);
  if (maxval < 256) throw new Error(`${path}: depth images must be 16-bit (maxval > 255)`);
  const n = width * height;
  if (buf.length - offset < 2 * n) throw new Error(`${path}: truncated depth payload`);
  const values = new Uint16Array(n);
  for (let i = 0; i < n; i++) values[i] = buf.readUInt16BE(offset + 2 * i);
  return { width, height, values };
}

export function writePgm16(path: string, width: number, height: number, values: Uint16Array): void {
  const header = Buffer.from(`P5\n${width} ${height}\n65535\n`, "ascii");
  const payload = Buffer.alloc(values.length * 2);
  for (let i = 0; i < values.length; i++) payload.writeUInt16BE(values[i], 2 * i);
  writeFileSync(path, Buffer.concat([header, payload]));
}

export function writePpm(path: string, width: number, height: number, rgb: Uint8Array): void {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  writeFileSync(path, Buffer.concat([header, Buffer.from(rgb)]));
}
