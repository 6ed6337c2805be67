/** DGRD / DPTH binary writers and readers.
 *
 * Layout (little-endian), shared with the alignment library's loader:
 *   magic    4 bytes   "DGRD" or "DPTH"
 *   version  u32       1
 *   rows, cols, dim, patch_size, stride, image_w, image_h   7 x u32
 * followed by rows*cols*dim float32 descriptors then rows*cols float32
 * saliency (DGRD), or image_h*image_w float32 meters (DPTH, with rows/cols
 * mirroring the image dims and dim=patch=stride=1).
 */

import { readFileSync, writeFileSync } from "fs";

export const GRID_MAGIC = "DGRD";
export const DEPTH_MAGIC = "DPTH";
export const FORMAT_VERSION = 1;
const HEADER_BYTES = 4 + 8 * 4;

export interface GridHeader {
  rows: number;
  cols: number;
  dim: number;
  patchSize: number;
  stride: number;
  imageWidth: number;
  imageHeight: number;
}

export interface GridFile extends GridHeader {
  descriptors: Float32Array;
  saliency: Float32Array;
}

function packHeader(magic: string, h: GridHeader): Buffer {
  const buf = Buffer.alloc(HEADER_BYTES);
  buf.write(magic, 0, "ascii");
  const fields = [FORMAT_VERSION, h.rows, h.cols, h.dim, h.patchSize, h.stride, h.imageWidth, h.imageHeight];
  fields.forEach((v, i) => buf.writeUInt32LE(v >>> 0, 4 + 4 * i));
  return buf;
}

export function expectedRows(extent: number, patchSize: number, stride: number): number {
  return 1 + Math.floor((extent - patchSize) / stride);
}

export function writeGrid(path: string, header: GridHeader, descriptors: Float32Array, saliency: Float32Array): void {
  if (header.rows !== expectedRows(header.imageHeight, header.patchSize, header.stride)) {
    throw new Error("rows inconsistent with image height / patch / stride");
  }
  if (header.cols !== expectedRows(header.imageWidth, header.patchSize, header.stride)) {
    throw new Error("cols inconsistent with image width / patch / stride");
  }
  if (descriptors.length !== header.rows * header.cols * header.dim) {
    throw new Error("descriptor payload size mismatch");
  }
  if (saliency.length !== header.rows * header.cols) {
    throw new Error("saliency payload size mismatch");
  }
  writeFileSync(
    path,
    Buffer.concat([
      packHeader(GRID_MAGIC, header),
      Buffer.from(descriptors.buffer, descriptors.byteOffset, descriptors.byteLength),
      Buffer.from(saliency.buffer, saliency.byteOffset, saliency.byteLength),
    ])
  );
}

export function readGrid(path: string): GridFile {
  const buf = readFileSync(path);
  if (buf.length < HEADER_BYTES) throw new Error(`${path}: truncated header`);
  const magic = buf.subarray(0, 4).toString("ascii");
  if (magic !== GRID_MAGIC) throw new Error(`${path}: bad magic ${magic}`);
  const u32 = (i: number) => buf.readUInt32LE(4 + 4 * i);
  if (u32(0) !== FORMAT_VERSION) throw new Error(`${path}: unsupported version ${u32(0)}`);
  const header: GridHeader = {
    rows: u32(1), cols: u32(2), dim: u32(3), patchSize: u32(4),
    stride: u32(5), imageWidth: u32(6), imageHeight: u32(7),
  };
  const nDesc = header.rows * header.cols * header.dim;
  const nSal = header.rows * header.cols;
  if (buf.length !== HEADER_BYTES + 4 * (nDesc + nSal)) throw new Error(`${path}: payload size mismatch`);
  const descriptors = new Float32Array(nDesc);
  const saliency = new Float32Array(nSal);
  for (let i = 0; i < nDesc; i++) descriptors[i] = buf.readFloatLE(HEADER_BYTES + 4 * i);
  for (let i = 0; i < nSal; i++) saliency[i] = buf.readFloatLE(HEADER_BYTES + 4 * nDesc + 4 * i);
  return { ...header, descriptors, saliency };
}

export function writeDepth(path: string, width: number, height: number, meters: Float32Array): void {
  if (meters.length !== width * height) throw new Error("depth payload size mismatch");
  const header: GridHeader = {
    rows: height, cols: width, dim: 1, patchSize: 1, stride: 1,
    imageWidth: width, imageHeight: height,
  };
  writeFileSync(
    path,
    Buffer.concat([
      packHeader(DEPTH_MAGIC, header),
      Buffer.from(meters.buffer, meters.byteOffset, meters.byteLength),
    ])
  );
}

export function readDepth(path: string): { width: number; height: number; meters: Float32Array } {
  const buf = readFileSync(path);
  if (buf.length < HEADER_BYTES) throw new Error(`${path}: truncated header`);
  const magic = buf.subarray(0, 4).toString("ascii");
  if (magic !== DEPTH_MAGIC) throw new Error(`${path}: bad magic ${magic}`);
  const u32 = (i: number) => buf.readUInt32LE(4 + 4 * i);
  const height = u32(1);
  const width = u32(2);
  if (buf.length !== HEADER_BYTES + 4 * width * height) throw new Error(`${path}: payload size mismatch`);
  const meters = new Float32Array(width * height);
  for (let i = 0; i < meters.length; i++) meters[i] = buf.readFloatLE(HEADER_BYTES + 4 * i);
  return { width, height, meters };
}
