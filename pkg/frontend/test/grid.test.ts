import { mkdtempSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { describe, expect, it } from "vitest";

import { expectedRows, readDepth, readGrid, writeDepth, writeGrid } from "../src/grid";

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "grid-"));
}

describe("header arithmetic", () => {
  it("matches the patch-count formula", () => {
    expect(expectedRows(224, 8, 4)).toBe(55);
    expect(expectedRows(480, 16, 16)).toBe(30);
    expect(expectedRows(64, 8, 8)).toBe(8);
  });

  it("rejects inconsistent headers", () => {
    const dir = tmp();
    const header = {
      rows: 3, cols: 4, dim: 2, patchSize: 8, stride: 8, imageWidth: 32, imageHeight: 32,
    };
    // 32px at patch 8 stride 8 gives 4 rows, not 3
    expect(() =>
      writeGrid(join(dir, "bad.dgrd"), header, new Float32Array(3 * 4 * 2), new Float32Array(12))
    ).toThrow(/rows inconsistent/);
  });
});

describe("round trips", () => {
  it("grid write/read preserves header and payload", () => {
    const dir = tmp();
    const header = {
      rows: 4, cols: 5, dim: 3, patchSize: 8, stride: 8, imageWidth: 40, imageHeight: 32,
    };
    const desc = new Float32Array(4 * 5 * 3).map((_, i) => Math.fround(Math.sin(i)));
    // normalize each descriptor row so the file is loader-valid
    for (let t = 0; t < 20; t++) {
      let norm = 0;
      for (let d = 0; d < 3; d++) norm += desc[t * 3 + d] ** 2;
      norm = Math.sqrt(norm) || 1;
      for (let d = 0; d < 3; d++) desc[t * 3 + d] = Math.fround(desc[t * 3 + d] / norm);
    }
    const sal = new Float32Array(20).map((_, i) => i / 19);
    const path = join(dir, "g.dgrd");
    writeGrid(path, header, desc, sal);
    const back = readGrid(path);
    expect(back.rows).toBe(4);
    expect(back.cols).toBe(5);
    expect(back.dim).toBe(3);
    expect(Array.from(back.descriptors)).toEqual(Array.from(desc));
    expect(Array.from(back.saliency)).toEqual(Array.from(sal));
  });

  it("depth write/read preserves meters", () => {
    const dir = tmp();
    const meters = new Float32Array(6 * 4).map((_, i) => (i % 5 === 0 ? 0 : i / 10));
    const path = join(dir, "d.dpth");
    writeDepth(path, 6, 4, meters);
    const back = readDepth(path);
    expect(back.width).toBe(6);
    expect(back.height).toBe(4);
    expect(Array.from(back.meters)).toEqual(Array.from(meters));
  });

  it("rejects wrong magic", () => {
    const dir = tmp();
    const path = join(dir, "mixed");
    writeDepth(path, 2, 2, new Float32Array(4));
    expect(() => readGrid(path)).toThrow(/bad magic/);
  });
});
